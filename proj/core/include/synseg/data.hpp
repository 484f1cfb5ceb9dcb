#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "synseg/rng.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

enum class Modality { source, target };

const char* modality_name(Modality m);
Modality parse_modality(const std::string& text);

struct Spacing {
  float row_mm = 1.0f;
  float col_mm = 1.0f;
};

// A preprocessed 2-D slice with intensities in [0, 1].
struct IntensityImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  Modality modality = Modality::source;
  Spacing spacing;
  std::string scan_id;
  int slice_index = 0;

  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int32_t> classes;
  int n_classes = 2;
  Spacing spacing;

  int32_t at(int r, int c) const { return classes[static_cast<size_t>(r) * width + c]; }
  void validate() const;
};

// Unnormalized scanner intensities (arbitrary units or HU), slice-major.
struct RawVolume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::vector<float> voxels;
  Spacing spacing;
  Modality modality = Modality::source;
  std::string scan_id;

  std::span<const float> slice(int z) const {
    return {voxels.data() + static_cast<size_t>(z) * height * width, static_cast<size_t>(height) * width};
  }
};

// One subject: a stack of slices with optional labels.
struct Scan {
  std::string scan_id;
  Modality modality = Modality::source;
  std::vector<IntensityImage> slices;
  std::vector<LabelMap> labels;  // empty when unlabeled
};

// Linear-interpolated quantile (q in [0, 1]) of an unsorted sample.
double percentile(std::vector<float> values, double q);

inline constexpr double kPercentileLow = 0.025;
inline constexpr double kPercentileHigh = 0.975;

// Volume-level 2.5/97.5 percentile window mapped to [0, 1] and clamped.
// A constant volume maps to 0.5 everywhere (with a warning).
std::vector<IntensityImage> normalize_percentile(const RawVolume& volume);

// HU clamped to [-1000, 1000], then (v + 1000) / 2000.
std::vector<IntensityImage> normalize_hu(const RawVolume& volume);
float normalize_hu_value(float hu);

enum class Normalization { percentile, hounsfield };

std::vector<IntensityImage> normalize(const RawVolume& volume, Normalization mode);

// Align-corners bilinear resampling; spacing scales with the size ratio.
IntensityImage resample_bilinear(const IntensityImage& img, int out_h, int out_w);

// Align-corners nearest-neighbour resampling; never introduces new classes.
LabelMap resample_nearest(const LabelMap& label, int out_h, int out_w);

// N,1,H,W tensor from equally sized images.
Tensor images_to_tensor(const std::vector<const IntensityImage*>& images);
Tensor image_to_tensor(const IntensityImage& image);

struct SliceRef {
  size_t scan = 0;
  size_t slice = 0;
};

struct SampledBatch {
  std::vector<SliceRef> source;
  std::vector<SliceRef> target;
};

// Independent uniform draws over all slices of all scans in each pool.
// Scans with more slices are proportionally more likely to be drawn.
class UnpairedSampler {
 public:
  UnpairedSampler(std::vector<size_t> source_slice_counts, std::vector<size_t> target_slice_counts, int batch,
                  Rng rng);

  SampledBatch next();

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  size_t source_pool_size() const { return source_index_.size(); }
  size_t target_pool_size() const { return target_index_.size(); }

 private:
  std::vector<SliceRef> source_index_;
  std::vector<SliceRef> target_index_;
  int batch_;
  Rng rng_;
};

// Uniform draws over a single pool (supervised-only training).
class SlicePoolSampler {
 public:
  SlicePoolSampler(std::vector<size_t> slice_counts, int batch, Rng rng);

  std::vector<SliceRef> next();

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  std::vector<SliceRef> index_;
  int batch_;
  Rng rng_;
};

std::vector<size_t> slice_counts(const std::vector<Scan>& scans);

}  // namespace synseg
