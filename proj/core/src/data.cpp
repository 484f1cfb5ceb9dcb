#include "synseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "synseg/log.hpp"

namespace synseg {

const char* modality_name(Modality m) { return m == Modality::source ? "source" : "target"; }

Modality parse_modality(const std::string& text) {
  if (text == "source") return Modality::source;
  if (text == "target") return Modality::target;
  throw std::invalid_argument("unknown modality '" + text + "'");
}

void LabelMap::validate() const {
  if (static_cast<size_t>(height) * width != classes.size()) throw std::invalid_argument("label map size mismatch");
  for (const int32_t c : classes) {
    if (c < 0 || c >= n_classes) throw std::invalid_argument("label value " + std::to_string(c) + " out of range");
  }
}

double percentile(std::vector<float> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (static_cast<double>(values[hi]) - values[lo]);
}

namespace {

std::vector<IntensityImage> slices_from(const RawVolume& volume, const std::vector<float>& normalized) {
  std::vector<IntensityImage> out;
  out.reserve(static_cast<size_t>(volume.depth));
  const size_t plane = static_cast<size_t>(volume.height) * volume.width;
  for (int z = 0; z < volume.depth; ++z) {
    IntensityImage img;
    img.height = volume.height;
    img.width = volume.width;
    img.pixels.assign(normalized.begin() + static_cast<std::ptrdiff_t>(z * plane),
                      normalized.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane));
    img.modality = volume.modality;
    img.spacing = volume.spacing;
    img.scan_id = volume.scan_id;
    img.slice_index = z;
    out.push_back(std::move(img));
  }
  return out;
}

void check_volume(const RawVolume& volume) {
  if (volume.depth <= 0 || volume.height <= 0 || volume.width <= 0 ||
      volume.voxels.size() != static_cast<size_t>(volume.depth) * volume.height * volume.width) {
    throw std::invalid_argument("raw volume is empty or inconsistent");
  }
}

}  // namespace

std::vector<IntensityImage> normalize_percentile(const RawVolume& volume) {
  check_volume(volume);
  const double lo = percentile(volume.voxels, kPercentileLow);
  const double hi = percentile(volume.voxels, kPercentileHigh);
  std::vector<float> out(volume.voxels.size());
  if (!(hi > lo)) {
    warn("constant intensity window in scan '" + volume.scan_id + "'; mapping to 0.5");
    std::fill(out.begin(), out.end(), 0.5f);
  } else {
    const double inv = 1.0 / (hi - lo);
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<float>(std::clamp((volume.voxels[i] - lo) * inv, 0.0, 1.0));
    }
  }
  return slices_from(volume, out);
}

float normalize_hu_value(float hu) { return (std::clamp(hu, -1000.0f, 1000.0f) + 1000.0f) / 2000.0f; }

std::vector<IntensityImage> normalize_hu(const RawVolume& volume) {
  check_volume(volume);
  std::vector<float> out(volume.voxels.size());
  std::transform(volume.voxels.begin(), volume.voxels.end(), out.begin(), normalize_hu_value);
  return slices_from(volume, out);
}

std::vector<IntensityImage> normalize(const RawVolume& volume, Normalization mode) {
  return mode == Normalization::percentile ? normalize_percentile(volume) : normalize_hu(volume);
}

IntensityImage resample_bilinear(const IntensityImage& img, int out_h, int out_w) {
  if (out_h < 2 || out_w < 2) throw std::invalid_argument("resample target must be at least 2x2");
  if (img.height == out_h && img.width == out_w) return img;
  IntensityImage out = img;
  out.height = out_h;
  out.width = out_w;
  out.pixels.assign(static_cast<size_t>(out_h) * out_w, 0.0f);
  out.spacing.row_mm = img.spacing.row_mm * static_cast<float>(img.height) / static_cast<float>(out_h);
  out.spacing.col_mm = img.spacing.col_mm * static_cast<float>(img.width) / static_cast<float>(out_w);
  const double sy = img.height > 1 ? static_cast<double>(img.height - 1) / (out_h - 1) : 0.0;
  const double sx = img.width > 1 ? static_cast<double>(img.width - 1) / (out_w - 1) : 0.0;
  for (int r = 0; r < out_h; ++r) {
    const double fy = r * sy;
    const int y0 = std::min(static_cast<int>(std::floor(fy)), img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = c * sx;
      const int x0 = std::min(static_cast<int>(std::floor(fx)), img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double top = img.at(y0, x0) + wx * (img.at(y0, x1) - img.at(y0, x0));
      const double bottom = img.at(y1, x0) + wx * (img.at(y1, x1) - img.at(y1, x0));
      out.pixels[static_cast<size_t>(r) * out_w + c] = static_cast<float>(top + wy * (bottom - top));
    }
  }
  return out;
}

LabelMap resample_nearest(const LabelMap& label, int out_h, int out_w) {
  if (out_h < 2 || out_w < 2) throw std::invalid_argument("resample target must be at least 2x2");
  if (label.height == out_h && label.width == out_w) return label;
  LabelMap out = label;
  out.height = out_h;
  out.width = out_w;
  out.classes.assign(static_cast<size_t>(out_h) * out_w, 0);
  out.spacing.row_mm = label.spacing.row_mm * static_cast<float>(label.height) / static_cast<float>(out_h);
  out.spacing.col_mm = label.spacing.col_mm * static_cast<float>(label.width) / static_cast<float>(out_w);
  const double sy = static_cast<double>(label.height - 1) / (out_h - 1);
  const double sx = static_cast<double>(label.width - 1) / (out_w - 1);
  for (int r = 0; r < out_h; ++r) {
    const int y = std::clamp(static_cast<int>(std::floor(r * sy + 0.5)), 0, label.height - 1);
    for (int c = 0; c < out_w; ++c) {
      const int x = std::clamp(static_cast<int>(std::floor(c * sx + 0.5)), 0, label.width - 1);
      out.classes[static_cast<size_t>(r) * out_w + c] = label.at(y, x);
    }
  }
  return out;
}

Tensor images_to_tensor(const std::vector<const IntensityImage*>& images) {
  if (images.empty()) throw std::invalid_argument("no images to batch");
  const int h = images.front()->height, w = images.front()->width;
  std::vector<float> data;
  data.reserve(images.size() * static_cast<size_t>(h) * w);
  for (const auto* img : images) {
    if (img->height != h || img->width != w) throw ShapeError("batch images differ in size");
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor::from_data({static_cast<int64_t>(images.size()), 1, h, w}, std::move(data));
}

Tensor image_to_tensor(const IntensityImage& image) { return images_to_tensor({&image}); }

UnpairedSampler::UnpairedSampler(std::vector<size_t> source_slice_counts, std::vector<size_t> target_slice_counts,
                                 int batch, Rng rng)
    : batch_(batch), rng_(std::move(rng)) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  for (size_t s = 0; s < source_slice_counts.size(); ++s) {
    for (size_t z = 0; z < source_slice_counts[s]; ++z) source_index_.push_back({s, z});
  }
  for (size_t s = 0; s < target_slice_counts.size(); ++s) {
    for (size_t z = 0; z < target_slice_counts[s]; ++z) target_index_.push_back({s, z});
  }
  if (source_index_.empty() || target_index_.empty()) throw std::invalid_argument("sampler pool is empty");
}

SampledBatch UnpairedSampler::next() {
  SampledBatch b;
  std::uniform_int_distribution<size_t> pick_source(0, source_index_.size() - 1);
  std::uniform_int_distribution<size_t> pick_target(0, target_index_.size() - 1);
  for (int i = 0; i < batch_; ++i) {
    b.source.push_back(source_index_[pick_source(rng_)]);
    b.target.push_back(target_index_[pick_target(rng_)]);
  }
  return b;
}

SlicePoolSampler::SlicePoolSampler(std::vector<size_t> slice_counts, int batch, Rng rng)
    : batch_(batch), rng_(std::move(rng)) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  for (size_t s = 0; s < slice_counts.size(); ++s) {
    for (size_t z = 0; z < slice_counts[s]; ++z) index_.push_back({s, z});
  }
  if (index_.empty()) throw std::invalid_argument("sampler pool is empty");
}

std::vector<SliceRef> SlicePoolSampler::next() {
  std::uniform_int_distribution<size_t> pick(0, index_.size() - 1);
  std::vector<SliceRef> out;
  for (int i = 0; i < batch_; ++i) out.push_back(index_[pick(rng_)]);
  return out;
}

std::vector<size_t> slice_counts(const std::vector<Scan>& scans) {
  std::vector<size_t> counts;
  counts.reserve(scans.size());
  for (const auto& s : scans) counts.push_back(s.slices.size());
  return counts;
}

}  // namespace synseg
