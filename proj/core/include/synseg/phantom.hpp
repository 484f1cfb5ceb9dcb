#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "synseg/data.hpp"
#include "synseg/rng.hpp"

namespace synseg {

// Procedural two-modality stand-in for unpaired clinical scans. Each scan
// is a stack of slices through a random "shape world": a body disc, one
// large organ ellipse (the segmentation target) and a few confounder
// blobs. Source scans render tissue values through fA(t) = t with a body
// texture; target scans through fB(t) = 1 - t^gamma under a smooth
// multiplicative bias field. Both get Gaussian noise.
struct PhantomSpec {
  uint64_t seed = 0;
  int n_source_scans = 20;
  int n_source_val_scans = 4;
  int n_target_scans = 8;
  int n_target_supervised_scans = 8;
  int n_target_supervised_val_scans = 2;
  int slices_per_scan = 16;
  int image_size = 64;   // network resolution
  int native_size = 64;  // acquisition resolution before resampling
  float field_of_view_mm = 240.0f;
  int n_classes = 2;     // 2: background/organ; 3 adds a body-mask class

  // Radii as fractions of the image side.
  float organ_radius_min = 0.12f;
  float organ_radius_max = 0.20f;
  float organ_min_scale = 0.6f;  // smallest cross-section scale across slices
  int n_confounders = 3;
  float confounder_radius_min = 0.04f;
  float confounder_radius_max = 0.08f;

  float body_level = 0.45f;
  float organ_level = 0.85f;
  float confounder_level = 0.65f;
  float texture_amplitude = 0.08f;
  float target_gamma = 1.5f;
  float bias_strength = 0.15f;
  float noise_std = 0.03f;

  void validate() const;
  // Canonical key=value text (used for hashing and manifests).
  std::string canonical() const;
};

struct PhantomRawScan {
  RawVolume raw;
  std::vector<LabelMap> labels;  // native resolution
  Normalization normalization = Normalization::percentile;
};

// Renders one scan at native resolution. Source scans are MR-like
// arbitrary units; target scans are CT-like Hounsfield units.
PhantomRawScan phantom_raw_scan(const PhantomSpec& spec, Modality modality, const std::string& scan_id, Rng& rng,
                                int native_size);

// Normalizes and resamples a raw scan to spec.image_size.
Scan preprocess_scan(const PhantomRawScan& raw, int image_size, bool keep_labels);

// The only holder of target-modality labels. Training code for the
// synthetic-segmentation variants never receives one of these.
struct EvalStore {
  std::vector<Scan> target_eval;       // labeled copies of the target training subjects
  std::vector<Scan> supervised_train;  // extra labeled target subjects (supervised baseline)
  std::vector<Scan> supervised_val;
};

struct PhantomDataset {
  std::vector<Scan> source_train;
  std::vector<Scan> source_val;
  std::vector<Scan> target_train;  // images only
  EvalStore eval;
};

PhantomDataset phantom_generate(const PhantomSpec& spec);

}  // namespace synseg
