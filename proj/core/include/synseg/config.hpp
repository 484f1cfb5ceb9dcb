#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "synseg/losses.hpp"
#include "synseg/networks.hpp"
#include "synseg/optim.hpp"
#include "synseg/phantom.hpp"

namespace synseg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant { synseg, hc, two_stage, seg_only };

const char* variant_name(Variant v);  // "SYNSEG", "HC", "TWO_STAGE", "SEG_ONLY"
Variant parse_variant(const std::string& text);

// Which labeled data picks the best epoch. source_val segments G1(x) on a
// held-out source split; target_eval peeks at target labels.
enum class Selection { source_val, target_eval };

struct TrainConfig {
  Variant variant = Variant::synseg;
  uint64_t seed = 0;
  int epochs = 100;
  int steps_per_epoch = 0;  // 0: one step per training slice of the driving pool
  int batch = 1;
  LossWeights weights;
  float lr_gen = kGeneratorLr;
  float lr_disc = kDiscriminatorLr;
  AdversarialForm adversarial = AdversarialForm::log;
  int history_buffer = 50;
  int eval_every = 10;
  Selection selection = Selection::source_val;
  std::vector<float> class_weights;  // empty: uniform

  int base_filters = 16;
  int n_res_blocks = 3;
  int disc_filters = 16;
  int disc_layers = 3;

  int organ_class = 1;
  double slice_thickness_mm = 5.0;

  void validate(int n_classes) const;
};

// Everything one experiment needs: the dataset recipe and the training setup.
struct ExperimentConfig {
  PhantomSpec data;
  TrainConfig train;

  void validate() const;
  // Sorted key = value lines; the source of the config hash.
  std::string canonical() const;
  uint64_t hash() const;

  int image_size() const { return data.image_size; }
  int n_classes() const { return data.n_classes; }
  GeneratorConfig generator_config() const;
  GeneratorConfig segmenter_config() const;
};

// Flat "section.key = value" text; '#' starts a comment. Unknown keys and
// malformed values raise ConfigError. Missing keys keep their defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies one "section.key=value" override.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

}  // namespace synseg
