#pragma once

// Tiny experiment configurations shared by the training, checkpoint and
// CLI tests.

#include <filesystem>
#include <random>
#include <string>

#include "synseg/config.hpp"
#include "synseg/phantom.hpp"
#include "synseg/training.hpp"

namespace synseg::testing {

inline ExperimentConfig tiny_config(Variant variant, uint64_t seed = 0) {
  ExperimentConfig c;
  c.data.seed = 7;
  c.data.n_source_scans = 3;
  c.data.n_source_val_scans = 1;
  c.data.n_target_scans = 2;
  c.data.n_target_supervised_scans = 2;
  c.data.n_target_supervised_val_scans = 1;
  c.data.slices_per_scan = 3;
  c.data.image_size = 16;
  c.data.native_size = 16;
  c.train.variant = variant;
  c.train.seed = seed;
  c.train.epochs = 2;
  c.train.steps_per_epoch = 2;
  c.train.eval_every = 1;
  c.train.history_buffer = 3;
  c.train.base_filters = 4;
  c.train.n_res_blocks = 1;
  c.train.disc_filters = 4;
  c.train.disc_layers = 1;
  return c;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("synseg_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& name) : path(scratch_dir(name)) {}
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace synseg::testing
