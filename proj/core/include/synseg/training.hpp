#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "synseg/checkpoint.hpp"
#include "synseg/config.hpp"
#include "synseg/data.hpp"
#include "synseg/networks.hpp"
#include "synseg/optim.hpp"
#include "synseg/phantom.hpp"

namespace synseg {

// A non-finite loss; carries the global step index at which it appeared.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, uint64_t step) : std::runtime_error(what), step_(step) {}
  uint64_t step() const { return step_; }

 private:
  uint64_t step_;
};

// What a variant is allowed to see. Source scans carry labels; target
// training scans never do. The supervised and target_eval sets are only
// filled for the variants/policies that are entitled to them.
struct TrainingData {
  std::vector<Scan> source_train;
  std::vector<Scan> source_val;
  std::vector<Scan> target_train;
  std::vector<Scan> supervised_train;
  std::vector<Scan> supervised_val;
  std::vector<Scan> target_eval;
};

TrainingData training_data_for(const PhantomDataset& ds, const TrainConfig& cfg);
TrainingData load_training_data(const std::filesystem::path& root, const ExperimentConfig& cfg);

// Intensities in [0, 1] map to the networks' [-1, 1] range and back.
Tensor to_network_space(const Tensor& images01);
std::vector<float> from_network_space(std::span<const float> values);

// Fake-image history for discriminator updates. Until full, every query
// image is stored and returned; afterwards each query image is, with
// probability 1/2, swapped for a uniformly chosen stored one.
class HistoryPool {
 public:
  HistoryPool() = default;
  HistoryPool(int capacity, Rng rng) : capacity_(capacity), rng_(std::move(rng)) {}

  Tensor query(const Tensor& images);  // images N,C,H,W (detached)

  int capacity() const { return capacity_; }
  const std::vector<std::vector<float>>& stored() const { return stored_; }
  void store(Checkpoint& ckpt, const std::string& prefix) const;
  void load(const Checkpoint& ckpt, const std::string& prefix);

 private:
  int capacity_ = 0;
  Rng rng_;
  std::vector<std::vector<float>> stored_;
};

struct StepLosses {
  std::array<double, 5> parts{};     // lambda order; absent terms are 0
  std::array<bool, 5> present{};
  double total = 0.0;                // sum of lambda_k * parts[k] over present terms
  std::optional<double> d1, d2;      // discriminator losses
};

// The joint training graph for one variant. TWO_STAGE runs the
// CycleGAN stage for the first cfg.epochs epochs and the segmenter stage
// for the next cfg.epochs.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, const TrainingData& data);

  StepLosses step();

  int total_epochs() const;
  int steps_per_epoch() const;
  int stage() const { return stage_; }
  uint64_t global_step() const { return global_step_; }
  int epoch() const { return epoch_; }
  void finish_epoch();

  // TWO_STAGE: true once the CycleGAN stage has run all its epochs. The
  // segmenter stage starts from G1 as stored in a stage-1 checkpoint.
  bool needs_stage_transition() const;
  void begin_segmenter_stage(const Checkpoint& stage1);

  // Mean per-subject organ DSC on the selection split, or nullopt when the
  // current stage has no segmenter.
  std::optional<double> validate() const;

  Checkpoint state() const;           // everything needed to resume
  Checkpoint model_checkpoint() const;  // networks only
  void restore(const Checkpoint& ckpt);

  const ExperimentConfig& config() const { return cfg_; }
  Network* g1() { return ptr(g1_); }
  Network* g2() { return ptr(g2_); }
  Network* d1() { return ptr(d1_); }
  Network* d2() { return ptr(d2_); }
  Network* seg() { return ptr(seg_); }
  const Network* seg() const { return seg_ ? &*seg_ : nullptr; }
  const Network* g1() const { return g1_ ? &*g1_ : nullptr; }
  size_t synthetic_slice_count() const;

 private:
  static Network* ptr(std::optional<Network>& n) { return n ? &*n : nullptr; }
  StepLosses step_adversarial();
  StepLosses step_supervised();
  void update_discriminator(Network& d, AdamState& opt, HistoryPool& pool, const Tensor& real, const Tensor& fake,
                            double& out);
  void build_segmenter_stage();

  ExperimentConfig cfg_;
  const TrainingData& data_;
  std::optional<Network> g1_, g2_, d1_, d2_, seg_;
  AdamState opt_g1_, opt_g2_, opt_d1_, opt_d2_, opt_seg_;
  HistoryPool pool1_, pool2_;
  std::optional<UnpairedSampler> unpaired_;
  std::optional<SlicePoolSampler> pool_sampler_;
  std::vector<Scan> synthetic_;  // TWO_STAGE: G1(x) for every source slice, with its label
  int stage_ = 1;
  int epoch_ = 0;
  uint64_t global_step_ = 0;
};

// Argmax segmentation of preprocessed slices at network size.
std::vector<LabelMap> segment_slices(const Network& seg, const std::vector<IntensityImage>& slices, int n_classes);

// Argmax over channels of an N,C,H,W score tensor.
std::vector<LabelMap> argmax_labels(const Tensor& scores, int n_classes, Spacing spacing);

// Test-time pipeline: normalize, resample to the network size (bilinear),
// segment, resample back to native size (nearest).
std::vector<LabelMap> infer(const Network& seg, const RawVolume& raw, Normalization mode, int network_size,
                            int n_classes);

// Index of the highest score; ties go to the earliest entry.
size_t select_epoch(const std::vector<double>& scores);

struct EpochRecord {
  int epoch = 0;
  int stage = 1;
  std::optional<double> val_dsc;
  std::string checkpoint;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::filesystem::path dataset_root;  // recorded in the manifest only
  uint64_t dataset_hash = 0;
  bool resume = false;
  // Stop after this many epochs in this invocation (simulated interrupt).
  std::optional<int> stop_after_epochs;
  std::function<void(const std::string&)> progress;
  // Extra "key=value" lines for run_manifest.txt.
  std::vector<std::string> manifest_notes;
};

struct RunResult {
  std::vector<EpochRecord> epochs;
  std::optional<int> best_epoch;
  bool finished = false;
  uint64_t steps = 0;
};

// Runs (or resumes) a full training job, writing into out_dir:
//   loss.csv, state.ssn (resume state), epoch_NNN.ssn (model checkpoints),
//   best.ssn, final.ssn, run_manifest.txt.
RunResult run_training(const ExperimentConfig& cfg, const TrainingData& data, const RunOptions& options);

// Network rebuilt from a model checkpoint's embedded config.
struct LoadedModel {
  ExperimentConfig cfg;
  Checkpoint ckpt;
  std::optional<Network> seg, g1, g2;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace synseg
