#include "synseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "synseg/dataset_io.hpp"
#include "synseg/losses.hpp"
#include "synseg/metrics.hpp"

namespace synseg {

namespace fs = std::filesystem;

namespace {

void check_scans(const std::vector<Scan>& scans, int size, int n_classes, bool need_labels, const char* what) {
  for (const auto& s : scans) {
    for (const auto& img : s.slices) {
      if (img.height != size || img.width != size) {
        throw DataError(std::string(what) + " scan " + s.scan_id + " has " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " slices; config expects " + std::to_string(size));
      }
    }
    if (need_labels && s.labels.size() != s.slices.size()) {
      throw DataError(std::string(what) + " scan " + s.scan_id + " lacks labels");
    }
    for (const auto& l : s.labels) {
      if (l.n_classes != n_classes) throw DataError(std::string(what) + " labels disagree with the class count");
    }
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ssn", epoch);
  return buf;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Tensor batch_tensor(const std::vector<Scan>& scans, const std::vector<SliceRef>& refs) {
  std::vector<const IntensityImage*> imgs;
  for (const auto& r : refs) imgs.push_back(&scans[r.scan].slices[r.slice]);
  return to_network_space(images_to_tensor(imgs));
}

std::vector<int32_t> batch_labels(const std::vector<Scan>& scans, const std::vector<SliceRef>& refs) {
  std::vector<int32_t> out;
  for (const auto& r : refs) {
    const auto& c = scans[r.scan].labels.at(r.slice).classes;
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

void require_finite(double v, const char* what, uint64_t step) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss at step " + std::to_string(step), step);
}

}  // namespace

TrainingData training_data_for(const PhantomDataset& ds, const TrainConfig& cfg) {
  TrainingData d;
  if (cfg.variant == Variant::seg_only) {
    d.supervised_train = ds.eval.supervised_train;
    d.supervised_val = ds.eval.supervised_val;
    return d;
  }
  d.source_train = ds.source_train;
  d.source_val = ds.source_val;
  d.target_train = ds.target_train;
  if (cfg.selection == Selection::target_eval) d.target_eval = ds.eval.target_eval;
  return d;
}

TrainingData load_training_data(const fs::path& root, const ExperimentConfig& cfg) {
  const DatasetInfo info = read_dataset_info(root);
  if (info.image_size != cfg.image_size() || info.n_classes != cfg.n_classes()) {
    throw DataError("dataset " + root.string() + " is " + std::to_string(info.image_size) + "px/" +
                    std::to_string(info.n_classes) + " classes; config expects " + std::to_string(cfg.image_size()) +
                    "px/" + std::to_string(cfg.n_classes()) + " classes");
  }
  const int c = cfg.n_classes();
  TrainingData d;
  if (cfg.train.variant == Variant::seg_only) {
    d.supervised_train = load_split(root, kManifestSupervisedTrain, c);
    d.supervised_val = load_split(root, kManifestSupervisedVal, c);
    return d;
  }
  d.source_train = load_split(root, kManifestSourceTrain, c);
  d.source_val = load_split(root, kManifestSourceVal, c);
  d.target_train = load_split(root, kManifestTargetTrain, c);
  if (cfg.train.selection == Selection::target_eval) d.target_eval = load_split(root, kManifestTargetEval, c);
  return d;
}

Tensor to_network_space(const Tensor& images01) {
  std::vector<float> v(images01.data().begin(), images01.data().end());
  for (float& x : v) x = 2.0f * x - 1.0f;
  return Tensor::from_data(images01.shape(), std::move(v));
}

std::vector<float> from_network_space(std::span<const float> values) {
  std::vector<float> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = std::clamp(0.5f * (values[i] + 1.0f), 0.0f, 1.0f);
  return out;
}

Tensor HistoryPool::query(const Tensor& images) {
  if (capacity_ == 0) return images.detach();
  const int64_t n = images.dim(0);
  const size_t per = static_cast<size_t>(images.numel() / n);
  std::vector<float> out;
  out.reserve(static_cast<size_t>(images.numel()));
  const auto src = images.data();
  for (int64_t i = 0; i < n; ++i) {
    std::vector<float> img(src.begin() + static_cast<std::ptrdiff_t>(i * per),
                           src.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    if (static_cast<int>(stored_.size()) < capacity_) {
      stored_.push_back(img);
    } else if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < 0.5) {
      const size_t j = std::uniform_int_distribution<size_t>(0, stored_.size() - 1)(rng_);
      std::swap(stored_[j], img);
    }
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor::from_data(images.shape(), std::move(out));
}

void HistoryPool::store(Checkpoint& ckpt, const std::string& prefix) const {
  ckpt.meta[prefix + ".rng"] = rng_state(rng_);
  ckpt.meta[prefix + ".size"] = std::to_string(stored_.size());
  for (size_t i = 0; i < stored_.size(); ++i) {
    char idx[32];
    std::snprintf(idx, sizeof idx, ".%05zu", i);
    ckpt.arrays[prefix + idx] = {{static_cast<int64_t>(stored_[i].size())}, stored_[i]};
  }
}

void HistoryPool::load(const Checkpoint& ckpt, const std::string& prefix) {
  const auto rng_it = ckpt.meta.find(prefix + ".rng");
  const auto size_it = ckpt.meta.find(prefix + ".size");
  if (rng_it == ckpt.meta.end() || size_it == ckpt.meta.end()) throw CheckpointError("checkpoint lacks " + prefix);
  restore_rng_state(rng_, rng_it->second);
  stored_.clear();
  const size_t n = std::stoul(size_it->second);
  for (size_t i = 0; i < n; ++i) {
    char idx[32];
    std::snprintf(idx, sizeof idx, ".%05zu", i);
    const auto it = ckpt.arrays.find(prefix + idx);
    if (it == ckpt.arrays.end()) throw CheckpointError("checkpoint lacks " + prefix + idx);
    stored_.push_back(it->second.data);
  }
}

Trainer::Trainer(ExperimentConfig cfg, const TrainingData& data) : cfg_(std::move(cfg)), data_(data) {
  cfg_.validate();
  const TrainConfig& t = cfg_.train;
  const int size = cfg_.image_size(), c = cfg_.n_classes();
  const uint64_t seed = t.seed;
  auto init = [seed](const char* name) { return make_stream(seed, name); };

  if (t.variant == Variant::seg_only) {
    if (data_.supervised_train.empty()) throw DataError("SEG_ONLY needs labeled target scans");
    check_scans(data_.supervised_train, size, c, true, "supervised");
    check_scans(data_.supervised_val, size, c, true, "supervised validation");
    Rng r = init("init.Seg");
    seg_ = build_segmenter(cfg_.segmenter_config(), r);
    opt_seg_ = AdamState(*seg_, {t.lr_gen});
    pool_sampler_.emplace(slice_counts(data_.supervised_train), t.batch, init("sampler"));
    return;
  }

  if (data_.source_train.empty() || data_.target_train.empty()) throw DataError("need source and target training scans");
  check_scans(data_.source_train, size, c, true, "source");
  check_scans(data_.source_val, size, c, true, "source validation");
  check_scans(data_.target_train, size, c, false, "target");
  for (const auto& s : data_.target_train) {
    if (!s.labels.empty()) throw DataError("target training scan " + s.scan_id + " carries labels");
  }
  check_scans(data_.target_eval, size, c, true, "target evaluation");

  Rng rg1 = init("init.G1"), rd1 = init("init.D1");
  g1_ = build_generator(cfg_.generator_config(), rg1);
  d1_ = build_discriminator(t.disc_filters, t.disc_layers, rd1);
  opt_g1_ = AdamState(*g1_, {t.lr_gen});
  opt_d1_ = AdamState(*d1_, {t.lr_disc});
  pool1_ = HistoryPool(t.history_buffer, init("pool.D1"));
  if (t.variant != Variant::hc) {
    Rng rg2 = init("init.G2"), rd2 = init("init.D2");
    g2_ = build_generator(cfg_.generator_config(), rg2);
    d2_ = build_discriminator(t.disc_filters, t.disc_layers, rd2);
    opt_g2_ = AdamState(*g2_, {t.lr_gen});
    opt_d2_ = AdamState(*d2_, {t.lr_disc});
    pool2_ = HistoryPool(t.history_buffer, init("pool.D2"));
  }
  if (t.variant != Variant::two_stage) {
    Rng rs = init("init.Seg");
    seg_ = build_segmenter(cfg_.segmenter_config(), rs);
    opt_seg_ = AdamState(*seg_, {t.lr_gen});
  }
  unpaired_.emplace(slice_counts(data_.source_train), slice_counts(data_.target_train), t.batch, init("sampler"));
}

int Trainer::total_epochs() const {
  return cfg_.train.variant == Variant::two_stage ? 2 * cfg_.train.epochs : cfg_.train.epochs;
}

int Trainer::steps_per_epoch() const {
  if (cfg_.train.steps_per_epoch > 0) return cfg_.train.steps_per_epoch;
  const auto& pool = cfg_.train.variant == Variant::seg_only ? data_.supervised_train : data_.source_train;
  size_t slices = 0;
  for (const auto& s : pool) slices += s.slices.size();
  return static_cast<int>((slices + cfg_.train.batch - 1) / cfg_.train.batch);
}

StepLosses Trainer::step() {
  StepLosses out = (cfg_.train.variant == Variant::seg_only || stage_ == 2) ? step_supervised() : step_adversarial();
  ++global_step_;
  return out;
}

void Trainer::update_discriminator(Network& d, AdamState& opt, HistoryPool& pool, const Tensor& real,
                                   const Tensor& fake, double& out) {
  d.set_trainable(true);
  d.zero_grad();
  const Tensor replay = pool.query(fake);
  const Tensor loss = gan_loss_discriminator(d.forward(real), d.forward(replay), cfg_.train.adversarial);
  out = loss.item();
  require_finite(out, "discriminator", global_step_);
  loss.backward();
  opt.step(d);
}

StepLosses Trainer::step_adversarial() {
  const TrainConfig& t = cfg_.train;
  const SampledBatch b = unpaired_->next();
  const Tensor x = batch_tensor(data_.source_train, b.source);
  const Tensor y = batch_tensor(data_.target_train, b.target);

  // Phase 1: generators (and segmenter) against frozen discriminators.
  d1_->set_trainable(false);
  if (d2_) d2_->set_trainable(false);
  g1_->zero_grad();
  if (g2_) g2_->zero_grad();
  if (seg_) seg_->zero_grad();

  LossParts parts;
  const Tensor fake_t = g1_->forward(x);
  parts.gan_source_to_target = gan_loss_generator(d1_->forward(fake_t), t.adversarial);
  Tensor fake_s;
  if (g2_) {
    parts.cycle_source = cycle_loss(g2_->forward(fake_t), x);
    fake_s = g2_->forward(y);
    parts.gan_target_to_source = gan_loss_generator(d2_->forward(fake_s), t.adversarial);
    parts.cycle_target = cycle_loss(g1_->forward(fake_s), y);
  }
  if (seg_) {
    const auto labels = batch_labels(data_.source_train, b.source);
    parts.segmentation = seg_loss(seg_->forward(fake_t), labels, t.class_weights);
  }
  const Tensor total = total_loss(parts, t.weights);

  StepLosses out;
  const std::array<const Tensor*, 5> terms{&parts.gan_source_to_target, &parts.gan_target_to_source,
                                           &parts.cycle_source, &parts.cycle_target, &parts.segmentation};
  const auto lambdas = t.weights.as_array();
  for (size_t k = 0; k < 5; ++k) {
    if (!terms[k]->defined()) continue;
    out.present[k] = true;
    out.parts[k] = terms[k]->item();
    out.total += static_cast<double>(lambdas[k]) * out.parts[k];
  }
  require_finite(out.total, "generator", global_step_);
  total.backward();
  opt_g1_.step(*g1_);
  if (g2_) opt_g2_.step(*g2_);
  if (seg_) opt_seg_.step(*seg_);

  // Phase 2: discriminators on real images and replayed fakes.
  double l1 = 0.0, l2 = 0.0;
  update_discriminator(*d1_, opt_d1_, pool1_, y, fake_t.detach(), l1);
  out.d1 = l1;
  if (d2_) {
    update_discriminator(*d2_, opt_d2_, pool2_, x, fake_s.detach(), l2);
    out.d2 = l2;
  }
  return out;
}

StepLosses Trainer::step_supervised() {
  const auto& pool = cfg_.train.variant == Variant::seg_only ? data_.supervised_train : synthetic_;
  const auto refs = pool_sampler_->next();
  const Tensor x = batch_tensor(pool, refs);
  const auto labels = batch_labels(pool, refs);
  seg_->zero_grad();
  LossParts parts;
  parts.segmentation = seg_loss(seg_->forward(x), labels, cfg_.train.class_weights);
  const Tensor total = total_loss(parts, cfg_.train.weights);
  StepLosses out;
  out.present[4] = true;
  out.parts[4] = parts.segmentation.item();
  out.total = static_cast<double>(cfg_.train.weights.segmentation) * out.parts[4];
  require_finite(out.total, "segmentation", global_step_);
  total.backward();
  opt_seg_.step(*seg_);
  return out;
}

void Trainer::finish_epoch() { ++epoch_; }

bool Trainer::needs_stage_transition() const {
  return cfg_.train.variant == Variant::two_stage && stage_ == 1 && epoch_ == cfg_.train.epochs;
}

void Trainer::begin_segmenter_stage(const Checkpoint& stage1) {
  if (cfg_.train.variant != Variant::two_stage) throw std::logic_error("only TWO_STAGE has a segmenter stage");
  if (!stage1.has_network("G1")) throw CheckpointError("segmenter stage needs a stage-1 checkpoint with G1");
  load_network(stage1, "G1", *g1_);
  build_segmenter_stage();
}

void Trainer::build_segmenter_stage() {
  stage_ = 2;
  g2_.reset();
  d1_.reset();
  d2_.reset();
  pool1_ = HistoryPool();
  pool2_ = HistoryPool();
  unpaired_.reset();
  g1_->set_trainable(false);

  synthetic_.clear();
  NoGradGuard no_grad;
  for (const auto& scan : data_.source_train) {
    std::vector<const IntensityImage*> imgs;
    for (const auto& s : scan.slices) imgs.push_back(&s);
    const Tensor fake = g1_->forward(to_network_space(images_to_tensor(imgs)));
    const auto v = from_network_space(fake.data());
    Scan syn;
    syn.scan_id = scan.scan_id;
    syn.modality = Modality::target;
    syn.labels = scan.labels;
    const size_t plane = v.size() / scan.slices.size();
    for (size_t z = 0; z < scan.slices.size(); ++z) {
      IntensityImage img = scan.slices[z];
      img.modality = Modality::target;
      img.pixels.assign(v.begin() + static_cast<std::ptrdiff_t>(z * plane),
                        v.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane));
      syn.slices.push_back(std::move(img));
    }
    synthetic_.push_back(std::move(syn));
  }
  Rng rs = make_stream(cfg_.train.seed, "init.Seg");
  seg_ = build_segmenter(cfg_.segmenter_config(), rs);
  opt_seg_ = AdamState(*seg_, {cfg_.train.lr_gen});
  pool_sampler_.emplace(slice_counts(synthetic_), cfg_.train.batch, make_stream(cfg_.train.seed, "sampler.stage2"));
}

size_t Trainer::synthetic_slice_count() const {
  size_t n = 0;
  for (const auto& s : synthetic_) n += s.slices.size();
  return n;
}

std::optional<double> Trainer::validate() const {
  if (!seg_) return std::nullopt;
  const int c = cfg_.n_classes();
  const std::vector<Scan>* scans = nullptr;
  bool through_g1 = false;
  if (cfg_.train.variant == Variant::seg_only) {
    scans = &data_.supervised_val;
  } else if (cfg_.train.selection == Selection::target_eval) {
    scans = &data_.target_eval;
  } else {
    scans = &data_.source_val;
    through_g1 = true;
  }
  if (scans->empty()) throw DataError("no labeled validation scans for model selection");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& scan : *scans) {
    std::vector<const IntensityImage*> imgs;
    for (const auto& s : scan.slices) imgs.push_back(&s);
    Tensor in = to_network_space(images_to_tensor(imgs));
    if (through_g1) in = g1_->forward(in);
    const auto pred = argmax_labels(seg_->forward(in), c, scan.slices.front().spacing);
    total += dice(pred, scan.labels, cfg_.train.organ_class);
  }
  return total / static_cast<double>(scans->size());
}

Checkpoint Trainer::model_checkpoint() const {
  Checkpoint ck;
  ck.config_hash = cfg_.hash();
  ck.epoch = epoch_;
  ck.step = global_step_;
  ck.meta["config"] = cfg_.canonical();
  ck.meta["variant"] = variant_name(cfg_.train.variant);
  ck.meta["stage"] = std::to_string(stage_);
  if (g1_) store_network(ck, "G1", *g1_);
  if (g2_) store_network(ck, "G2", *g2_);
  if (seg_) store_network(ck, "Seg", *seg_);
  return ck;
}

Checkpoint Trainer::state() const {
  Checkpoint ck = model_checkpoint();
  ck.meta["kind"] = "state";
  if (d1_) store_network(ck, "D1", *d1_);
  if (d2_) store_network(ck, "D2", *d2_);
  if (g1_ && stage_ == 1) store_adam(ck, "G1", opt_g1_);
  if (g2_) store_adam(ck, "G2", opt_g2_);
  if (d1_) store_adam(ck, "D1", opt_d1_);
  if (d2_) store_adam(ck, "D2", opt_d2_);
  if (seg_) store_adam(ck, "Seg", opt_seg_);
  if (d1_) pool1_.store(ck, "pool.D1");
  if (d2_) pool2_.store(ck, "pool.D2");
  if (unpaired_) ck.meta["rng.sampler"] = rng_state(unpaired_->rng());
  if (pool_sampler_) ck.meta["rng.sampler"] = rng_state(pool_sampler_->rng());
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.config_hash != cfg_.hash()) throw CheckpointError("checkpoint was written under a different config");
  const auto kind = ck.meta.find("kind");
  if (kind == ck.meta.end() || kind->second != "state") throw CheckpointError("not a resumable training state");
  const int stage = std::stoi(ck.meta.at("stage"));
  if (stage == 2 && stage_ == 1) {
    if (cfg_.train.variant != Variant::two_stage) throw CheckpointError("stage 2 state for a single-stage variant");
    load_network(ck, "G1", *g1_);
    build_segmenter_stage();
  }
  if (g1_) load_network(ck, "G1", *g1_);
  if (g2_) load_network(ck, "G2", *g2_);
  if (d1_) load_network(ck, "D1", *d1_);
  if (d2_) load_network(ck, "D2", *d2_);
  if (seg_) load_network(ck, "Seg", *seg_);
  if (g1_ && stage_ == 1) load_adam(ck, "G1", opt_g1_);
  if (g2_) load_adam(ck, "G2", opt_g2_);
  if (d1_) load_adam(ck, "D1", opt_d1_);
  if (d2_) load_adam(ck, "D2", opt_d2_);
  if (seg_) load_adam(ck, "Seg", opt_seg_);
  if (d1_) pool1_.load(ck, "pool.D1");
  if (d2_) pool2_.load(ck, "pool.D2");
  const auto rng = ck.meta.find("rng.sampler");
  if (rng == ck.meta.end()) throw CheckpointError("checkpoint lacks sampler state");
  if (unpaired_) restore_rng_state(unpaired_->rng(), rng->second);
  if (pool_sampler_) restore_rng_state(pool_sampler_->rng(), rng->second);
  epoch_ = ck.epoch;
  global_step_ = ck.step;
}

std::vector<LabelMap> argmax_labels(const Tensor& scores, int n_classes, Spacing spacing) {
  if (scores.rank() != 4 || scores.dim(1) != n_classes) throw ShapeError("argmax expects N,C,H,W with C classes");
  const int64_t n = scores.dim(0), h = scores.dim(2), w = scores.dim(3), plane = h * w;
  const auto d = scores.data();
  std::vector<LabelMap> out;
  for (int64_t i = 0; i < n; ++i) {
    LabelMap m;
    m.height = static_cast<int>(h);
    m.width = static_cast<int>(w);
    m.n_classes = n_classes;
    m.spacing = spacing;
    m.classes.assign(static_cast<size_t>(plane), 0);
    const float* base = d.data() + i * n_classes * plane;
    for (int64_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int ch = 1; ch < n_classes; ++ch) {
        if (base[ch * plane + p] > base[best * plane + p]) best = ch;
      }
      m.classes[static_cast<size_t>(p)] = best;
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<LabelMap> segment_slices(const Network& seg, const std::vector<IntensityImage>& slices, int n_classes) {
  if (slices.empty()) return {};
  std::vector<const IntensityImage*> imgs;
  for (const auto& s : slices) imgs.push_back(&s);
  NoGradGuard no_grad;
  return argmax_labels(seg.forward(to_network_space(images_to_tensor(imgs))), n_classes, slices.front().spacing);
}

std::vector<LabelMap> infer(const Network& seg, const RawVolume& raw, Normalization mode, int network_size,
                            int n_classes) {
  std::vector<IntensityImage> resized;
  for (const auto& s : normalize(raw, mode)) resized.push_back(resample_bilinear(s, network_size, network_size));
  std::vector<LabelMap> out;
  for (const auto& m : segment_slices(seg, resized, n_classes)) {
    LabelMap native = resample_nearest(m, raw.height, raw.width);
    native.spacing = raw.spacing;
    out.push_back(std::move(native));
  }
  return out;
}

size_t select_epoch(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("select_epoch: no checkpoints");
  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

namespace {

std::string encode_epochs(const std::vector<EpochRecord>& recs) {
  std::string s;
  for (const auto& r : recs) {
    s += std::to_string(r.epoch) + "," + std::to_string(r.stage) + "," + (r.val_dsc ? fmt(*r.val_dsc) : "") + "," +
         r.checkpoint + "\n";
  }
  return s;
}

std::vector<EpochRecord> decode_epochs(const std::string& text) {
  std::vector<EpochRecord> recs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string e, st, v, ck;
    std::getline(ls, e, ',');
    std::getline(ls, st, ',');
    std::getline(ls, v, ',');
    std::getline(ls, ck);
    EpochRecord r{std::stoi(e), std::stoi(st), std::nullopt, ck};
    if (!v.empty()) r.val_dsc = std::stod(v);
    recs.push_back(std::move(r));
  }
  return recs;
}

constexpr const char* kLossHeader = "step,epoch,stage,gan_st,gan_ts,cycle_s,cycle_t,seg,total,d1,d2";

void truncate_loss_csv(const fs::path& path, uint64_t steps, const std::string& hash_line) {
  std::string kept = hash_line + std::string(kLossHeader) + "\n";
  if (fs::exists(path)) {
    std::istringstream in(read_text_file(path));
    std::string line;
    uint64_t rows = 0;
    while (rows < steps && std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.starts_with("step,")) continue;
      kept += line + "\n";
      ++rows;
    }
    if (rows != steps) throw CheckpointError("loss log holds fewer rows than the resumed state's step count");
  } else if (steps > 0) {
    throw CheckpointError("loss log missing for resumed run");
  }
  write_file_atomic(path, kept);
}

}  // namespace

RunResult run_training(const ExperimentConfig& cfg, const TrainingData& data, const RunOptions& opt) {
  fs::create_directories(opt.out_dir);
  const std::string started = timestamp();
  Trainer tr(cfg, data);
  RunResult res;
  const fs::path loss_path = opt.out_dir / "loss.csv";
  const fs::path state_path = opt.out_dir / "state.ssn";
  const std::string hash_line = "# config_hash=" + std::to_string(cfg.hash()) + "\n";
  auto say = [&](const std::string& m) {
    if (opt.progress) opt.progress(m);
  };

  if (opt.resume && fs::exists(state_path)) {
    const Checkpoint ck = Checkpoint::load(state_path);
    if (ck.meta.count("stage") && ck.meta.at("stage") == "2" && !fs::exists(opt.out_dir / "stage1.ssn")) {
      throw CheckpointError("segmenter stage resumed without its stage-1 checkpoint");
    }
    tr.restore(ck);
    if (const auto it = ck.meta.find("epochs"); it != ck.meta.end()) res.epochs = decode_epochs(it->second);
    truncate_loss_csv(loss_path, tr.global_step(), hash_line);
    say("resumed at epoch " + std::to_string(tr.epoch()) + ", step " + std::to_string(tr.global_step()));
  } else {
    write_file_atomic(loss_path, hash_line + kLossHeader + "\n");
  }

  std::ofstream csv(loss_path, std::ios::app);
  if (!csv) throw DataError("cannot append to " + loss_path.string());
  const int steps = tr.steps_per_epoch();
  const int per_stage = cfg.train.epochs;
  int ran = 0;
  while (tr.epoch() < tr.total_epochs()) {
    if (opt.stop_after_epochs && ran == *opt.stop_after_epochs) {
      res.steps = tr.global_step();
      return res;
    }
    const int epoch = tr.epoch() + 1;
    for (int s = 0; s < steps; ++s) {
      const uint64_t step_index = tr.global_step();
      const StepLosses l = tr.step();
      csv << step_index << ',' << epoch << ',' << tr.stage();
      for (size_t k = 0; k < 5; ++k) csv << ',' << (l.present[k] ? fmt(l.parts[k]) : "");
      csv << ',' << fmt(l.total) << ',' << (l.d1 ? fmt(*l.d1) : "") << ',' << (l.d2 ? fmt(*l.d2) : "") << '\n';
    }
    csv.flush();
    tr.finish_epoch();

    EpochRecord rec{epoch, tr.stage(), std::nullopt, {}};
    const int in_stage = tr.stage() == 2 ? epoch - per_stage : epoch;
    if (tr.seg() && (in_stage % cfg.train.eval_every == 0 || in_stage == per_stage)) {
      rec.val_dsc = tr.validate();
      rec.checkpoint = epoch_name(epoch);
      tr.model_checkpoint().save(opt.out_dir / rec.checkpoint);
    }
    res.epochs.push_back(rec);
    say("epoch " + std::to_string(epoch) + "/" + std::to_string(tr.total_epochs()) +
        (rec.val_dsc ? ", validation DSC " + fmt(*rec.val_dsc) : ""));

    if (tr.needs_stage_transition()) {
      tr.model_checkpoint().save(opt.out_dir / "stage1.ssn");
      tr.begin_segmenter_stage(Checkpoint::load(opt.out_dir / "stage1.ssn"));
    }
    Checkpoint st = tr.state();
    st.meta["epochs"] = encode_epochs(res.epochs);
    st.save(state_path);
    ++ran;
  }
  csv.close();

  std::vector<double> scores;
  std::vector<const EpochRecord*> candidates;
  for (const auto& r : res.epochs) {
    if (r.val_dsc) {
      scores.push_back(*r.val_dsc);
      candidates.push_back(&r);
    }
  }
  if (!scores.empty()) {
    const EpochRecord* best = candidates[select_epoch(scores)];
    res.best_epoch = best->epoch;
    fs::copy_file(opt.out_dir / best->checkpoint, opt.out_dir / "best.ssn", fs::copy_options::overwrite_existing);
  }
  Checkpoint final_state = tr.state();
  final_state.meta["epochs"] = encode_epochs(res.epochs);
  final_state.save(opt.out_dir / "final.ssn");
  res.finished = true;
  res.steps = tr.global_step();

  std::ostringstream man;
  man << "# run manifest\n"
      << "config_hash=" << cfg.hash() << "\n"
      << "seed=" << cfg.train.seed << "\n"
      << "variant=" << variant_name(cfg.train.variant) << "\n"
      << "dataset=" << opt.dataset_root.string() << "\n"
      << "dataset_manifest_hash=" << opt.dataset_hash << "\n"
      << "selection=" << (cfg.train.variant == Variant::seg_only ? "target_supervised_val"
                          : cfg.train.selection == Selection::source_val ? "source_val" : "target_eval")
      << "\n"
      << "started=" << started << "\n"
      << "finished=" << timestamp() << "\n"
      << "steps=" << res.steps << "\n"
      << "best_epoch=" << (res.best_epoch ? std::to_string(*res.best_epoch) : "") << "\n";
  for (const auto& note : opt.manifest_notes) man << note << "\n";
  for (const auto& r : res.epochs) {
    man << "epoch." << r.epoch << "=stage " << r.stage
        << (r.val_dsc ? ", val_dsc " + fmt(*r.val_dsc) + ", " + r.checkpoint : "") << "\n";
  }
  man << "\n[config]\n" << cfg.canonical();
  write_file_atomic(opt.out_dir / "run_manifest.txt", man.str());
  return res;
}

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.ckpt = Checkpoint::load(path);
  const auto it = m.ckpt.meta.find("config");
  if (it == m.ckpt.meta.end()) throw CheckpointError(path.string() + " carries no config");
  try {
    m.cfg = parse_config(it->second);
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": embedded config invalid: " + e.what());
  }
  if (m.cfg.hash() != m.ckpt.config_hash) throw CheckpointError(path.string() + ": config hash mismatch");
  Rng scratch(0);
  if (m.ckpt.has_network("Seg")) {
    m.seg = build_segmenter(m.cfg.segmenter_config(), scratch);
    load_network(m.ckpt, "Seg", *m.seg);
  }
  if (m.ckpt.has_network("G1")) {
    m.g1 = build_generator(m.cfg.generator_config(), scratch);
    load_network(m.ckpt, "G1", *m.g1);
  }
  if (m.ckpt.has_network("G2")) {
    m.g2 = build_generator(m.cfg.generator_config(), scratch);
    load_network(m.ckpt, "G2", *m.g2);
  }
  return m;
}

}  // namespace synseg
