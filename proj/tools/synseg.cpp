// synseg: command-line front end (gen-data, train, eval, montage).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "synseg/checkpoint.hpp"
#include "synseg/config.hpp"
#include "synseg/dataset_io.hpp"
#include "synseg/log.hpp"
#include "synseg/phantom.hpp"
#include "synseg/report.hpp"
#include "synseg/threads.hpp"
#include "synseg/training.hpp"

namespace fs = std::filesystem;
using namespace synseg;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kDataError = 3, kNumericError = 4 };

struct CommonArgs {
  std::string config;
  std::vector<std::string> settings;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg = args.config.empty() ? ExperimentConfig{} : load_config(args.config);
  for (const auto& kv : args.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config file (section.key = value)");
  cmd->add_option("--set", args.settings, "override one config key, e.g. --set train.lambda3=10");
}

int cmd_gen_data(const CommonArgs& common, const std::string& out, std::optional<uint64_t> seed) {
  ExperimentConfig cfg = resolve_config(common);
  if (seed) cfg.data.seed = *seed;
  cfg.validate();
  info("generating phantom dataset in " + out);
  const PhantomDataset ds = phantom_generate(cfg.data);
  write_dataset(out, ds, cfg.data);
  write_file_atomic(fs::path(out) / "config.txt", "# config_hash=" + std::to_string(cfg.hash()) + "\n" + cfg.canonical());
  info("wrote " + std::to_string(cfg.data.n_source_scans + cfg.data.n_source_val_scans + cfg.data.n_target_scans +
                                 cfg.data.n_target_supervised_scans + cfg.data.n_target_supervised_val_scans) +
       " scans");
  return kOk;
}

struct TrainArgs {
  std::string data, out, variant;
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  bool resume = false;
};

int cmd_train(const CommonArgs& common, const TrainArgs& a) {
  ExperimentConfig cfg = resolve_config(common);
  if (!a.variant.empty()) cfg.train.variant = parse_variant(a.variant);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.validate();
  const DatasetInfo info_ds = read_dataset_info(a.data);
  const TrainingData data = load_training_data(a.data, cfg);
  RunOptions opt;
  opt.out_dir = a.out;
  opt.dataset_root = a.data;
  opt.dataset_hash = info_ds.manifest_hash;
  opt.resume = a.resume;
  opt.progress = [](const std::string& m) { info(m); };
  info(std::string("training ") + variant_name(cfg.train.variant) + " (config hash " + std::to_string(cfg.hash()) +
       ", seed " + std::to_string(cfg.train.seed) + ")");
  const RunResult res = run_training(cfg, data, opt);
  if (res.best_epoch) info("best epoch " + std::to_string(*res.best_epoch) + " -> " + (fs::path(a.out) / "best.ssn").string());
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> checkpoints;
  std::string data, out, split = "target_eval";
};

std::string manifest_for_split(const std::string& split) {
  if (split == "target_eval") return kManifestTargetEval;
  if (split == "supervised_val") return kManifestSupervisedVal;
  if (split == "source_val") return kManifestSourceVal;
  throw ConfigError("unknown split '" + split + "' (target_eval, supervised_val or source_val)");
}

int cmd_eval(const CommonArgs& common, const EvalArgs& a) {
  const bool have_config = !common.config.empty() || !common.settings.empty();
  const std::optional<ExperimentConfig> override_cfg =
      have_config ? std::optional<ExperimentConfig>(resolve_config(common)) : std::nullopt;
  const std::string manifest = manifest_for_split(a.split);
  const DatasetInfo ds = read_dataset_info(a.data);

  std::vector<MetricsRecord> records;
  std::vector<std::string> header{"split=" + a.split, "dataset_manifest_hash=" + std::to_string(ds.manifest_hash)};
  int organ_class = 1;
  bool labels_missing = false;
  for (const auto& spec : a.checkpoints) {
    std::string label, path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos) {
      label = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    }
    LoadedModel m = load_model(path);
    if (!m.seg) throw CheckpointError(path + " holds no segmentation network");
    if (m.cfg.image_size() != ds.image_size || m.cfg.n_classes() != ds.n_classes) {
      throw DataError(path + " was trained at " + std::to_string(m.cfg.image_size()) + "px/" +
                      std::to_string(m.cfg.n_classes()) + " classes but the dataset is " +
                      std::to_string(ds.image_size) + "px/" + std::to_string(ds.n_classes) + " classes");
    }
    if (label.empty()) label = m.ckpt.meta.count("variant") ? m.ckpt.meta.at("variant") : fs::path(path).stem().string();
    const ExperimentConfig& ec = override_cfg ? *override_cfg : m.cfg;
    organ_class = ec.train.organ_class;
    const auto scans = load_split(a.data, manifest, ds.n_classes);
    bool labeled = !scans.empty();
    for (const auto& s : scans) labeled = labeled && s.labels.size() == s.slices.size();
    header.push_back(label + ": checkpoint=" + path + " config_hash=" + std::to_string(m.ckpt.config_hash) +
                     " epoch=" + std::to_string(m.ckpt.epoch));
    if (!labeled) {
      labels_missing = true;
      warn("split " + a.split + " has no labels; DSC/ASD omitted for " + label);
      continue;
    }
    auto r = evaluate_segmenter(*m.seg, scans, ds.n_classes, label, m.ckpt.epoch, ec.train.slice_thickness_mm);
    records.insert(records.end(), r.begin(), r.end());
  }
  fs::create_directories(a.out);
  write_results_csv(fs::path(a.out) / "results.csv", records, header);
  std::string report = comparison_report(records, organ_class, header);
  if (labels_missing) report += "\nnotice: labels missing for this split; DSC and ASD were omitted.\n";
  write_file_atomic(fs::path(a.out) / "report.txt", report);
  std::cout << report;
  return kOk;
}

struct MontageArgs {
  std::string checkpoint, data, out;
  int n = 4;
  uint64_t seed = 0;
};

std::vector<float> tile_of(const Tensor& t, size_t index) {
  const size_t plane = static_cast<size_t>(t.dim(2) * t.dim(3));
  const auto d = t.data();
  return from_network_space(d.subspan(index * plane, plane));
}

int cmd_montage(const CommonArgs& common, const MontageArgs& a) {
  if (!common.config.empty() || !common.settings.empty()) resolve_config(common);  // validated, not otherwise needed
  if (a.n < 0) throw ConfigError("--n must be >= 0");
  if (a.n == 0) {
    info("n = 0: no montage written");
    return kOk;
  }
  LoadedModel m = load_model(a.checkpoint);
  if (!m.g1) throw CheckpointError(a.checkpoint + " holds no synthesis generator (G1)");
  const DatasetInfo ds = read_dataset_info(a.data);
  if (m.cfg.image_size() != ds.image_size || m.cfg.n_classes() != ds.n_classes) {
    throw DataError("checkpoint and dataset disagree on image size or class count");
  }
  auto source = load_split(a.data, kManifestSourceVal, ds.n_classes);
  if (source.empty()) source = load_split(a.data, kManifestSourceTrain, ds.n_classes);
  const auto target = load_split(a.data, kManifestTargetTrain, ds.n_classes);
  Rng rng = make_stream(a.seed, "montage");
  auto pick = [&rng](const std::vector<Scan>& scans, int n) {
    std::vector<const IntensityImage*> out;
    std::vector<const IntensityImage*> all;
    for (const auto& s : scans) for (const auto& img : s.slices) all.push_back(&img);
    if (all.empty()) throw DataError("montage: empty split");
    std::uniform_int_distribution<size_t> u(0, all.size() - 1);
    for (int i = 0; i < n; ++i) out.push_back(all[u(rng)]);
    return out;
  };
  const int size = ds.image_size;
  const std::string hash = "config_hash=" + std::to_string(m.ckpt.config_hash);
  fs::create_directories(a.out);
  NoGradGuard no_grad;

  const Tensor x = to_network_space(images_to_tensor(pick(source, a.n)));
  const Tensor fake_t = m.g1->forward(x);
  std::optional<Tensor> rec_x;
  if (m.g2) rec_x = m.g2->forward(fake_t);
  std::optional<std::vector<LabelMap>> seg;
  if (m.seg) seg = argmax_labels(m.seg->forward(fake_t), ds.n_classes, {});
  std::vector<std::vector<std::vector<float>>> rows_a;
  for (int i = 0; i < a.n; ++i) {
    std::vector<std::vector<float>> row{tile_of(x, i), tile_of(fake_t, i)};
    if (rec_x) row.push_back(tile_of(*rec_x, i));
    if (seg) {
      std::vector<float> t;
      for (const int32_t c : (*seg)[i].classes) t.push_back(static_cast<float>(c) / static_cast<float>(ds.n_classes - 1));
      row.push_back(std::move(t));
    }
    rows_a.push_back(std::move(row));
  }
  std::string name_a = m.g2 ? "montage_pathA.pgm" : "montage_pathA_only.pgm";
  std::string cols = std::string("x | G1(x)") + (rec_x ? " | G2(G1(x))" : "") + (seg ? " | Seg(G1(x))" : "");
  write_pgm16(fs::path(a.out) / name_a, tile_montage(rows_a, size), hash + " columns: " + cols);
  info("wrote " + (fs::path(a.out) / name_a).string() + " (" + cols + ")");

  if (m.g2) {
    const Tensor y = to_network_space(images_to_tensor(pick(target, a.n)));
    const Tensor fake_s = m.g2->forward(y);
    const Tensor rec_y = m.g1->forward(fake_s);
    std::vector<std::vector<std::vector<float>>> rows_b;
    for (int i = 0; i < a.n; ++i) rows_b.push_back({tile_of(y, i), tile_of(fake_s, i), tile_of(rec_y, i)});
    write_pgm16(fs::path(a.out) / "montage_pathB.pgm", tile_montage(rows_b, size),
                hash + " columns: y | G2(y) | G1(G2(y))");
    info("wrote " + (fs::path(a.out) / "montage_pathB.pgm").string());
  } else {
    info("checkpoint has no G2: Path B skipped");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synseg: synthesis + segmentation training on phantom data"};
  app.require_subcommand(1);
  configure_threads_from_env();

  CommonArgs common;
  std::string gen_out;
  std::optional<uint64_t> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "generate the procedural two-modality dataset");
  add_common(gen, common);
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "phantom seed (overrides data.seed)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one variant");
  add_common(train, common);
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--out", train_args.out, "run directory")->required();
  train->add_option("--variant", train_args.variant, "SYNSEG, HC, TWO_STAGE or SEG_ONLY");
  train->add_option("--seed", train_args.seed, "training seed");
  train->add_option("--epochs", train_args.epochs, "epochs (per stage for TWO_STAGE)");
  train->add_flag("--resume", train_args.resume, "continue from <out>/state.ssn if present");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score checkpoints on a labeled split");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_args.checkpoints, "[label=]checkpoint path (repeatable)")->required();
  eval->add_option("--data", eval_args.data, "dataset directory")->required();
  eval->add_option("--split", eval_args.split, "target_eval (default), supervised_val or source_val");
  eval->add_option("--out", eval_args.out, "output directory")->required();

  MontageArgs montage_args;
  auto* montage = app.add_subcommand("montage", "render Path A / Path B image montages");
  add_common(montage, common);
  montage->add_option("--checkpoint", montage_args.checkpoint, "model checkpoint")->required();
  montage->add_option("--data", montage_args.data, "dataset directory")->required();
  montage->add_option("--n", montage_args.n, "number of sampled slices");
  montage->add_option("--seed", montage_args.seed, "slice sampling seed");
  montage->add_option("--out", montage_args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common, gen_out, gen_seed);
    if (*train) return cmd_train(common, train_args);
    if (*eval) return cmd_eval(common, eval_args);
    if (*montage) return cmd_montage(common, montage_args);
  } catch (const ConfigError& e) {
    std::cerr << "synseg: error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "synseg: numeric failure at step " << e.step() << ": " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    std::cerr << "synseg: data error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    std::cerr << "synseg: checkpoint error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "synseg: file error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "synseg: invalid input: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
