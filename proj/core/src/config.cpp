#include "synseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "synseg/dataset_io.hpp"
#include "synseg/rng.hpp"

namespace synseg {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::synseg: return "SYNSEG";
    case Variant::hc: return "HC";
    case Variant::two_stage: return "TWO_STAGE";
    case Variant::seg_only: return "SEG_ONLY";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  std::string up = text;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  std::replace(up.begin(), up.end(), '-', '_');
  for (Variant v : {Variant::synseg, Variant::hc, Variant::two_stage, Variant::seg_only}) {
    if (up == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + text + "' (expected SYNSEG, HC, TWO_STAGE or SEG_ONLY)");
}

void TrainConfig::validate(int n_classes) const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid training config: " + what);
  };
  require(epochs >= 1, "train.epochs must be >= 1");
  require(steps_per_epoch >= 0, "train.steps_per_epoch must be >= 0");
  require(batch >= 1, "train.batch must be >= 1");
  require(lr_gen > 0.0f && lr_disc > 0.0f, "learning rates must be positive");
  require(history_buffer >= 0, "train.history_buffer must be >= 0");
  require(eval_every >= 1, "train.eval_every must be >= 1");
  require(class_weights.empty() || static_cast<int>(class_weights.size()) == n_classes,
          "train.class_weights needs one entry per class");
  for (const float w : class_weights) require(w >= 0.0f, "class weights must be nonnegative");
  require(base_filters >= 4 && n_res_blocks >= 1, "generator needs base_filters >= 4 and n_res_blocks >= 1");
  require(disc_filters >= 1 && disc_layers >= 1, "discriminator needs filters >= 1 and layers >= 1");
  require(organ_class >= 1 && organ_class < n_classes, "eval.organ_class out of range");
  require(slice_thickness_mm > 0.0, "eval.slice_thickness_mm must be positive");
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + text + "' for " + key);
  return value;
}

template <typename T>
std::string format_number(T value) {
  std::ostringstream os;
  os.precision(9);
  os << value;
  return os.str();
}

template <typename T, typename Access>
Field number_field(const std::string& key, Access access) {
  return {[key, access](ExperimentConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); },
          [access](const ExperimentConfig& c) { return format_number(access(c)); }};
}

#define SYNSEG_FIELD(type, key, expr) \
  fields.emplace(key, number_field<type>(key, [](auto& c) -> auto& { return expr; }))

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> fields;
    SYNSEG_FIELD(uint64_t, "data.seed", c.data.seed);
    SYNSEG_FIELD(int, "data.n_source_scans", c.data.n_source_scans);
    SYNSEG_FIELD(int, "data.n_source_val_scans", c.data.n_source_val_scans);
    SYNSEG_FIELD(int, "data.n_target_scans", c.data.n_target_scans);
    SYNSEG_FIELD(int, "data.n_target_supervised_scans", c.data.n_target_supervised_scans);
    SYNSEG_FIELD(int, "data.n_target_supervised_val_scans", c.data.n_target_supervised_val_scans);
    SYNSEG_FIELD(int, "data.slices_per_scan", c.data.slices_per_scan);
    SYNSEG_FIELD(int, "data.image_size", c.data.image_size);
    SYNSEG_FIELD(int, "data.native_size", c.data.native_size);
    SYNSEG_FIELD(float, "data.field_of_view_mm", c.data.field_of_view_mm);
    SYNSEG_FIELD(int, "data.n_classes", c.data.n_classes);
    SYNSEG_FIELD(float, "data.organ_radius_min", c.data.organ_radius_min);
    SYNSEG_FIELD(float, "data.organ_radius_max", c.data.organ_radius_max);
    SYNSEG_FIELD(float, "data.organ_min_scale", c.data.organ_min_scale);
    SYNSEG_FIELD(int, "data.n_confounders", c.data.n_confounders);
    SYNSEG_FIELD(float, "data.confounder_radius_min", c.data.confounder_radius_min);
    SYNSEG_FIELD(float, "data.confounder_radius_max", c.data.confounder_radius_max);
    SYNSEG_FIELD(float, "data.body_level", c.data.body_level);
    SYNSEG_FIELD(float, "data.organ_level", c.data.organ_level);
    SYNSEG_FIELD(float, "data.confounder_level", c.data.confounder_level);
    SYNSEG_FIELD(float, "data.texture_amplitude", c.data.texture_amplitude);
    SYNSEG_FIELD(float, "data.target_gamma", c.data.target_gamma);
    SYNSEG_FIELD(float, "data.bias_strength", c.data.bias_strength);
    SYNSEG_FIELD(float, "data.noise_std", c.data.noise_std);

    SYNSEG_FIELD(int, "model.base_filters", c.train.base_filters);
    SYNSEG_FIELD(int, "model.n_res_blocks", c.train.n_res_blocks);
    SYNSEG_FIELD(int, "model.disc_filters", c.train.disc_filters);
    SYNSEG_FIELD(int, "model.disc_layers", c.train.disc_layers);

    SYNSEG_FIELD(uint64_t, "train.seed", c.train.seed);
    SYNSEG_FIELD(int, "train.epochs", c.train.epochs);
    SYNSEG_FIELD(int, "train.steps_per_epoch", c.train.steps_per_epoch);
    SYNSEG_FIELD(int, "train.batch", c.train.batch);
    SYNSEG_FIELD(float, "train.lambda1", c.train.weights.gan_source_to_target);
    SYNSEG_FIELD(float, "train.lambda2", c.train.weights.gan_target_to_source);
    SYNSEG_FIELD(float, "train.lambda3", c.train.weights.cycle_source);
    SYNSEG_FIELD(float, "train.lambda4", c.train.weights.cycle_target);
    SYNSEG_FIELD(float, "train.lambda5", c.train.weights.segmentation);
    SYNSEG_FIELD(float, "train.lr_gen", c.train.lr_gen);
    SYNSEG_FIELD(float, "train.lr_disc", c.train.lr_disc);
    SYNSEG_FIELD(int, "train.history_buffer", c.train.history_buffer);
    SYNSEG_FIELD(int, "train.eval_every", c.train.eval_every);
    SYNSEG_FIELD(int, "eval.organ_class", c.train.organ_class);
    SYNSEG_FIELD(double, "eval.slice_thickness_mm", c.train.slice_thickness_mm);

    fields.emplace("train.variant",
                   Field{[](ExperimentConfig& c, const std::string& v) { c.train.variant = parse_variant(v); },
                         [](const ExperimentConfig& c) { return std::string(variant_name(c.train.variant)); }});
    fields.emplace("train.adversarial",
                   Field{[](ExperimentConfig& c, const std::string& v) {
                           if (v == "log") c.train.adversarial = AdversarialForm::log;
                           else if (v == "least_squares") c.train.adversarial = AdversarialForm::least_squares;
                           else throw ConfigError("train.adversarial must be log or least_squares");
                         },
                         [](const ExperimentConfig& c) {
                           return std::string(c.train.adversarial == AdversarialForm::log ? "log" : "least_squares");
                         }});
    fields.emplace("train.selection",
                   Field{[](ExperimentConfig& c, const std::string& v) {
                           if (v == "source_val") c.train.selection = Selection::source_val;
                           else if (v == "target_eval") c.train.selection = Selection::target_eval;
                           else throw ConfigError("train.selection must be source_val or target_eval");
                         },
                         [](const ExperimentConfig& c) {
                           return std::string(c.train.selection == Selection::source_val ? "source_val" : "target_eval");
                         }});
    fields.emplace("train.class_weights",
                   Field{[](ExperimentConfig& c, const std::string& v) {
                           c.train.class_weights.clear();
                           std::istringstream is(v);
                           std::string item;
                           while (std::getline(is, item, ',')) {
                             item.erase(0, item.find_first_not_of(' '));
                             item.erase(item.find_last_not_of(' ') + 1);
                             if (!item.empty()) c.train.class_weights.push_back(parse_number<float>("train.class_weights", item));
                           }
                         },
                         [](const ExperimentConfig& c) {
                           std::string out;
                           for (size_t i = 0; i < c.train.class_weights.size(); ++i) {
                             out += (i ? "," : "") + format_number(c.train.class_weights[i]);
                           }
                           return out;
                         }});
    return fields;
  }();
  return table;
}

#undef SYNSEG_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train.validate(data.n_classes);
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, field] : registry()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical()); }

GeneratorConfig ExperimentConfig::generator_config() const {
  return {1, 1, train.base_filters, train.n_res_blocks};
}

GeneratorConfig ExperimentConfig::segmenter_config() const {
  return {1, data.n_classes, train.base_filters, train.n_res_blocks};
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_text_file(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace synseg
