#include "synseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace synseg {

void PhantomSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid phantom spec: ") + what);
  };
  require(n_source_scans >= 1 && n_target_scans >= 1, "need at least one source and one target scan");
  require(n_source_val_scans >= 0 && n_target_supervised_scans >= 0 && n_target_supervised_val_scans >= 0,
          "negative scan count");
  require(slices_per_scan >= 1, "slices_per_scan must be >= 1");
  require(image_size >= 8 && image_size % 4 == 0, "image_size must be a multiple of 4 and >= 8");
  require(native_size >= 8, "native_size must be >= 8");
  require(n_classes == 2 || n_classes == 3, "n_classes must be 2 or 3");
  require(organ_radius_min > 0.0f && organ_radius_min <= organ_radius_max && organ_radius_max <= 0.25f,
          "organ radius range must satisfy 0 < min <= max <= 0.25");
  require(organ_min_scale > 0.0f && organ_min_scale <= 1.0f, "organ_min_scale must be in (0, 1]");
  require(confounder_radius_min > 0.0f && confounder_radius_min <= confounder_radius_max,
          "confounder radius range invalid");
  require(n_confounders >= 0, "n_confounders must be >= 0");
  require(noise_std >= 0.0f && target_gamma > 0.0f && bias_strength >= 0.0f && bias_strength < 1.0f,
          "transfer parameters out of range");
  require(field_of_view_mm > 0.0f, "field_of_view_mm must be positive");
}

std::string PhantomSpec::canonical() const {
  std::ostringstream os;
  os.precision(9);
  os << "seed=" << seed << "\nn_source_scans=" << n_source_scans << "\nn_source_val_scans=" << n_source_val_scans
     << "\nn_target_scans=" << n_target_scans << "\nn_target_supervised_scans=" << n_target_supervised_scans
     << "\nn_target_supervised_val_scans=" << n_target_supervised_val_scans
     << "\nslices_per_scan=" << slices_per_scan << "\nimage_size=" << image_size
     << "\nnative_size=" << native_size << "\nfield_of_view_mm=" << field_of_view_mm
     << "\nn_classes=" << n_classes << "\norgan_radius_min=" << organ_radius_min
     << "\norgan_radius_max=" << organ_radius_max << "\norgan_min_scale=" << organ_min_scale
     << "\nn_confounders=" << n_confounders << "\nconfounder_radius_min=" << confounder_radius_min
     << "\nconfounder_radius_max=" << confounder_radius_max << "\nbody_level=" << body_level
     << "\norgan_level=" << organ_level << "\nconfounder_level=" << confounder_level
     << "\ntexture_amplitude=" << texture_amplitude << "\ntarget_gamma=" << target_gamma
     << "\nbias_strength=" << bias_strength << "\nnoise_std=" << noise_std << '\n';
  return os.str();
}

namespace {

struct Ellipse {
  double cx = 0.5, cy = 0.5;
  double rx = 0.1, ry = 0.1;
  double angle = 0.0;

  bool contains(double u, double v, double scale = 1.0) const {
    const double du = u - cx, dv = v - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = (c * du + s * dv) / (rx * scale);
    const double b = (-s * du + c * dv) / (ry * scale);
    return a * a + b * b <= 1.0;
  }
};

struct ShapeWorld {
  Ellipse body;
  Ellipse organ;
  std::vector<Ellipse> confounders;
  double organ_zc = 0.0;
  double organ_zr = 1.0;
  double drift_u = 0.0, drift_v = 0.0;
  double texture_freq_u = 0.0, texture_freq_v = 0.0, texture_phase = 0.0;
  double bias_freq_u = 0.0, bias_freq_v = 0.0, bias_phase = 0.0;
};

ShapeWorld sample_world(const PhantomSpec& spec, Rng& rng) {
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  constexpr double pi = std::numbers::pi;
  ShapeWorld w;
  w.body = {0.5 + uni(-0.03, 0.03), 0.5 + uni(-0.03, 0.03), uni(0.40, 0.46), uni(0.34, 0.42), uni(-0.15, 0.15)};
  w.organ.rx = uni(spec.organ_radius_min, spec.organ_radius_max);
  w.organ.ry = uni(spec.organ_radius_min, spec.organ_radius_max);
  w.organ.angle = uni(0.0, pi);
  w.organ.cx = w.body.cx + uni(-0.10, 0.10);
  w.organ.cy = w.body.cy + uni(-0.08, 0.08);

  const int s = spec.slices_per_scan;
  w.organ_zc = (s - 1) / 2.0 + uni(-1.5, 1.5);
  const double reach = std::max({w.organ_zc, (s - 1) - w.organ_zc, 0.5});
  const double smin = spec.organ_min_scale;
  w.organ_zr = smin >= 1.0 ? 1e9 : reach / std::sqrt(1.0 - smin * smin);
  w.drift_u = uni(-0.02, 0.02);
  w.drift_v = uni(-0.02, 0.02);

  const double organ_extent = std::max(w.organ.rx, w.organ.ry);
  for (int i = 0; i < spec.n_confounders; ++i) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Ellipse c;
      c.rx = uni(spec.confounder_radius_min, spec.confounder_radius_max);
      c.ry = c.rx * uni(0.7, 1.0);
      c.angle = uni(0.0, pi);
      const double ang = uni(0.0, 2.0 * pi);
      const double rad = uni(0.0, 0.85);
      c.cx = w.body.cx + rad * (w.body.rx - c.rx) * std::cos(ang);
      c.cy = w.body.cy + rad * (w.body.ry - c.rx) * std::sin(ang);
      const double d = std::hypot(c.cx - w.organ.cx, c.cy - w.organ.cy);
      if (d < organ_extent + c.rx + 0.04) continue;
      bool overlaps = false;
      for (const auto& o : w.confounders) overlaps = overlaps || std::hypot(c.cx - o.cx, c.cy - o.cy) < c.rx + o.rx + 0.02;
      if (overlaps) continue;
      w.confounders.push_back(c);
      break;
    }
  }
  w.texture_freq_u = uni(4.0, 8.0);
  w.texture_freq_v = uni(4.0, 8.0);
  w.texture_phase = uni(0.0, 2.0 * pi);
  w.bias_freq_u = uni(0.3, 0.8);
  w.bias_freq_v = uni(0.3, 0.8);
  w.bias_phase = uni(0.0, 2.0 * pi);
  return w;
}

}  // namespace

PhantomRawScan phantom_raw_scan(const PhantomSpec& spec, Modality modality, const std::string& scan_id, Rng& rng,
                                int native_size) {
  constexpr double pi = std::numbers::pi;
  const ShapeWorld world = sample_world(spec, rng);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  const int n = native_size, depth = spec.slices_per_scan;
  const float spacing = spec.field_of_view_mm / static_cast<float>(n);

  PhantomRawScan out;
  out.normalization = modality == Modality::source ? Normalization::percentile : Normalization::hounsfield;
  RawVolume& raw = out.raw;
  raw.depth = depth;
  raw.height = raw.width = n;
  raw.spacing = {spacing, spacing};
  raw.modality = modality;
  raw.scan_id = scan_id;
  raw.voxels.resize(static_cast<size_t>(depth) * n * n);

  for (int z = 0; z < depth; ++z) {
    const double dz = (z - world.organ_zc) / world.organ_zr;
    const double organ_scale = std::sqrt(std::max(0.0, 1.0 - dz * dz));
    Ellipse organ = world.organ;
    organ.cx += world.drift_u * (z - world.organ_zc) / depth;
    organ.cy += world.drift_v * (z - world.organ_zc) / depth;

    LabelMap label;
    label.height = label.width = n;
    label.n_classes = spec.n_classes;
    label.spacing = raw.spacing;
    label.classes.assign(static_cast<size_t>(n) * n, 0);

    for (int r = 0; r < n; ++r) {
      const double v = (r + 0.5) / n;
      for (int c = 0; c < n; ++c) {
        const double u = (c + 0.5) / n;
        const size_t idx = static_cast<size_t>(r) * n + c;
        double t = 0.0;
        bool in_body = world.body.contains(u, v);
        bool textured = false;
        int32_t cls = 0;
        if (in_body) {
          t = spec.body_level;
          textured = true;
          if (spec.n_classes == 3) cls = 2;
          for (const auto& conf : world.confounders) {
            if (conf.contains(u, v)) {
              t = spec.confounder_level;
              textured = false;
            }
          }
          if (organ_scale > 0.0 && organ.contains(u, v, organ_scale)) {
            t = spec.organ_level;
            textured = false;
            cls = 1;
          }
        }
        label.classes[idx] = cls;

        double intensity;
        if (modality == Modality::source) {
          intensity = t;
          if (textured) {
            intensity += spec.texture_amplitude *
                         std::sin(2.0 * pi * (world.texture_freq_u * u + world.texture_freq_v * v) + world.texture_phase);
          }
          intensity += noise(rng);
          raw.voxels[static_cast<size_t>(z) * n * n + idx] = static_cast<float>(1000.0 * intensity + 100.0);
        } else {
          const double bias =
              1.0 + spec.bias_strength *
                        std::cos(2.0 * pi * (world.bias_freq_u * u + world.bias_freq_v * v) + world.bias_phase);
          intensity = (1.0 - std::pow(t, static_cast<double>(spec.target_gamma))) * bias + noise(rng);
          // Normalized [0, 1] maps onto the [-1000, 1000] HU window.
          raw.voxels[static_cast<size_t>(z) * n * n + idx] = static_cast<float>(2000.0 * intensity - 1000.0);
        }
      }
    }
    out.labels.push_back(std::move(label));
  }
  return out;
}

Scan preprocess_scan(const PhantomRawScan& raw, int image_size, bool keep_labels) {
  Scan scan;
  scan.scan_id = raw.raw.scan_id;
  scan.modality = raw.raw.modality;
  for (auto& slice : normalize(raw.raw, raw.normalization)) {
    scan.slices.push_back(resample_bilinear(slice, image_size, image_size));
  }
  if (keep_labels) {
    for (const auto& label : raw.labels) scan.labels.push_back(resample_nearest(label, image_size, image_size));
  }
  return scan;
}

PhantomDataset phantom_generate(const PhantomSpec& spec) {
  spec.validate();
  PhantomDataset ds;
  auto make = [&spec](Modality m, const std::string& prefix, int index, bool labels) {
    const std::string id = prefix + "_" + (index < 10 ? "0" : "") + std::to_string(index);
    Rng rng = make_stream(spec.seed, "phantom." + id);
    return preprocess_scan(phantom_raw_scan(spec, m, id, rng, spec.native_size), spec.image_size, labels);
  };
  for (int i = 0; i < spec.n_source_scans; ++i) ds.source_train.push_back(make(Modality::source, "src", i, true));
  for (int i = 0; i < spec.n_source_val_scans; ++i) ds.source_val.push_back(make(Modality::source, "srcval", i, true));
  for (int i = 0; i < spec.n_target_scans; ++i) {
    Scan labeled = make(Modality::target, "tgt", i, true);
    Scan images = labeled;
    images.labels.clear();
    ds.target_train.push_back(std::move(images));
    ds.eval.target_eval.push_back(std::move(labeled));
  }
  for (int i = 0; i < spec.n_target_supervised_scans; ++i) {
    ds.eval.supervised_train.push_back(make(Modality::target, "tgtsup", i, true));
  }
  for (int i = 0; i < spec.n_target_supervised_val_scans; ++i) {
    ds.eval.supervised_val.push_back(make(Modality::target, "tgtsupval", i, true));
  }
  return ds;
}

}  // namespace synseg
