#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "synseg/data.hpp"
#include "synseg/phantom.hpp"

using namespace synseg;

namespace {

// Linear-interpolated order statistic, written from the definition.
double brute_percentile(std::vector<float> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (static_cast<double>(v.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(pos)), hi = static_cast<size_t>(std::ceil(pos));
  return v[lo] + (pos - static_cast<double>(lo)) * (static_cast<double>(v[hi]) - v[lo]);
}

RawVolume volume_of(std::vector<float> voxels, int depth, int h, int w) {
  RawVolume v;
  v.depth = depth;
  v.height = h;
  v.width = w;
  v.voxels = std::move(voxels);
  return v;
}

// Upper regularized incomplete gamma Q(a, x) for the chi-square tail.
double gamma_q(double a, double x) {
  if (x < a + 1.0) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 1000; ++n) {
      term *= x / (a + n);
      sum += term;
    }
    return 1.0 - sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    c = b + an / c;
    d = 1.0 / d;
    h *= d * c;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double ks_statistic(std::vector<float> a, std::vector<float> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double best = 0.0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const float x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return best;
}

}  // namespace

TEST_CASE("percentile matches the sorted-order oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 100.0f);
  for (const size_t n : {1u, 2u, 7u, 1000u}) {
    std::vector<float> v(n);
    for (auto& e : v) e = u(rng);
    for (const double q : {0.0, 0.025, 0.5, 0.975, 1.0}) CHECK(percentile(v, q) == doctest::Approx(brute_percentile(v, q)));
  }
}

TEST_CASE("percentile normalization of a uniform sample") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 100.0f);
  std::vector<float> v(1000);
  for (auto& e : v) e = u(rng);
  v[0] = 50.0f;
  const auto out = normalize_percentile(volume_of(v, 1, 1, 1000));
  const double lo = brute_percentile(v, 0.025), hi = brute_percentile(v, 0.975);
  CHECK(lo == doctest::Approx(2.5).epsilon(0.5));
  CHECK(hi == doctest::Approx(97.5).epsilon(0.02));
  CHECK(out[0].pixels[0] == doctest::Approx((50.0 - lo) / (hi - lo)).epsilon(1e-6));
  CHECK(out[0].pixels[0] == doctest::Approx(0.5).epsilon(0.03));
  const auto [mn, mx] = std::minmax_element(out[0].pixels.begin(), out[0].pixels.end());
  CHECK(*mn == 0.0f);
  CHECK(*mx == 1.0f);
}

TEST_CASE("percentile window spans the whole volume") {
  // Slice 0 holds the low values, slice 1 the high ones.
  std::vector<float> v(200);
  for (int i = 0; i < 200; ++i) v[i] = static_cast<float>(i);
  const auto out = normalize_percentile(volume_of(v, 2, 10, 10));
  REQUIRE(out.size() == 2);
  CHECK(out[0].pixels.front() == 0.0f);
  CHECK(out[1].pixels.back() == 1.0f);
  CHECK(out[0].pixels[50] < 0.3f);
}

TEST_CASE("constant volume normalizes to one half") {
  const auto out = normalize_percentile(volume_of(std::vector<float>(12, 7.0f), 3, 2, 2));
  for (const auto& s : out)
    for (const float p : s.pixels) CHECK(p == 0.5f);
}

TEST_CASE("hounsfield window") {
  CHECK(normalize_hu_value(-1000) == 0.0f);
  CHECK(normalize_hu_value(1000) == 1.0f);
  CHECK(normalize_hu_value(0) == 0.5f);
  CHECK(normalize_hu_value(1500) == 1.0f);
  CHECK(normalize_hu_value(-3000) == 0.0f);
  float prev = -1.0f;
  for (float hu = -1500; hu <= 1500; hu += 7.5f) {
    CHECK(normalize_hu_value(hu) >= prev);
    prev = normalize_hu_value(hu);
  }
}

TEST_CASE("bilinear resampling") {
  IntensityImage img;
  img.height = img.width = 2;
  img.pixels = {0, 1, 2, 3};
  img.spacing = {2.0f, 4.0f};
  const auto up = resample_bilinear(img, 3, 3);
  CHECK(up.pixels[4] == 1.5f);
  CHECK(up.pixels[0] == 0.0f);
  CHECK(up.pixels[8] == 3.0f);
  CHECK(up.spacing.row_mm == doctest::Approx(2.0 * 2 / 3));
  CHECK(resample_bilinear(img, 2, 2).pixels == img.pixels);

  IntensityImage flat;
  flat.height = 5;
  flat.width = 7;
  flat.pixels.assign(35, 0.3f);
  const auto there = resample_bilinear(flat, 13, 4), back = resample_bilinear(there, 5, 7);
  for (const float p : there.pixels) CHECK(p == 0.3f);
  CHECK(back.pixels == flat.pixels);
}

TEST_CASE("nearest resampling keeps classes") {
  LabelMap checker;
  checker.height = checker.width = 2;
  checker.classes = {0, 1, 1, 0};
  const auto up = resample_nearest(checker, 4, 4);
  CHECK(up.classes == std::vector<int32_t>{0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0});
  CHECK(resample_nearest(checker, 2, 2).classes == checker.classes);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 1);
  LabelMap big;
  big.height = big.width = 17;
  big.n_classes = 4;
  big.classes.resize(17 * 17);
  for (auto& c : big.classes) c = cls(rng) * 3;
  const auto small = resample_nearest(big, 5, 9);
  for (const auto c : small.classes) CHECK((c == 0 || c == 3));
}

TEST_CASE("unpaired sampler draws are independent") {
  const std::vector<size_t> src{4, 4, 4, 4}, tgt{4, 4, 4, 4, 4};
  UnpairedSampler s(src, tgt, 1, make_stream(5, "sampler"));
  std::map<std::pair<size_t, size_t>, double> joint;
  std::vector<double> rows(4), cols(5);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto b = s.next();
    joint[{b.source[0].scan, b.target[0].scan}] += 1;
    rows[b.source[0].scan] += 1;
    cols[b.target[0].scan] += 1;
  }
  double chi2 = 0.0;
  for (size_t r = 0; r < 4; ++r)
    for (size_t c = 0; c < 5; ++c) {
      const double e = rows[r] * cols[c] / n;
      chi2 += (joint[{r, c}] - e) * (joint[{r, c}] - e) / e;
    }
  const double p = gamma_q((4 - 1) * (5 - 1) / 2.0, chi2 / 2.0);
  CHECK(p > 0.01);
}

TEST_CASE("sampler weights scans by slice count and replays") {
  const std::vector<size_t> src{8, 16}, tgt{3};
  UnpairedSampler a(src, tgt, 2, make_stream(6, "sampler")), b(src, tgt, 2, make_stream(6, "sampler"));
  double counts[2] = {0, 0};
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next(), y = b.next();
    REQUIRE(x.source.size() == 2);
    for (size_t k = 0; k < 2; ++k) {
      CHECK(x.source[k].scan == y.source[k].scan);
      CHECK(x.source[k].slice == y.source[k].slice);
      counts[x.source[k].scan] += 1;
    }
  }
  // 20000 draws with p = 2/3: the ratio's standard error is about 0.03.
  CHECK(counts[1] / counts[0] == doctest::Approx(2.0).epsilon(0.08));
  CHECK_THROWS(UnpairedSampler({}, tgt, 1, make_stream(0, "sampler")));
}

TEST_CASE("phantom generation is deterministic") {
  PhantomSpec spec;
  spec.n_source_scans = 2;
  spec.n_source_val_scans = 1;
  spec.n_target_scans = 2;
  spec.n_target_supervised_scans = 1;
  spec.n_target_supervised_val_scans = 1;
  spec.slices_per_scan = 4;
  spec.image_size = 32;
  spec.native_size = 48;
  const auto a = phantom_generate(spec), b = phantom_generate(spec);
  REQUIRE(a.source_train.size() == 2);
  for (size_t i = 0; i < 2; ++i)
    for (size_t z = 0; z < 4; ++z) {
      CHECK(a.source_train[i].slices[z].pixels == b.source_train[i].slices[z].pixels);
      CHECK(a.target_train[i].slices[z].pixels == b.target_train[i].slices[z].pixels);
      CHECK(a.eval.target_eval[i].labels[z].classes == b.eval.target_eval[i].labels[z].classes);
    }
  for (const auto& s : a.target_train) CHECK(s.labels.empty());
  spec.seed = 1;
  const auto c = phantom_generate(spec);
  CHECK(c.source_train[0].slices[0].pixels != a.source_train[0].slices[0].pixels);
}

TEST_CASE("organ pixel fraction lies within the ellipse-family area bounds") {
  PhantomSpec spec;
  spec.n_source_scans = 6;
  spec.n_source_val_scans = 0;
  spec.n_target_scans = 1;
  spec.n_target_supervised_scans = 0;
  spec.n_target_supervised_val_scans = 0;
  const auto ds = phantom_generate(spec);
  // Cross-section area is pi * rx * ry * s^2 with r in [rmin, rmax] and s in [smin, 1].
  const double n = spec.image_size, pi = std::numbers::pi;
  const double lo = pi * std::pow(spec.organ_radius_min * spec.organ_min_scale, 2);
  const double hi = pi * std::pow(spec.organ_radius_max, 2);
  // One ring of pixels of discretization slack around the largest ellipse.
  const double slack = 2.0 * pi * spec.organ_radius_max * n / (n * n);
  for (const auto& scan : ds.source_train)
    for (const auto& l : scan.labels) {
      const double frac = std::count(l.classes.begin(), l.classes.end(), 1) / (n * n);
      CHECK(frac >= lo - slack);
      CHECK(frac <= hi + slack);
    }
}

TEST_CASE("modalities differ in organ intensity distribution") {
  PhantomSpec spec;
  std::vector<float> src, tgt;
  for (int k = 0; k < 4; ++k) {
    Rng r1 = make_stream(10 + k, "world"), r2 = r1;
    const auto a = phantom_raw_scan(spec, Modality::source, "a", r1, spec.image_size);
    const auto b = phantom_raw_scan(spec, Modality::target, "b", r2, spec.image_size);
    const auto sa = preprocess_scan(a, spec.image_size, true), sb = preprocess_scan(b, spec.image_size, true);
    for (size_t z = 0; z < sa.slices.size(); ++z) {
      REQUIRE(sa.labels[z].classes == sb.labels[z].classes);
      for (size_t i = 0; i < sa.labels[z].classes.size(); ++i)
        if (sa.labels[z].classes[i] == 1) {
          src.push_back(sa.slices[z].pixels[i]);
          tgt.push_back(sb.slices[z].pixels[i]);
        }
    }
  }
  REQUIRE(src.size() > 100);
  CHECK(ks_statistic(src, tgt) > 0.2);
}

TEST_CASE("preprocessed intensities stay in the unit interval") {
  PhantomSpec spec;
  spec.native_size = 96;
  Rng rng = make_stream(3, "world");
  const auto raw = phantom_raw_scan(spec, Modality::target, "t", rng, spec.native_size);
  const auto scan = preprocess_scan(raw, 64, true);
  for (const auto& s : scan.slices) {
    CHECK(s.height == 64);
    for (const float p : s.pixels) CHECK((p >= 0.0f && p <= 1.0f));
  }
  for (const auto& l : scan.labels) CHECK_NOTHROW(l.validate());
}
