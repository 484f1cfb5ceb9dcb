#include "synseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "synseg/log.hpp"

namespace synseg {

namespace {

void check_same_shape(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("label maps differ in shape");
}

struct Point3 {
  double z, y, x;
};

std::vector<Point3> pooled_boundary(std::span<const LabelMap> maps, int class_id, Spacing sp, double dz) {
  std::vector<Point3> pts;
  for (size_t s = 0; s < maps.size(); ++s) {
    for (const auto& [r, c] : boundary_pixels(maps[s], class_id)) {
      pts.push_back({static_cast<double>(s) * dz, r * static_cast<double>(sp.row_mm), c * static_cast<double>(sp.col_mm)});
    }
  }
  return pts;
}

double sum_nearest(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  double total = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    total += std::sqrt(best);
  }
  return total;
}

}  // namespace

double dice(const LabelMap& pred, const LabelMap& truth, int class_id) {
  return dice(std::span(&pred, 1), std::span(&truth, 1), class_id);
}

double dice(std::span<const LabelMap> pred, std::span<const LabelMap> truth, int class_id) {
  if (pred.size() != truth.size()) throw std::invalid_argument("slice counts differ");
  uint64_t a = 0, b = 0, both = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    check_same_shape(pred[s], truth[s]);
    for (size_t i = 0; i < pred[s].classes.size(); ++i) {
      const bool in_a = pred[s].classes[i] == class_id;
      const bool in_b = truth[s].classes[i] == class_id;
      a += in_a;
      b += in_b;
      both += in_a && in_b;
    }
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& mask, int class_id) {
  std::vector<std::pair<int, int>> out;
  auto fg = [&](int r, int c) {
    return r >= 0 && c >= 0 && r < mask.height && c < mask.width && mask.at(r, c) == class_id;
  };
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (fg(r, c) && (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1))) out.emplace_back(r, c);
    }
  }
  return out;
}

std::optional<double> asd(const LabelMap& pred, const LabelMap& truth, int class_id, Spacing spacing) {
  return asd(std::span(&pred, 1), std::span(&truth, 1), class_id, spacing, 1.0);
}

std::optional<double> asd(std::span<const LabelMap> pred, std::span<const LabelMap> truth, int class_id,
                          Spacing spacing, double slice_thickness_mm) {
  if (pred.size() != truth.size()) throw std::invalid_argument("slice counts differ");
  for (size_t s = 0; s < pred.size(); ++s) check_same_shape(pred[s], truth[s]);
  const auto a = pooled_boundary(pred, class_id, spacing, slice_thickness_mm);
  const auto b = pooled_boundary(truth, class_id, spacing, slice_thickness_mm);
  if (a.empty() || b.empty()) {
    warn("surface distance undefined for an empty mask (class " + std::to_string(class_id) + ")");
    return std::nullopt;
  }
  return (sum_nearest(a, b) + sum_nearest(b, a)) / static_cast<double>(a.size() + b.size());
}

std::vector<double> signed_rank_midranks(std::span<const double> abs_diffs) {
  const size_t n = abs_diffs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return abs_diffs[i] < abs_diffs[j]; });
  std::vector<double> ranks(n);
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  std::vector<double> d, absd;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    if (diff != 0.0) {
      d.push_back(diff);
      absd.push_back(std::abs(diff));
    }
  }
  WilcoxonResult res;
  res.n = static_cast<int>(d.size());
  if (d.empty()) {
    warn("wilcoxon: all differences are zero; p = 1");
    res.exact = true;
    return res;
  }
  const auto ranks = signed_rank_midranks(absd);
  double w_plus = 0.0, w_minus = 0.0;
  for (size_t i = 0; i < d.size(); ++i) (d[i] > 0 ? w_plus : w_minus) += ranks[i];
  res.statistic = std::min(w_plus, w_minus);
  const int n = res.n;

  if (n <= kWilcoxonExactMaxN) {
    // Mid-ranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of W+ over all 2^n sign patterns is a subset-sum count.
    std::vector<int> r2(d.size());
    int total = 0;
    for (size_t i = 0; i < d.size(); ++i) total += r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
    std::vector<double> count(static_cast<size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (const int r : r2) {
      for (int s = reach; s >= 0; --s) count[static_cast<size_t>(s + r)] += count[static_cast<size_t>(s)];
      reach += r;
    }
    const long w2 = std::lround(2.0 * res.statistic);
    double tail = 0.0;
    for (long s = 0; s <= w2; ++s) tail += count[static_cast<size_t>(s)];
    res.p_two_sided = std::min(1.0, 2.0 * tail / std::ldexp(1.0, n));
    res.exact = true;
    return res;
  }

  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  double tie_term = 0.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size();) {
    size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double z = (res.statistic - mean + 0.5) / std::sqrt(var);
  res.p_two_sided = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
  return res;
}

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  Summary s;
  s.n = values.size();
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (const double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

}  // namespace synseg
