#include "doctest.h"
#include "metric_oracles.hpp"

#include <cmath>
#include <random>

#include "synseg/metrics.hpp"

using namespace synseg;

TEST_CASE("dice and asd agree with brute force on random small masks") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto [a, b] = oracle::random_mask_pair(rng);
    for (int c = 1; c <= 2; ++c) {
      CHECK(std::abs(dice(a, b, c) - oracle::dice(a, b, c)) <= 1e-9);
      const auto got = asd(a, b, c, a.spacing);
      const double want = oracle::asd(a, b, c, a.spacing.row_mm, a.spacing.col_mm);
      CHECK(got.has_value() == !std::isnan(want));
      if (got) CHECK(std::abs(*got - want) <= 1e-9);
    }
  }
}

TEST_CASE("dice edge cases") {
  LabelMap a;
  a.height = a.width = 2;
  a.classes = {0, 0, 0, 0};
  LabelMap b = a;
  CHECK(dice(a, b, 1) == 1.0);
  b.classes = {1, 0, 0, 0};
  CHECK(dice(a, b, 1) == 0.0);
  a.classes = {1, 1, 0, 0};
  CHECK(dice(a, b, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  LabelMap empty = a;
  empty.classes = {0, 0, 0, 0};
  CHECK_FALSE(asd(empty, b, 1, {}).has_value());
}

TEST_CASE("asd is symmetric and scales with uniform spacing") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    auto [a, b] = oracle::random_mask_pair(rng);
    const auto ab = asd(a, b, 1, a.spacing), ba = asd(b, a, 1, a.spacing);
    REQUIRE(ab.has_value() == ba.has_value());
    if (!ab) continue;
    CHECK(*ab == doctest::Approx(*ba).epsilon(1e-12));
    const Spacing scaled{a.spacing.row_mm * 2.0f, a.spacing.col_mm * 2.0f};
    CHECK(*asd(a, b, 1, scaled) == doctest::Approx(2.0 * *ab).epsilon(1e-9));
    CHECK(*asd(a, a, 1, a.spacing) == 0.0);
  }
}

TEST_CASE("pooled subject metrics match brute force over the stacked volume") {
  std::mt19937_64 rng(13);
  std::vector<LabelMap> pred, truth;
  const auto [first, _] = oracle::random_mask_pair(rng);
  for (int s = 0; s < 3; ++s) {
    LabelMap a = first, b = first;
    std::bernoulli_distribution on(0.4);
    for (auto& c : a.classes) c = on(rng);
    for (auto& c : b.classes) c = on(rng);
    pred.push_back(a);
    truth.push_back(b);
  }
  // Dice over the union of slices.
  size_t inter = 0, sum = 0;
  for (size_t s = 0; s < 3; ++s)
    for (size_t i = 0; i < pred[s].classes.size(); ++i) {
      inter += pred[s].classes[i] == 1 && truth[s].classes[i] == 1;
      sum += (pred[s].classes[i] == 1) + (truth[s].classes[i] == 1);
    }
  CHECK(dice(pred, truth, 1) == doctest::Approx(2.0 * inter / sum).epsilon(1e-12));

  // 3-D all-pairs surface distance with slice index scaled by the thickness.
  const double thick = 2.5, ry = first.spacing.row_mm, rx = first.spacing.col_mm;
  struct P { double z, y, x; };
  auto surface = [&](const std::vector<LabelMap>& v) {
    std::vector<P> out;
    for (size_t s = 0; s < v.size(); ++s)
      for (const auto& [y, x] : oracle::boundary(v[s], 1)) out.push_back({s * thick, y * ry, x * rx});
    return out;
  };
  const auto sa = surface(pred), sb = surface(truth);
  double total = 0.0;
  for (const auto* pair : {&sa, &sb}) {
    const auto& other = pair == &sa ? sb : sa;
    for (const auto& p : *pair) {
      double best = 1e300;
      for (const auto& q : other) best = std::min(best, std::hypot(p.z - q.z, p.y - q.y, p.x - q.x));
      total += best;
    }
  }
  const auto got = asd(pred, truth, 1, first.spacing, thick);
  REQUIRE(got.has_value());
  CHECK(*got == doctest::Approx(total / (sa.size() + sb.size())).epsilon(1e-9));
}

TEST_CASE("wilcoxon exact p equals full sign enumeration for n <= 12") {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> grid(-6, 6);
  std::normal_distribution<double> g;
  for (int n = 1; n <= 12; ++n)
    for (int k = 0; k < 50; ++k) {
      std::vector<double> a(n), b(n);
      const bool tied = k % 2 == 0;
      for (int i = 0; i < n; ++i) {
        a[i] = tied ? grid(rng) * 0.25 : g(rng);
        b[i] = tied ? grid(rng) * 0.25 : g(rng);
      }
      const auto r = wilcoxon_signed_rank(a, b);
      INFO("n=" << n << " k=" << k);
      CHECK(r.exact);
      CHECK(r.p_two_sided == oracle::wilcoxon_exact_p(a, b));
    }
}

TEST_CASE("wilcoxon known distributions") {
  // Five positive differences: only one of 32 patterns is as extreme per tail.
  const std::vector<double> a{1, 2, 3, 4, 5}, zero(5, 0.0);
  const auto r = wilcoxon_signed_rank(a, zero);
  CHECK(r.statistic == 0.0);
  CHECK(r.p_two_sided == 2.0 / 32.0);
  CHECK(wilcoxon_signed_rank(zero, zero).p_two_sided == 1.0);
  // Large sample uses the normal approximation and stays a probability.
  std::vector<double> x(30), y(30, 0.0);
  for (int i = 0; i < 30; ++i) x[i] = i % 3 == 0 ? -(i + 1.0) : i + 1.0;
  const auto big = wilcoxon_signed_rank(x, y);
  CHECK_FALSE(big.exact);
  CHECK(big.p_two_sided > 0.0);
  CHECK(big.p_two_sided <= 1.0);
}

TEST_CASE("midranks average tied positions") {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  const auto r = signed_rank_midranks(v);
  CHECK(r == std::vector<double>{3.5, 1.0, 3.5, 2.0});
}

TEST_CASE("summary uses population deviation") {
  const auto s = summarize({4.0, 1.0, 3.0, 2.0});
  CHECK(s.median == 2.5);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.n == 4);
}
