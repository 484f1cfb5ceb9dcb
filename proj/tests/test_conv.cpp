#include "doctest.h"
#include "reference_ops.hpp"

#include <random>

#include "synseg/ops.hpp"

using namespace synseg;

namespace {

std::vector<float> randn(std::mt19937_64& rng, size_t n) {
  std::normal_distribution<float> g;
  std::vector<float> v(n);
  for (auto& e : v) e = g(rng);
  return v;
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d and conv_transpose2d are adjoint") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> ch(1, 7), sz(4, 10);
  int tested = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int c = ch(rng), o = ch(rng), h = sz(rng), w = sz(rng);
    const int k = trial % 2 ? 3 : 4, stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : 1;
    const Shape xs{2, c, h, w};
    // conv_transpose2d takes its weight as Cin,Cout,K,K where Cin is the
    // conv's output channel count, which is the same buffer layout.
    const auto wv = randn(rng, static_cast<size_t>(o * c * k * k));
    const auto x = Tensor::from_data(xs, randn(rng, shape_numel(xs)));
    const auto y = conv2d(x, Tensor::from_data({o, c, k, k}, wv), Tensor(), {stride, pad});
    const int op_h = h - ((y.dim(2) - 1) * stride - 2 * pad + k);
    const int op_w = w - ((y.dim(3) - 1) * stride - 2 * pad + k);
    // One output padding serves both axes.
    if (op_h != op_w || op_h >= stride) continue;
    ++tested;
    const auto r = Tensor::from_data(y.shape(), randn(rng, y.numel()));
    const auto back = conv_transpose2d(r, Tensor::from_data({o, c, k, k}, wv), Tensor(), stride, pad, op_h);
    REQUIRE(back.shape() == xs);
    const double lhs = dot(y.data(), r.data()), rhs = dot(x.data(), back.data());
    INFO("c=" << c << " o=" << o << " h=" << h << " k=" << k << " stride=" << stride);
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
  }
  CHECK(tested >= 20);
}

TEST_CASE("conv paths agree with the fp64 reference") {
  std::mt19937_64 rng(22);
  // Few channels take the direct kernel; many take im2col + GEMM.
  for (const auto& [c, o] : {std::pair{1, 1}, {2, 4}, {8, 8}, {16, 32}}) {
    for (const bool reflect : {false, true}) {
      const Shape xs{1, c, 11, 9};
      const auto xv = randn(rng, shape_numel(xs)), wv = randn(rng, static_cast<size_t>(o * c * 9)),
                 bv = randn(rng, static_cast<size_t>(o));
      const auto y = conv2d(Tensor::from_data(xs, xv), Tensor::from_data({o, c, 3, 3}, wv), Tensor::from_data({o}, bv),
                            {1, 1, reflect ? PadMode::reflect : PadMode::zero});
      const auto want = ref::conv2d({xv.begin(), xv.end()}, {1, c, 11, 9}, {wv.begin(), wv.end()}, o, 3,
                                    {bv.begin(), bv.end()}, 1, 1, reflect);
      double err = 0.0, base = 0.0;
      for (size_t i = 0; i < want.size(); ++i) {
        err += (y.data()[i] - want[i]) * (y.data()[i] - want[i]);
        base += want[i] * want[i];
      }
      CHECK(std::sqrt(err / base) < 1e-5);
    }
  }
}
