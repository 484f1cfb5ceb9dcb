#pragma once

// Naive fp64 forward implementations written directly from the operation
// definitions. They share no code with the engine and serve as the
// finite-difference oracles for its analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace synseg::ref {

using Vec = std::vector<double>;

struct Dims4 {
  int n, c, h, w;
  size_t at(int in, int ic, int y, int x) const { return ((static_cast<size_t>(in) * c + ic) * h + y) * w + x; }
  size_t size() const { return static_cast<size_t>(n) * c * h * w; }
};

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Cross-correlation, weight O,I,K,K; reflect or zero padding.
inline Vec conv2d(const Vec& x, Dims4 d, const Vec& w, int out_c, int k, const Vec& b, int stride, int pad,
                  bool reflect, Dims4* out_dims = nullptr) {
  const int oh = (d.h + 2 * pad - k) / stride + 1, ow = (d.w + 2 * pad - k) / stride + 1;
  Dims4 od{d.n, out_c, oh, ow};
  Vec out(od.size(), 0.0);
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < out_c; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b.empty() ? 0.0 : b[o];
          for (int i = 0; i < d.c; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int y = oy * stride - pad + ky, xx = ox * stride - pad + kx;
                if (reflect) {
                  y = reflect_index(y, d.h);
                  xx = reflect_index(xx, d.w);
                } else if (y < 0 || y >= d.h || xx < 0 || xx >= d.w) {
                  continue;
                }
                acc += w[((static_cast<size_t>(o) * d.c + i) * k + ky) * k + kx] * x[d.at(n, i, y, xx)];
              }
          out[od.at(n, o, oy, ox)] = acc;
        }
  if (out_dims) *out_dims = od;
  return out;
}

// Scatter form of the transposed convolution, weight Cin,Cout,K,K.
inline Vec conv_transpose2d(const Vec& x, Dims4 d, const Vec& w, int out_c, int k, const Vec& b, int stride, int pad,
                            int output_pad, Dims4* out_dims = nullptr) {
  const int oh = (d.h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (d.w - 1) * stride - 2 * pad + k + output_pad;
  Dims4 od{d.n, out_c, oh, ow};
  Vec out(od.size(), 0.0);
  for (int n = 0; n < d.n; ++n)
    for (int o = 0; o < out_c; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) out[od.at(n, o, y, xx)] = b.empty() ? 0.0 : b[o];
  for (int n = 0; n < d.n; ++n)
    for (int i = 0; i < d.c; ++i)
      for (int iy = 0; iy < d.h; ++iy)
        for (int ix = 0; ix < d.w; ++ix)
          for (int o = 0; o < out_c; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int y = iy * stride - pad + ky, xx = ix * stride - pad + kx;
                if (y < 0 || y >= oh || xx < 0 || xx >= ow) continue;
                out[od.at(n, o, y, xx)] += x[d.at(n, i, iy, ix)] * w[((static_cast<size_t>(i) * out_c + o) * k + ky) * k + kx];
              }
  if (out_dims) *out_dims = od;
  return out;
}

inline Vec instance_norm(const Vec& x, Dims4 d, const Vec& gamma, const Vec& beta, double eps) {
  Vec out(x.size());
  const size_t plane = static_cast<size_t>(d.h) * d.w;
  for (int n = 0; n < d.n; ++n)
    for (int c = 0; c < d.c; ++c) {
      const size_t base = d.at(n, c, 0, 0);
      double mean = 0.0;
      for (size_t p = 0; p < plane; ++p) mean += x[base + p];
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (size_t p = 0; p < plane; ++p) var += (x[base + p] - mean) * (x[base + p] - mean);
      var /= static_cast<double>(plane);
      for (size_t p = 0; p < plane; ++p) out[base + p] = gamma[c] * (x[base + p] - mean) / std::sqrt(var + eps) + beta[c];
    }
  return out;
}

inline Vec log_softmax(const Vec& x, Dims4 d) {
  Vec out(x.size());
  for (int n = 0; n < d.n; ++n)
    for (int y = 0; y < d.h; ++y)
      for (int xx = 0; xx < d.w; ++xx) {
        double s = 0.0;
        for (int c = 0; c < d.c; ++c) s += std::exp(x[d.at(n, c, y, xx)]);
        for (int c = 0; c < d.c; ++c) out[d.at(n, c, y, xx)] = x[d.at(n, c, y, xx)] - std::log(s);
      }
  return out;
}

inline double weighted_nll(const Vec& logp, Dims4 d, const std::vector<int32_t>& labels, const Vec& weights) {
  double acc = 0.0;
  size_t i = 0;
  for (int n = 0; n < d.n; ++n)
    for (int y = 0; y < d.h; ++y)
      for (int xx = 0; xx < d.w; ++xx, ++i) acc -= weights[labels[i]] * logp[d.at(n, labels[i], y, xx)];
  return acc / static_cast<double>(static_cast<size_t>(d.n) * d.h * d.w);
}

template <typename F>
Vec map(const Vec& x, F f) {
  Vec out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), f);
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace synseg::ref
