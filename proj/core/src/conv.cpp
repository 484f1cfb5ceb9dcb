#include <cmath>

#include "gemm.hpp"
#include "synseg/ops.hpp"

namespace synseg {

namespace {

using detail::make_result;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

constexpr int kDirectChannelLimit = 4;

// For one spatial axis: source index for each (kernel tap, output position),
// or -1 where the tap lands in zero padding.
struct AxisMap {
  int out = 0;
  std::vector<int32_t> src;

  int32_t at(int k, int o) const { return src[static_cast<size_t>(k * out + o)]; }
};

AxisMap build_axis(int in, int out, int kernel, int stride, int pad, PadMode mode) {
  AxisMap m;
  m.out = out;
  m.src.resize(static_cast<size_t>(kernel * out));
  for (int k = 0; k < kernel; ++k) {
    for (int o = 0; o < out; ++o) {
      int i = o * stride - pad + k;
      if (mode == PadMode::reflect) {
        if (i < 0) i = -i;
        if (i >= in) i = 2 * in - 2 - i;
      } else if (i < 0 || i >= in) {
        i = -1;
      }
      m.src[static_cast<size_t>(k * out + o)] = i;
    }
  }
  return m;
}

// plane: [channels, in_h, in_w] -> cols: [channels*K*K, out_h*out_w]
void im2col(const float* plane, int channels, int in_h, int in_w, int kernel, const AxisMap& rows,
            const AxisMap& cols_map, float* cols) {
  const int oh_n = rows.out, ow_n = cols_map.out;
  float* dst = cols;
  for (int c = 0; c < channels; ++c) {
    const float* src_c = plane + static_cast<size_t>(c) * in_h * in_w;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        for (int oh = 0; oh < oh_n; ++oh) {
          const int r = rows.at(kh, oh);
          if (r < 0) {
            std::fill(dst, dst + ow_n, 0.0f);
          } else {
            const float* src_r = src_c + static_cast<size_t>(r) * in_w;
            const int32_t* cm = cols_map.src.data() + static_cast<size_t>(kw) * ow_n;
            for (int ow = 0; ow < ow_n; ++ow) dst[ow] = cm[ow] < 0 ? 0.0f : src_r[cm[ow]];
          }
          dst += ow_n;
        }
      }
    }
  }
}

// Scatter-add adjoint of im2col.
void col2im(const float* cols, int channels, int in_h, int in_w, int kernel, const AxisMap& rows,
            const AxisMap& cols_map, float* plane) {
  const int oh_n = rows.out, ow_n = cols_map.out;
  const float* src = cols;
  for (int c = 0; c < channels; ++c) {
    float* dst_c = plane + static_cast<size_t>(c) * in_h * in_w;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        for (int oh = 0; oh < oh_n; ++oh) {
          const int r = rows.at(kh, oh);
          if (r >= 0) {
            float* dst_r = dst_c + static_cast<size_t>(r) * in_w;
            const int32_t* cm = cols_map.src.data() + static_cast<size_t>(kw) * ow_n;
            for (int ow = 0; ow < ow_n; ++ow) {
              if (cm[ow] >= 0) dst_r[cm[ow]] += src[ow];
            }
          }
          src += ow_n;
        }
      }
    }
  }
}

void check_weight(const Tensor& weight, const Tensor& bias, int64_t bias_len, const char* op) {
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ShapeError(std::string(op) + ": weight must be [*, *, K, K], got " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != bias_len)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " does not match");
  }
}

void add_bias(float* out, const float* bias, int64_t channels, int64_t plane) {
  for (int64_t o = 0; o < channels; ++o) {
    const float b = bias[o];
    float* p = out + o * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] += b;
  }
}

void accumulate_bias_grad(const float* g, int64_t channels, int64_t plane, std::vector<float>& gb) {
  for (int64_t o = 0; o < channels; ++o) {
    double acc = 0.0;
    const float* p = g + o * plane;
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    gb[static_cast<size_t>(o)] += static_cast<float>(acc);
  }
}

// Stride-1 convolution evaluated directly on a padded copy of the input.
// Used when one side of the channel product is tiny (stem/head layers),
// where im2col + GEMM degenerates into a memory-bound GEMV.
Tensor conv2d_direct(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  const int n = static_cast<int>(input.dim(0)), c = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const int o = static_cast<int>(weight.dim(0)), k = static_cast<int>(weight.dim(2));
  const int hp = h + 2 * opt.pad, wp = w + 2 * opt.pad;
  const int ho = hp - k + 1, wo = wp - k + 1;
  // Padded coordinate -> source index (or -1 for zero padding).
  const AxisMap rows = build_axis(h, hp, 1, 1, opt.pad, opt.pad_mode);
  const AxisMap colmap = build_axis(w, wp, 1, 1, opt.pad, opt.pad_mode);

  const size_t padded_plane = static_cast<size_t>(hp) * wp;
  auto padded = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * c * padded_plane, 0.0f);
  const float* x = input.data().data();
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const float* src = x + (static_cast<size_t>(s) * c + ch) * h * w;
      float* dst = padded->data() + (static_cast<size_t>(s) * c + ch) * padded_plane;
      for (int r = 0; r < hp; ++r) {
        const int sr = rows.src[static_cast<size_t>(r)];
        if (sr < 0) continue;
        for (int q = 0; q < wp; ++q) {
          const int sc = colmap.src[static_cast<size_t>(q)];
          if (sc >= 0) dst[r * wp + q] = src[sr * w + sc];
        }
      }
    }
  }

  const size_t plane_out = static_cast<size_t>(ho) * wo;
  std::vector<float> out(static_cast<size_t>(n) * o * plane_out, 0.0f);
  const float* wt = weight.data().data();
  for (int s = 0; s < n; ++s) {
    for (int oc = 0; oc < o; ++oc) {
      float* op = out.data() + (static_cast<size_t>(s) * o + oc) * plane_out;
      if (bias.defined()) std::fill(op, op + plane_out, bias.data()[static_cast<size_t>(oc)]);
      for (int ch = 0; ch < c; ++ch) {
        const float* pp = padded->data() + (static_cast<size_t>(s) * c + ch) * padded_plane;
        const float* wk = wt + (static_cast<size_t>(oc) * c + ch) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const float wv = wk[kh * k + kw];
            for (int y = 0; y < ho; ++y) {
              const float* in_row = pp + static_cast<size_t>(y + kh) * wp + kw;
              float* out_row = op + static_cast<size_t>(y) * wo;
              for (int xo = 0; xo < wo; ++xo) out_row[xo] += wv * in_row[xo];
            }
          }
        }
      }
    }
  }

  NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.defined() ? bias.node() : nullptr;
  return make_result(
      "conv2d", {n, o, ho, wo}, std::move(out), {in_n, w_n, b_n},
      [=, rows = std::move(rows), colmap = std::move(colmap)](Node& self) {
        std::vector<float> gpad;
        std::vector<float> partial(static_cast<size_t>(wo));
        if (in_n->requires_grad) gpad.assign(static_cast<size_t>(c) * padded_plane, 0.0f);
        for (int s = 0; s < n; ++s) {
          if (in_n->requires_grad) std::fill(gpad.begin(), gpad.end(), 0.0f);
          for (int oc = 0; oc < o; ++oc) {
            const float* g = self.grad.data() + (static_cast<size_t>(s) * o + oc) * plane_out;
            if (b_n && b_n->requires_grad) {
              double acc = 0.0;
              for (size_t i = 0; i < plane_out; ++i) acc += g[i];
              b_n->grad_buffer()[static_cast<size_t>(oc)] += static_cast<float>(acc);
            }
            for (int ch = 0; ch < c; ++ch) {
              const float* pp = padded->data() + (static_cast<size_t>(s) * c + ch) * padded_plane;
              const size_t wbase = (static_cast<size_t>(oc) * c + ch) * k * k;
              for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                  if (w_n->requires_grad) {
                    // Column-wise partials keep the inner loop vectorizable.
                    std::fill(partial.begin(), partial.end(), 0.0f);
                    for (int y = 0; y < ho; ++y) {
                      const float* in_row = pp + static_cast<size_t>(y + kh) * wp + kw;
                      const float* g_row = g + static_cast<size_t>(y) * wo;
                      for (int xo = 0; xo < wo; ++xo) partial[static_cast<size_t>(xo)] += g_row[xo] * in_row[xo];
                    }
                    float acc = 0.0f;
                    for (const float v : partial) acc += v;
                    w_n->grad_buffer()[wbase + kh * k + kw] += acc;
                  }
                  if (in_n->requires_grad) {
                    const float wv = w_n->data[wbase + kh * k + kw];
                    float* gp = gpad.data() + static_cast<size_t>(ch) * padded_plane;
                    for (int y = 0; y < ho; ++y) {
                      float* gp_row = gp + static_cast<size_t>(y + kh) * wp + kw;
                      const float* g_row = g + static_cast<size_t>(y) * wo;
                      for (int xo = 0; xo < wo; ++xo) gp_row[xo] += wv * g_row[xo];
                    }
                  }
                }
              }
            }
          }
          if (in_n->requires_grad) {
            float* gi = in_n->grad_buffer().data() + static_cast<size_t>(s) * c * h * w;
            for (int ch = 0; ch < c; ++ch) {
              const float* gp = gpad.data() + static_cast<size_t>(ch) * padded_plane;
              float* gic = gi + static_cast<size_t>(ch) * h * w;
              for (int r = 0; r < hp; ++r) {
                const int sr = rows.src[static_cast<size_t>(r)];
                if (sr < 0) continue;
                for (int q = 0; q < wp; ++q) {
                  const int sc = colmap.src[static_cast<size_t>(q)];
                  if (sc >= 0) gic[sr * w + sc] += gp[r * wp + q];
                }
              }
            }
          }
        }
      });
}

}  // namespace

int64_t conv2d_output_size(int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

int64_t conv_transpose2d_output_size(int64_t in, int kernel, int stride, int pad, int output_pad) {
  return (in - 1) * stride - 2 * pad + kernel + output_pad;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
  check_weight(weight, bias, weight.dim(0), "conv2d");
  const int n = static_cast<int>(input.dim(0)), c = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const int o = static_cast<int>(weight.dim(0)), k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (opt.stride < 1 || opt.pad < 0) throw ShapeError("conv2d: invalid stride/pad");
  if (h + 2 * opt.pad < k || w + 2 * opt.pad < k) throw ShapeError("conv2d: kernel larger than padded input");
  if (opt.pad_mode == PadMode::reflect && (opt.pad >= h || opt.pad >= w)) {
    throw ShapeError("conv2d: reflect padding must be smaller than the input");
  }
  if (opt.stride == 1 && (o <= kDirectChannelLimit || c <= kDirectChannelLimit)) {
    return conv2d_direct(input, weight, bias, opt);
  }
  const int ho = static_cast<int>(conv2d_output_size(h, k, opt.stride, opt.pad));
  const int wo = static_cast<int>(conv2d_output_size(w, k, opt.stride, opt.pad));
  const AxisMap rows = build_axis(h, ho, k, opt.stride, opt.pad, opt.pad_mode);
  const AxisMap colmap = build_axis(w, wo, k, opt.stride, opt.pad, opt.pad_mode);

  const int ckk = c * k * k, plane_out = ho * wo, plane_in = h * w;
  auto cols = std::make_shared<std::vector<float>>(static_cast<size_t>(n) * ckk * plane_out);
  std::vector<float> out(static_cast<size_t>(n) * o * plane_out, 0.0f);
  const float* x = input.data().data();
  const float* wt = weight.data().data();
  for (int s = 0; s < n; ++s) {
    float* cs = cols->data() + static_cast<size_t>(s) * ckk * plane_out;
    im2col(x + static_cast<size_t>(s) * c * plane_in, c, h, w, k, rows, colmap, cs);
    float* os = out.data() + static_cast<size_t>(s) * o * plane_out;
    detail::gemm(false, false, o, plane_out, ckk, 1.0f, wt, cs, 0.0f, os);
    if (bias.defined()) add_bias(os, bias.data().data(), o, plane_out);
  }

  NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.defined() ? bias.node() : nullptr;
  return make_result(
      "conv2d", {n, o, ho, wo}, std::move(out), {in_n, w_n, b_n},
      [=, rows = std::move(rows), colmap = std::move(colmap)](Node& self) {
        const float* g = self.grad.data();
        std::vector<float> gcols;
        if (in_n->requires_grad) gcols.resize(static_cast<size_t>(ckk) * plane_out);
        for (int s = 0; s < n; ++s) {
          const float* gs = g + static_cast<size_t>(s) * o * plane_out;
          const float* cs = cols->data() + static_cast<size_t>(s) * ckk * plane_out;
          if (w_n->requires_grad) {
            detail::gemm(false, true, o, ckk, plane_out, 1.0f, gs, cs, 1.0f, w_n->grad_buffer().data());
          }
          if (b_n && b_n->requires_grad) accumulate_bias_grad(gs, o, plane_out, b_n->grad_buffer());
          if (in_n->requires_grad) {
            detail::gemm(true, false, ckk, plane_out, o, 1.0f, w_n->data.data(), gs, 0.0f, gcols.data());
            col2im(gcols.data(), c, h, w, k, rows, colmap,
                   in_n->grad_buffer().data() + static_cast<size_t>(s) * c * plane_in);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad,
                        int output_pad) {
  if (input.rank() != 4) throw ShapeError("conv_transpose2d: input must be NCHW");
  check_weight(weight, bias, weight.dim(1), "conv_transpose2d");
  const int n = static_cast<int>(input.dim(0)), cin = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2)), w = static_cast<int>(input.dim(3));
  const int cout = static_cast<int>(weight.dim(1)), k = static_cast<int>(weight.dim(2));
  if (weight.dim(0) != cin) throw ShapeError("conv_transpose2d: channel mismatch");
  if (stride < 1 || pad < 0 || output_pad < 0 || output_pad >= stride) {
    throw ShapeError("conv_transpose2d: invalid stride/pad/output_pad");
  }
  const int64_t ho64 = conv_transpose2d_output_size(h, k, stride, pad, output_pad);
  const int64_t wo64 = conv_transpose2d_output_size(w, k, stride, pad, output_pad);
  if (ho64 <= 0 || wo64 <= 0) throw ShapeError("conv_transpose2d: nonpositive output size");
  const int ho = static_cast<int>(ho64), wo = static_cast<int>(wo64);
  // Geometry of the conv2d whose input-gradient this op is.
  const AxisMap rows = build_axis(ho, h, k, stride, pad, PadMode::zero);
  const AxisMap colmap = build_axis(wo, w, k, stride, pad, PadMode::zero);

  const int ckk = cout * k * k, plane_in = h * w, plane_out = ho * wo;
  std::vector<float> out(static_cast<size_t>(n) * cout * plane_out, 0.0f);
  std::vector<float> cols(static_cast<size_t>(ckk) * plane_in);
  const float* x = input.data().data();
  const float* wt = weight.data().data();
  for (int s = 0; s < n; ++s) {
    detail::gemm(true, false, ckk, plane_in, cin, 1.0f, wt, x + static_cast<size_t>(s) * cin * plane_in, 0.0f,
                 cols.data());
    float* os = out.data() + static_cast<size_t>(s) * cout * plane_out;
    col2im(cols.data(), cout, ho, wo, k, rows, colmap, os);
    if (bias.defined()) add_bias(os, bias.data().data(), cout, plane_out);
  }

  NodePtr in_n = input.node(), w_n = weight.node(), b_n = bias.defined() ? bias.node() : nullptr;
  return make_result(
      "conv_transpose2d", {n, cout, ho, wo}, std::move(out), {in_n, w_n, b_n},
      [=, rows = std::move(rows), colmap = std::move(colmap)](Node& self) {
        std::vector<float> gcols(static_cast<size_t>(ckk) * plane_in);
        for (int s = 0; s < n; ++s) {
          const float* gs = self.grad.data() + static_cast<size_t>(s) * cout * plane_out;
          im2col(gs, cout, ho, wo, k, rows, colmap, gcols.data());
          if (in_n->requires_grad) {
            detail::gemm(false, false, cin, plane_in, ckk, 1.0f, w_n->data.data(), gcols.data(), 1.0f,
                         in_n->grad_buffer().data() + static_cast<size_t>(s) * cin * plane_in);
          }
          if (w_n->requires_grad) {
            detail::gemm(false, true, cin, ckk, plane_in, 1.0f,
                         in_n->data.data() + static_cast<size_t>(s) * cin * plane_in, gcols.data(), 1.0f,
                         w_n->grad_buffer().data());
          }
          if (b_n && b_n->requires_grad) accumulate_bias_grad(gs, cout, plane_out, b_n->grad_buffer());
        }
      });
}

Tensor instance_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, float eps) {
  if (input.rank() != 4) throw ShapeError("instance_norm2d: input must be NCHW");
  const int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c) throw ShapeError("instance_norm2d: affine size mismatch");
  const float* x = input.data().data();
  const float* ga = gamma.data().data();
  const float* be = beta.data().data();
  std::vector<float> out(static_cast<size_t>(n * c * hw));
  auto xhat = std::make_shared<std::vector<float>>(out.size());
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(n * c));
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t base = static_cast<size_t>((s * c + ch) * hw);
      double m = 0.0;
      for (int64_t i = 0; i < hw; ++i) m += x[base + i];
      m /= static_cast<double>(hw);
      double var = 0.0;
      for (int64_t i = 0; i < hw; ++i) {
        const double d = x[base + i] - m;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
      (*inv_std)[static_cast<size_t>(s * c + ch)] = is;
      const float mf = static_cast<float>(m);
      for (int64_t i = 0; i < hw; ++i) {
        const float xh = (x[base + i] - mf) * is;
        (*xhat)[base + i] = xh;
        out[base + i] = ga[ch] * xh + be[ch];
      }
    }
  }
  NodePtr in_n = input.node(), g_n = gamma.node(), b_n = beta.node();
  return make_result(
      "instance_norm2d", input.shape(), std::move(out), {in_n, g_n, b_n}, [=](Node& self) {
        const float* g = self.grad.data();
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const size_t base = static_cast<size_t>((s * c + ch) * hw);
            const float* xh = xhat->data() + base;
            double sum_g = 0.0, sum_gx = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
              sum_g += g[base + i];
              sum_gx += static_cast<double>(g[base + i]) * xh[i];
            }
            if (g_n->requires_grad) g_n->grad_buffer()[static_cast<size_t>(ch)] += static_cast<float>(sum_gx);
            if (b_n->requires_grad) b_n->grad_buffer()[static_cast<size_t>(ch)] += static_cast<float>(sum_g);
            if (in_n->requires_grad) {
              const float gam = g_n->data[static_cast<size_t>(ch)];
              const float is = (*inv_std)[static_cast<size_t>(s * c + ch)];
              const float mg = static_cast<float>(sum_g / static_cast<double>(hw));
              const float mgx = static_cast<float>(sum_gx / static_cast<double>(hw));
              float* gi = in_n->grad_buffer().data() + base;
              for (int64_t i = 0; i < hw; ++i) gi[i] += gam * is * (g[base + i] - mg - xh[i] * mgx);
            }
          }
        }
      });
}

}  // namespace synseg
