#include <algorithm>
#include <cmath>
#include <limits>

#include "synseg/ops.hpp"

namespace synseg {

namespace {

using detail::make_result;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

bool is_scalar(const Tensor& t) { return t.numel() == 1 && t.rank() == 0; }

void check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  if (a.shape() != b.shape() && !is_scalar(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, GradA grad_a, GradB grad_b) {
  check_binary(op, a, b);
  const auto& ad = a.data();
  const auto& bd = b.data();
  const bool scalar_b = a.shape() != b.shape();
  std::vector<float> out(ad.size());
  for (size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i], scalar_b ? bd[0] : bd[i]);
  NodePtr an = a.node();
  NodePtr bn = b.node();
  return make_result(op, a.shape(), std::move(out), {an, bn}, [an, bn, scalar_b, grad_a, grad_b](Node& self) {
    const auto& g = self.grad;
    const float* av = an->data.data();
    const float* bv = bn->data.data();
    if (an->requires_grad) {
      float* ga = an->grad_buffer().data();
      if (scalar_b) {
        for (size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], av[i], bv[0]);
      } else {
        for (size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(g[i], av[i], bv[i]);
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      if (scalar_b) {
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += grad_b(g[i], av[i], bv[0]);
        gb[0] += static_cast<float>(acc);
      } else {
        for (size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(g[i], av[i], bv[i]);
      }
    }
  });
}

template <typename Fwd, typename Grad>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Grad grad) {
  if (!x.defined()) throw ShapeError(std::string(op) + ": undefined operand");
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  NodePtr xn = x.node();
  return make_result(op, x.shape(), std::move(out), {xn}, [xn, grad](Node& self) {
    float* gx = xn->grad_buffer().data();
    const float* g = self.grad.data();
    const float* xv = xn->data.data();
    const float* yv = self.data.data();
    const size_t count = self.grad.size();
    for (size_t i = 0; i < count; ++i) gx[i] += g[i] * grad(xv[i], yv[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](float x, float y) { return x + y; },
      [](float g, float, float) { return g; }, [](float g, float, float) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](float x, float y) { return x - y; },
      [](float g, float, float) { return g; }, [](float g, float, float) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](float x, float y) { return x * y; },
      [](float g, float, float y) { return g * y; }, [](float g, float x, float) { return g * x; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](float x) { return -x; }, [](float, float) { return -1.0f; });
}

Tensor scale(const Tensor& a, float factor) {
  return unary(
      "scale", a, [factor](float x) { return x * factor; }, [factor](float, float) { return factor; });
}

Tensor add_scalar(const Tensor& a, float value) {
  return unary(
      "add_scalar", a, [value](float x) { return x + value; }, [](float, float) { return 1.0f; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary(
      "leaky_relu", x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x);
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
  }
  throw std::invalid_argument("unknown activation");
}

Tensor log_sigmoid(const Tensor& x) {
  return unary(
      "log_sigmoid", x, [](float v) { return std::min(v, 0.0f) - std::log1p(std::exp(-std::fabs(v))); },
      // d/dx log sigma(x) = sigma(-x)
      [](float v, float) { return 1.0f / (1.0f + std::exp(v)); });
}

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  double acc = 0.0;
  for (const float v : xd) acc += v;
  NodePtr xn = x.node();
  return make_result("sum", {}, {static_cast<float>(acc)}, {xn}, [xn](Node& self) {
    const float g = self.grad[0];
    for (auto& v : xn->grad_buffer()) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const auto xd = x.data();
  if (xd.empty()) throw ShapeError("mean of empty tensor");
  double acc = 0.0;
  for (const float v : xd) acc += v;
  const double n = static_cast<double>(xd.size());
  NodePtr xn = x.node();
  return make_result("mean", {}, {static_cast<float>(acc / n)}, {xn}, [xn, n](Node& self) {
    const float g = static_cast<float>(self.grad[0] / n);
    for (auto& v : xn->grad_buffer()) v += g;
  });
}

Tensor l1_diff(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
    throw ShapeError("l1_diff: shape mismatch");
  }
  const auto ad = a.data();
  const auto bd = b.data();
  if (ad.empty()) throw ShapeError("l1_diff of empty tensors");
  double acc = 0.0;
  for (size_t i = 0; i < ad.size(); ++i) acc += std::fabs(ad[i] - bd[i]);
  const double n = static_cast<double>(ad.size());
  NodePtr an = a.node();
  NodePtr bn = b.node();
  return make_result("l1_diff", {}, {static_cast<float>(acc / n)}, {an, bn}, [an, bn, n](Node& self) {
    const float g = static_cast<float>(self.grad[0] / n);
    const size_t count = an->data.size();
    auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (size_t i = 0; i < count; ++i) ga[i] += g * sign(an->data[i] - bn->data[i]);
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (size_t i = 0; i < count; ++i) gb[i] -= g * sign(an->data[i] - bn->data[i]);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("log_softmax expects NCHW, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xd = x.data();
  std::vector<float> out(xd.size());
  for (int64_t s = 0; s < n; ++s) {
    const float* in = xd.data() + s * c * hw;
    float* o = out.data() + s * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t k = 0; k < c; ++k) mx = std::max(mx, in[k * hw + p]);
      double acc = 0.0;
      for (int64_t k = 0; k < c; ++k) acc += std::exp(static_cast<double>(in[k * hw + p] - mx));
      const float lse = mx + static_cast<float>(std::log(acc));
      for (int64_t k = 0; k < c; ++k) o[k * hw + p] = in[k * hw + p] - lse;
    }
  }
  NodePtr xn = x.node();
  return make_result("log_softmax", x.shape(), std::move(out), {xn}, [xn, n, c, hw](Node& self) {
    auto& gx = xn->grad_buffer();
    for (int64_t s = 0; s < n; ++s) {
      const float* g = self.grad.data() + s * c * hw;
      const float* y = self.data.data() + s * c * hw;
      float* gi = gx.data() + s * c * hw;
      for (int64_t p = 0; p < hw; ++p) {
        float gsum = 0.0f;
        for (int64_t k = 0; k < c; ++k) gsum += g[k * hw + p];
        for (int64_t k = 0; k < c; ++k) gi[k * hw + p] += g[k * hw + p] - std::exp(y[k * hw + p]) * gsum;
      }
    }
  });
}

Tensor weighted_nll(const Tensor& log_probs, std::span<const int32_t> labels,
                    std::span<const float> class_weights) {
  if (log_probs.rank() != 4) throw ShapeError("weighted_nll expects NCHW log-probabilities");
  const int64_t n = log_probs.dim(0), c = log_probs.dim(1), hw = log_probs.dim(2) * log_probs.dim(3);
  if (static_cast<int64_t>(labels.size()) != n * hw) throw ShapeError("weighted_nll: label count mismatch");
  if (static_cast<int64_t>(class_weights.size()) != c) throw ShapeError("weighted_nll: class weight count mismatch");
  for (const int32_t l : labels) {
    if (l < 0 || l >= c) throw ShapeError("weighted_nll: label " + std::to_string(l) + " out of range");
  }
  const auto lp = log_probs.data();
  double acc = 0.0;
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t p = 0; p < hw; ++p) {
      const int32_t m = labels[static_cast<size_t>(s * hw + p)];
      acc += static_cast<double>(class_weights[static_cast<size_t>(m)]) * lp[static_cast<size_t>((s * c + m) * hw + p)];
    }
  }
  const double count = static_cast<double>(n * hw);
  std::vector<int32_t> lab(labels.begin(), labels.end());
  std::vector<float> w(class_weights.begin(), class_weights.end());
  NodePtr ln = log_probs.node();
  return make_result("weighted_nll", {}, {static_cast<float>(-acc / count)}, {ln},
                     [ln, lab = std::move(lab), w = std::move(w), n, c, hw, count](Node& self) {
                       auto& g = ln->grad_buffer();
                       const double scale_factor = -self.grad[0] / count;
                       for (int64_t s = 0; s < n; ++s) {
                         for (int64_t p = 0; p < hw; ++p) {
                           const int32_t m = lab[static_cast<size_t>(s * hw + p)];
                           g[static_cast<size_t>((s * c + m) * hw + p)] +=
                               static_cast<float>(scale_factor * w[static_cast<size_t>(m)]);
                         }
                       }
                     });
}

}  // namespace synseg
