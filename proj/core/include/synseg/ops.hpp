#pragma once

#include <cstdint>
#include <span>

#include "synseg/tensor.hpp"

// Differentiable operations over synseg::Tensor. Every op records itself on
// the tape when any input requires grad and recording is enabled.
namespace synseg {

// Elementwise. `b` must have the same shape as `a` or be rank-0.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, float factor);
Tensor add_scalar(const Tensor& a, float value);

enum class Activation { relu, leaky_relu, tanh, sigmoid };
inline constexpr float kLeakySlope = 0.2f;

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope = kLeakySlope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor activation(Activation kind, const Tensor& x);
// log(sigmoid(x)) computed without overflow.
Tensor log_sigmoid(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean(|a - b|); subgradient 0 where a == b.
Tensor l1_diff(const Tensor& a, const Tensor& b);

// Log-softmax along axis 1 of an NCHW tensor (max-subtracted).
Tensor log_softmax(const Tensor& x);

// -(1/(N*H*W)) * sum_i w[label_i] * log_probs[n, label_i, h, w].
// `labels` is N*H*W row-major; `class_weights` has C entries.
Tensor weighted_nll(const Tensor& log_probs, std::span<const int32_t> labels,
                    std::span<const float> class_weights);

enum class PadMode { zero, reflect };

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  PadMode pad_mode = PadMode::zero;
};

// Cross-correlation. input NCHW, weight OIKK, bias O (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& options = {});

// Adjoint of conv2d (zero padding). input N,Cin,H,W; weight Cin,Cout,K,K.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        int stride = 1, int pad = 0, int output_pad = 0);

inline constexpr float kInstanceNormEps = 1e-5f;

// Per-sample, per-channel normalization with population variance.
Tensor instance_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                       float eps = kInstanceNormEps);

int64_t conv2d_output_size(int64_t in, int kernel, int stride, int pad);
int64_t conv_transpose2d_output_size(int64_t in, int kernel, int stride, int pad, int output_pad);

}  // namespace synseg
