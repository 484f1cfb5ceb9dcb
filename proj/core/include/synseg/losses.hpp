#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "synseg/tensor.hpp"

namespace synseg {

enum class AdversarialForm { log, least_squares };

struct LossWeights {
  float gan_source_to_target = 1.0f;  // lambda1: G1 vs D1
  float gan_target_to_source = 1.0f;  // lambda2: G2 vs D2
  float cycle_source = 10.0f;         // lambda3: ||G2(G1(x)) - x||
  float cycle_target = 10.0f;         // lambda4: ||G1(G2(y)) - y||
  float segmentation = 1.0f;          // lambda5

  void validate() const;
  std::array<float, 5> as_array() const;
};

// The five weighted components of the joint objective, in lambda order.
struct LossParts {
  Tensor gan_source_to_target;
  Tensor gan_target_to_source;
  Tensor cycle_source;
  Tensor cycle_target;
  Tensor segmentation;
};

// Minimized discriminator objective on raw (pre-sigmoid) patch scores.
// log: -mean log s(real) - mean log(1 - s(fake)).
// least_squares: mean (real - 1)^2 + mean fake^2.
Tensor gan_loss_discriminator(const Tensor& d_real, const Tensor& d_fake, AdversarialForm form);

// Non-saturating generator objective: -mean log s(fake), or mean (fake - 1)^2.
Tensor gan_loss_generator(const Tensor& d_fake, AdversarialForm form);

// Mean absolute difference.
Tensor cycle_loss(const Tensor& reconstructed, const Tensor& original);

// Weighted cross entropy on log-probabilities (N,C,H,W). Empty weights
// means uniform weights of 1.
Tensor seg_loss(const Tensor& log_probs, std::span<const int32_t> labels,
                std::span<const float> class_weights = {});

// Weighted sum of the five parts. Undefined parts are structural zeros
// (e.g. the half-cycle variant has no second adversarial or cycle terms).
Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace synseg
