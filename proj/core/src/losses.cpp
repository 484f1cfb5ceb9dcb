#include "synseg/losses.hpp"

#include <stdexcept>

#include "synseg/ops.hpp"

namespace synseg {

void LossWeights::validate() const {
  for (const float w : as_array()) {
    if (!(w >= 0.0f)) throw std::invalid_argument("loss weights must be nonnegative");
  }
}

std::array<float, 5> LossWeights::as_array() const {
  return {gan_source_to_target, gan_target_to_source, cycle_source, cycle_target, segmentation};
}

Tensor gan_loss_discriminator(const Tensor& d_real, const Tensor& d_fake, AdversarialForm form) {
  if (form == AdversarialForm::log) {
    // log(1 - s(x)) = log s(-x)
    return neg(add(mean(log_sigmoid(d_real)), mean(log_sigmoid(neg(d_fake)))));
  }
  const Tensor real_err = add_scalar(d_real, -1.0f);
  return add(mean(mul(real_err, real_err)), mean(mul(d_fake, d_fake)));
}

Tensor gan_loss_generator(const Tensor& d_fake, AdversarialForm form) {
  if (form == AdversarialForm::log) return neg(mean(log_sigmoid(d_fake)));
  const Tensor err = add_scalar(d_fake, -1.0f);
  return mean(mul(err, err));
}

Tensor cycle_loss(const Tensor& reconstructed, const Tensor& original) {
  return l1_diff(reconstructed, original);
}

Tensor seg_loss(const Tensor& log_probs, std::span<const int32_t> labels, std::span<const float> class_weights) {
  if (log_probs.rank() != 4) throw ShapeError("seg_loss expects N,C,H,W log-probabilities");
  if (class_weights.empty()) {
    const std::vector<float> uniform(static_cast<size_t>(log_probs.dim(1)), 1.0f);
    return weighted_nll(log_probs, labels, uniform);
  }
  return weighted_nll(log_probs, labels, class_weights);
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
  const auto lambdas = weights.as_array();
  const std::array<const Tensor*, 5> terms{&parts.gan_source_to_target, &parts.gan_target_to_source,
                                           &parts.cycle_source, &parts.cycle_target, &parts.segmentation};
  Tensor total;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i]->defined()) continue;
    if (terms[i]->numel() != 1) throw ShapeError("loss parts must be scalars");
    const Tensor weighted = scale(*terms[i], lambdas[i]);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  return total.defined() ? total : Tensor::scalar(0.0f);
}

}  // namespace synseg
