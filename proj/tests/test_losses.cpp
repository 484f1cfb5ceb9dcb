#include "doctest.h"

#include <cmath>
#include <random>

#include "synseg/losses.hpp"
#include "synseg/ops.hpp"

using namespace synseg;

namespace {

Tensor filled(float v, Shape s = {1, 1, 3, 3}) { return Tensor::full(std::move(s), v); }

}  // namespace

TEST_CASE("discriminator loss hand values") {
  const auto half = filled(0.0f);  // sigmoid(0) = 0.5
  CHECK(gan_loss_discriminator(half, half, AdversarialForm::log).item() ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-7));
  CHECK(gan_loss_discriminator(filled(40.0f), filled(-40.0f), AdversarialForm::log).item() < 1e-12);
  CHECK(gan_loss_discriminator(filled(1.0f), filled(0.0f), AdversarialForm::least_squares).item() == 0.0f);
  CHECK(gan_loss_discriminator(filled(0.0f), filled(1.0f), AdversarialForm::least_squares).item() == 2.0f);
}

TEST_CASE("discriminator loss is stationary at the perfect discriminator") {
  auto r = Tensor::full({1, 1, 2, 2}, 60.0f, true), f = Tensor::full({1, 1, 2, 2}, -60.0f, true);
  gan_loss_discriminator(r, f, AdversarialForm::log).backward();
  for (const float g : r.grad()) CHECK(std::abs(g) < 1e-12);
  for (const float g : f.grad()) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("generator loss hand values") {
  CHECK(gan_loss_generator(filled(0.0f), AdversarialForm::log).item() == doctest::Approx(std::log(2.0)));
  CHECK(gan_loss_generator(filled(40.0f), AdversarialForm::log).item() < 1e-12);
  CHECK(gan_loss_generator(filled(1.0f), AdversarialForm::least_squares).item() == 0.0f);
}

TEST_CASE("cycle loss identities") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<float> v(50);
  for (auto& e : v) e = g(rng);
  const auto x = Tensor::from_data({2, 1, 5, 5}, v);
  CHECK(cycle_loss(x, x).item() == 0.0f);
  const auto shifted = add_scalar(x, 0.5f);
  CHECK(cycle_loss(shifted, x).item() == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(cycle_loss(shifted, x).item() == cycle_loss(x, shifted).item());
}

TEST_CASE("seg loss hand values and oracle") {
  const std::vector<int32_t> labels{0, 1, 1, 0};
  // Perfect prediction: log-probability 0 on the true class.
  std::vector<float> perfect(8);
  for (int i = 0; i < 4; ++i) {
    perfect[labels[i] * 4 + i] = 0.0f;
    perfect[(1 - labels[i]) * 4 + i] = -1e9f;
  }
  CHECK(seg_loss(Tensor::from_data({1, 2, 2, 2}, perfect), labels).item() == 0.0f);
  const auto uniform = Tensor::full({1, 2, 2, 2}, std::log(0.5f));
  CHECK(seg_loss(uniform, labels).item() == doctest::Approx(std::log(2.0)));
  const std::vector<float> w1{1.0f, 3.0f}, w2{2.0f, 6.0f};
  CHECK(seg_loss(uniform, labels, w2).item() == doctest::Approx(2.0 * seg_loss(uniform, labels, w1).item()));

  std::mt19937_64 rng(2);
  std::normal_distribution<float> g;
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_real_distribution<float> wd(0.1f, 2.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> logits(3 * 16);
    for (auto& e : logits) e = g(rng);
    std::vector<int32_t> lab(16);
    for (auto& l : lab) l = cls(rng);
    const std::vector<float> w{wd(rng), wd(rng), wd(rng)};
    const auto lp = log_softmax(Tensor::from_data({1, 3, 4, 4}, logits));
    // Per-pixel negative log-likelihood from the raw logits.
    double want = 0.0;
    for (int p = 0; p < 16; ++p) {
      double z = 0.0;
      for (int c = 0; c < 3; ++c) z += std::exp(static_cast<double>(logits[c * 16 + p]));
      want -= w[lab[p]] * (logits[lab[p] * 16 + p] - std::log(z));
    }
    CHECK(seg_loss(lp, lab, w).item() == doctest::Approx(want / 16.0).epsilon(1e-6));
  }
  CHECK_THROWS(seg_loss(uniform, std::vector<int32_t>{0, 2, 1, 0}));
}

TEST_CASE("total loss is exactly linear in each weight") {
  LossWeights defaults;
  const auto ones = [] {
    LossParts p;
    for (auto* t : {&p.gan_source_to_target, &p.gan_target_to_source, &p.cycle_source, &p.cycle_target,
                    &p.segmentation})
      *t = Tensor::scalar(1.0f, true);
    return p;
  };
  CHECK(total_loss(ones(), defaults).item() == 23.0f);
  CHECK(total_loss(ones(), LossWeights{0, 0, 0, 0, 0}).item() == 0.0f);
  LossParts zeros;
  for (auto* t : {&zeros.gan_source_to_target, &zeros.gan_target_to_source, &zeros.cycle_source,
                  &zeros.cycle_target, &zeros.segmentation})
    *t = Tensor::scalar(0.0f);
  CHECK(total_loss(zeros, defaults).item() == 0.0f);

  const LossWeights w{0.25f, 1.5f, 10.0f, 7.0f, 2.0f};
  auto p = ones();
  total_loss(p, w).backward();
  const auto lambdas = w.as_array();
  const Tensor* parts[] = {&p.gan_source_to_target, &p.gan_target_to_source, &p.cycle_source, &p.cycle_target,
                           &p.segmentation};
  for (int i = 0; i < 5; ++i) CHECK(parts[i]->grad()[0] == lambdas[i]);

  // Doubling one weight adds exactly that weight times its part.
  const std::vector<float> vals{0.375f, 1.25f, 0.5f, 2.0f, 0.75f};
  for (int i = 0; i < 5; ++i) {
    LossParts q;
    Tensor* qs[] = {&q.gan_source_to_target, &q.gan_target_to_source, &q.cycle_source, &q.cycle_target,
                    &q.segmentation};
    for (int j = 0; j < 5; ++j) *qs[j] = Tensor::scalar(vals[j]);
    LossWeights doubled = w;
    float* wp[] = {&doubled.gan_source_to_target, &doubled.gan_target_to_source, &doubled.cycle_source,
                   &doubled.cycle_target, &doubled.segmentation};
    *wp[i] *= 2.0f;
    const double base = total_loss(q, w).item(), more = total_loss(q, doubled).item();
    CHECK(more - base == doctest::Approx(static_cast<double>(lambdas[i]) * vals[i]).epsilon(1e-6));
  }
}

TEST_CASE("generator loss leaves the discriminator without gradient") {
  // A detached score carries no tape; only the generator-side input gets grad.
  auto fake = Tensor::full({1, 1, 2, 2}, 0.3f, true);
  auto d_weight = Tensor::scalar(2.0f);
  gan_loss_generator(mul(fake, d_weight), AdversarialForm::log).backward();
  CHECK(fake.has_grad());
  CHECK_FALSE(d_weight.has_grad());
}

TEST_CASE("negative weights are rejected") {
  CHECK_THROWS(LossWeights{1, 1, -1, 10, 1}.validate());
}
