#include "synseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace synseg {

AdamState::AdamState(const Network& net, AdamHyper hyper) : hyper_(hyper) {
  if (!(hyper.lr > 0.0f)) throw std::invalid_argument("Adam learning rate must be positive");
  for (const auto& [name, p] : net.params()) {
    const size_t n = static_cast<size_t>(p.numel());
    moments_.emplace(name, AdamMoments{std::vector<float>(n, 0.0f), std::vector<float>(n, 0.0f)});
  }
}

AdamState adam_init(const Network& net, float lr) {
  AdamHyper hyper;
  hyper.lr = lr;
  return AdamState(net, hyper);
}

void AdamState::step(Network& net) {
  for (const auto& [name, p] : net.params()) {
    if (!p.has_grad()) throw std::logic_error("Adam step: parameter " + name + " has no gradient");
    if (!moments_.count(name)) throw std::logic_error("Adam step: unknown parameter " + name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(hyper_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(hyper_.beta2), static_cast<double>(t_));
  const float step_size = static_cast<float>(hyper_.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float b1 = hyper_.beta1, b2 = hyper_.beta2, eps = hyper_.eps;
  for (auto& [name, p] : net.params()) {
    auto& mom = moments_.at(name);
    const auto g = p.grad();
    Tensor param = p;
    auto theta = param.mutable_data();
    for (size_t i = 0; i < theta.size(); ++i) {
      mom.m[i] = b1 * mom.m[i] + (1.0f - b1) * g[i];
      mom.v[i] = b2 * mom.v[i] + (1.0f - b2) * g[i] * g[i];
      theta[i] -= step_size * mom.m[i] / (std::sqrt(mom.v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

void AdamState::restore(int64_t t, std::map<std::string, AdamMoments> moments) {
  if (t < 0) throw std::invalid_argument("negative Adam step counter");
  for (const auto& [name, mom] : moments_) {
    auto it = moments.find(name);
    if (it == moments.end() || it->second.m.size() != mom.m.size() || it->second.v.size() != mom.v.size()) {
      throw std::runtime_error("Adam moments do not match network parameter " + name);
    }
  }
  t_ = t;
  moments_ = std::move(moments);
}

}  // namespace synseg
