#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "synseg/networks.hpp"

namespace synseg {

struct AdamHyper {
  float lr = 1e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

inline constexpr float kGeneratorLr = 1e-4f;
inline constexpr float kDiscriminatorLr = 2e-4f;

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
};

// Bias-corrected Adam over the parameters of one Network.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const Network& net, AdamHyper hyper);

  // Applies one update from the current grads; grads are left untouched.
  void step(Network& net);

  int64_t t() const { return t_; }
  const AdamHyper& hyper() const { return hyper_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

  // Checkpoint restore.
  void restore(int64_t t, std::map<std::string, AdamMoments> moments);

 private:
  AdamHyper hyper_;
  int64_t t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

AdamState adam_init(const Network& net, float lr);

}  // namespace synseg
