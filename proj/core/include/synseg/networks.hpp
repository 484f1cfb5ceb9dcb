#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "synseg/ops.hpp"
#include "synseg/rng.hpp"
#include "synseg/tensor.hpp"

namespace synseg {

enum class Role { generator, discriminator, segmenter };

const char* role_name(Role role);

enum class LayerKind { conv, conv_transpose, instance_norm, activation, skip_push, skip_add, log_softmax };

// One entry of a network's layer graph. Residual connections are expressed
// as a skip_push/skip_add pair bracketing the block body.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int output_pad = 0;
  PadMode pad_mode = PadMode::zero;
  Activation act = Activation::relu;
};

struct GeneratorConfig {
  int in_channels = 1;
  int out_channels = 1;
  int base_filters = 16;
  int n_res_blocks = 3;

  void validate() const;
};

inline constexpr float kInitStd = 0.02f;

class Network {
 public:
  Network(Role role, int in_channels, std::vector<LayerSpec> layers);

  Network(Network&&) = default;
  Network& operator=(Network&&) = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  // Deep copy (fresh parameter storage).
  Network clone() const;

  Role role() const { return role_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const;
  const std::vector<LayerSpec>& layers() const { return layers_; }

  // Ordered by name; names are stable across save/load.
  const std::map<std::string, Tensor>& params() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  Tensor forward(const Tensor& input) const;

  void zero_grad();
  // Frozen parameters still pass gradient through to their inputs but
  // never receive gradient themselves.
  void set_trainable(bool trainable);
  int64_t parameter_count() const;
  // FNV-1a over all parameter bytes in name order.
  uint64_t checksum() const;

  // N(0, kInitStd) conv weights, zero biases, unit norm scales.
  void initialize(Rng& rng);

 private:
  void create_params();

  Role role_;
  int in_channels_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> params_;
};

Network build_generator(const GeneratorConfig& cfg, Rng& rng);
Network build_discriminator(int base_filters, int n_layers, Rng& rng, int in_channels = 1);
Network build_segmenter(const GeneratorConfig& cfg, Rng& rng);

// Spatial size of the discriminator's patch grid for a square input.
int64_t discriminator_output_size(int64_t input_size, int n_layers);

}  // namespace synseg
