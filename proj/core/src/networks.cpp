#include "synseg/networks.hpp"

#include <algorithm>
#include <cstring>
#include <random>
#include <stdexcept>

namespace synseg {

const char* role_name(Role role) {
  switch (role) {
    case Role::generator: return "generator";
    case Role::discriminator: return "discriminator";
    case Role::segmenter: return "segmenter";
  }
  return "unknown";
}

void GeneratorConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("generator channels must be >= 1");
  if (base_filters < 4) throw std::invalid_argument("base_filters must be >= 4");
  if (n_res_blocks < 1) throw std::invalid_argument("n_res_blocks must be >= 1");
}

namespace {

LayerSpec conv(std::string name, int in, int out, int kernel, int stride, int pad, PadMode mode) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.name = std::move(name);
  l.in = in;
  l.out = out;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  l.pad_mode = mode;
  return l;
}

LayerSpec conv_t(std::string name, int in, int out) {
  LayerSpec l;
  l.kind = LayerKind::conv_transpose;
  l.name = std::move(name);
  l.in = in;
  l.out = out;
  l.kernel = 3;
  l.stride = 2;
  l.pad = 1;
  l.output_pad = 1;
  return l;
}

LayerSpec norm(std::string name, int channels) {
  LayerSpec l;
  l.kind = LayerKind::instance_norm;
  l.name = std::move(name);
  l.in = l.out = channels;
  return l;
}

LayerSpec act(Activation a) {
  LayerSpec l;
  l.kind = LayerKind::activation;
  l.act = a;
  return l;
}

LayerSpec marker(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

// Shared body of the generator and segmenter: everything up to the head.
std::vector<LayerSpec> resnet_trunk(const GeneratorConfig& cfg) {
  const int f = cfg.base_filters;
  std::vector<LayerSpec> layers;
  layers.push_back(conv("stem", cfg.in_channels, f, 7, 1, 3, PadMode::reflect));
  layers.push_back(norm("stem_norm", f));
  layers.push_back(act(Activation::relu));
  layers.push_back(conv("down1", f, 2 * f, 3, 2, 1, PadMode::zero));
  layers.push_back(norm("down1_norm", 2 * f));
  layers.push_back(act(Activation::relu));
  layers.push_back(conv("down2", 2 * f, 4 * f, 3, 2, 1, PadMode::zero));
  layers.push_back(norm("down2_norm", 4 * f));
  layers.push_back(act(Activation::relu));
  for (int i = 0; i < cfg.n_res_blocks; ++i) {
    const std::string p = "res" + std::to_string(i) + ".";
    layers.push_back(marker(LayerKind::skip_push));
    layers.push_back(conv(p + "conv1", 4 * f, 4 * f, 3, 1, 1, PadMode::reflect));
    layers.push_back(norm(p + "norm1", 4 * f));
    layers.push_back(act(Activation::relu));
    layers.push_back(conv(p + "conv2", 4 * f, 4 * f, 3, 1, 1, PadMode::reflect));
    layers.push_back(norm(p + "norm2", 4 * f));
    layers.push_back(marker(LayerKind::skip_add));
  }
  layers.push_back(conv_t("up1", 4 * f, 2 * f));
  layers.push_back(norm("up1_norm", 2 * f));
  layers.push_back(act(Activation::relu));
  layers.push_back(conv_t("up2", 2 * f, f));
  layers.push_back(norm("up2_norm", f));
  layers.push_back(act(Activation::relu));
  return layers;
}

}  // namespace

Network::Network(Role role, int in_channels, std::vector<LayerSpec> layers)
    : role_(role), in_channels_(in_channels), layers_(std::move(layers)) {
  create_params();
}

void Network::create_params() {
  auto add = [this](const std::string& name, Shape shape, float value) {
    if (!params_.emplace(name, Tensor::full(std::move(shape), value, true)).second) {
      throw std::invalid_argument("duplicate parameter name " + name);
    }
  };
  for (const auto& l : layers_) {
    switch (l.kind) {
      case LayerKind::conv:
        add(l.name + ".weight", {l.out, l.in, l.kernel, l.kernel}, 0.0f);
        add(l.name + ".bias", {l.out}, 0.0f);
        break;
      case LayerKind::conv_transpose:
        add(l.name + ".weight", {l.in, l.out, l.kernel, l.kernel}, 0.0f);
        add(l.name + ".bias", {l.out}, 0.0f);
        break;
      case LayerKind::instance_norm:
        add(l.name + ".gamma", {l.out}, 1.0f);
        add(l.name + ".beta", {l.out}, 0.0f);
        break;
      default:
        break;
    }
  }
}

void Network::initialize(Rng& rng) {
  std::normal_distribution<float> normal(0.0f, kInitStd);
  // Layer order, not map order, fixes the draw sequence.
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::conv || l.kind == LayerKind::conv_transpose) {
      for (auto& v : param(l.name + ".weight").mutable_data()) v = normal(rng);
      for (auto& v : param(l.name + ".bias").mutable_data()) v = 0.0f;
    } else if (l.kind == LayerKind::instance_norm) {
      for (auto& v : param(l.name + ".gamma").mutable_data()) v = 1.0f;
      for (auto& v : param(l.name + ".beta").mutable_data()) v = 0.0f;
    }
  }
}

Network Network::clone() const {
  Network copy(role_, in_channels_, layers_);
  for (auto& [name, t] : copy.params_) {
    const auto src = params_.at(name).data();
    auto dst = t.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
    t.set_requires_grad(params_.at(name).requires_grad());
  }
  return copy;
}

int Network::out_channels() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (it->kind == LayerKind::conv || it->kind == LayerKind::conv_transpose) return it->out;
  }
  return in_channels_;
}

Tensor& Network::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor Network::forward(const Tensor& input) const {
  if (input.rank() != 4) throw ShapeError("network input must be NCHW, got " + shape_str(input.shape()));
  if (input.dim(1) != in_channels_) {
    throw ShapeError(std::string(role_name(role_)) + " expects " + std::to_string(in_channels_) +
                     " input channels, got " + std::to_string(input.dim(1)));
  }
  Tensor x = input;
  std::vector<Tensor> skips;
  for (const auto& l : layers_) {
    switch (l.kind) {
      case LayerKind::conv:
        x = conv2d(x, param(l.name + ".weight"), param(l.name + ".bias"), {l.stride, l.pad, l.pad_mode});
        break;
      case LayerKind::conv_transpose:
        x = conv_transpose2d(x, param(l.name + ".weight"), param(l.name + ".bias"), l.stride, l.pad,
                             l.output_pad);
        break;
      case LayerKind::instance_norm:
        x = instance_norm2d(x, param(l.name + ".gamma"), param(l.name + ".beta"));
        break;
      case LayerKind::activation:
        x = activation(l.act, x);
        break;
      case LayerKind::skip_push:
        skips.push_back(x);
        break;
      case LayerKind::skip_add:
        if (skips.empty()) throw std::logic_error("unbalanced residual markers");
        x = add(skips.back(), x);
        skips.pop_back();
        break;
      case LayerKind::log_softmax:
        x = log_softmax(x);
        break;
    }
  }
  return x;
}

void Network::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Network::set_trainable(bool trainable) {
  for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

int64_t Network::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

uint64_t Network::checksum() const {
  uint64_t h = fnv1a64("");
  for (const auto& [name, t] : params_) {
    h = fnv1a64(name, h);
    const auto d = t.data();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
  }
  return h;
}

Network build_generator(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  auto layers = resnet_trunk(cfg);
  layers.push_back(conv("output", cfg.base_filters, cfg.out_channels, 7, 1, 3, PadMode::reflect));
  layers.push_back(act(Activation::tanh));
  Network net(Role::generator, cfg.in_channels, std::move(layers));
  net.initialize(rng);
  return net;
}

Network build_segmenter(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.out_channels < 2) throw std::invalid_argument("segmenter needs at least 2 classes");
  auto layers = resnet_trunk(cfg);
  layers.push_back(conv("classifier", cfg.base_filters, cfg.out_channels, 7, 1, 3, PadMode::reflect));
  layers.push_back(marker(LayerKind::log_softmax));
  Network net(Role::segmenter, cfg.in_channels, std::move(layers));
  net.initialize(rng);
  return net;
}

Network build_discriminator(int base_filters, int n_layers, Rng& rng, int in_channels) {
  if (n_layers < 1) throw std::invalid_argument("discriminator n_layers must be >= 1");
  if (base_filters < 1) throw std::invalid_argument("discriminator base_filters must be >= 1");
  std::vector<LayerSpec> layers;
  layers.push_back(conv("conv0", in_channels, base_filters, 4, 2, 1, PadMode::zero));
  layers.push_back(act(Activation::leaky_relu));
  int mult = 1;
  for (int n = 1; n <= n_layers; ++n) {
    const int prev = mult;
    mult = std::min(1 << n, 8);
    const std::string name = "conv" + std::to_string(n);
    // Last block keeps resolution (stride 1), as in the 70x70 PatchGAN.
    const int stride = n < n_layers ? 2 : 1;
    layers.push_back(conv(name, base_filters * prev, base_filters * mult, 4, stride, 1, PadMode::zero));
    layers.push_back(norm(name + "_norm", base_filters * mult));
    layers.push_back(act(Activation::leaky_relu));
  }
  layers.push_back(conv("patch", base_filters * mult, 1, 4, 1, 1, PadMode::zero));
  Network net(Role::discriminator, in_channels, std::move(layers));
  net.initialize(rng);
  return net;
}

int64_t discriminator_output_size(int64_t input_size, int n_layers) {
  int64_t s = conv2d_output_size(input_size, 4, 2, 1);
  for (int n = 1; n < n_layers; ++n) s = conv2d_output_size(s, 4, 2, 1);
  s = conv2d_output_size(s, 4, 1, 1);
  return conv2d_output_size(s, 4, 1, 1);
}

}  // namespace synseg
