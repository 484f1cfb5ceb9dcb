#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace synseg {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for any precondition violation on tensor inputs (shape, channel
/// or argument mismatch).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  uint64_t id = 0;
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until the first gradient arrives
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into the parents' grad buffers.
  std::function<void(Node&)> backward;

  std::vector<float>& grad_buffer();
};

uint64_t next_node_id();

}  // namespace detail

// A dense row-major fp32 array. Tensors produced by differentiable ops
// while gradient recording is enabled carry a node on the implicit tape;
// node ids grow monotonically, so parents always precede children and
// sorting by id yields a valid topological order.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::span<const float> data() const;
  // Writable view. Only legal on leaves (parameters, inputs).
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  // Allocates (if needed) and zero-fills the grad buffer.
  void zero_grad();

  bool is_leaf() const;
  uint64_t node_id() const;
  const char* op_name() const;

  // Same values, no tape history.
  Tensor detach() const;
  Tensor clone() const;

  // Reverse-mode sweep from a scalar root. Gradients accumulate.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradient recording switch for the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds the result node for an op. `backward` is attached only if
// recording is on and some parent requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace synseg
