#include "synseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace synseg {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (const int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<float>& Node::grad_buffer() {
  if (grad.empty() && !data.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->id = next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

bool grad_enabled() { return detail::g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<float>(static_cast<size_t>(n), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("axis out of range");
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_ ? node_->data.size() : 0); }

std::span<const float> Tensor::data() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data on a non-leaf tensor");
  return node_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node_->grad;
}

std::span<float> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad.assign(node_->data.size(), 0.0f);
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from_data(shape(), node_->data, requires_grad() && is_leaf()); }

void Tensor::backward() const {
  if (!node_) throw std::logic_error("backward on undefined tensor");
  if (node_->data.size() != 1) {
    throw ShapeError("backward requires a scalar root, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) throw std::logic_error("backward root is not on the tape");

  // Collect the reachable sub-tape; ordering by id is topological.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

  // Intermediate grads are scratch; leaves accumulate across calls.
  for (detail::Node* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0f);
  }
  node_->grad_buffer()[0] += 1.0f;
  for (detail::Node* n : order) {
    if (n->backward) {
      n->backward(*n);
      if (n != node_.get()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }
}

}  // namespace synseg
