#include "cwda/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "cwda/errors.hpp"

namespace cwda {

namespace {
thread_local bool g_recording = true;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void Node::accumulate(std::span<const double> g) {
  if (!requires_grad) return;
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(node_);
  node_->requires_grad = value;
  if (!value) node_->grad.clear();
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::vector<double> Tensor::grad() const {
  const auto& n = checked(node_);
  if (n.grad.empty()) return std::vector<double>(n.data.size(), 0.0);
  return n.grad;
}

std::span<const double> Tensor::grad_view() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

const std::string& Tensor::op() const { return checked(node_).op; }

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(make_node(n.shape, n.data, false));
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return Tensor(make_node(n.shape, n.data, n.requires_grad));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward_fn) {
  bool needs = false;
  if (g_recording) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  auto node = make_node(std::move(shape), std::move(values), needs);
  node->op = std::move(op);
  if (needs) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

std::vector<detail::Node*> topological_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS; graphs can be deep enough to make recursion risky.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() { return g_recording; }

}  // namespace cwda
