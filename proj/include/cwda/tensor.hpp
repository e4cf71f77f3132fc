#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cwda {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

/// One vertex of the recorded differentiation graph. `backward` reads the
/// node's own grad and accumulates into the grads of its parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void accumulate(std::span<const double> g);
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Handle to a dense row-major double tensor. Copies share storage, so a
/// Tensor behaves like a reference to a graph node; use `clone()` for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  std::span<const double> data() const;
  /// Mutable view of the values; mutating a tensor that already feeds a
  /// recorded graph invalidates that graph's backward pass.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  /// Gradient buffer; all zeros when nothing has flowed in yet.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const;
  /// Writable gradient buffer; empty when nothing has flowed in yet.
  std::span<double> mutable_grad();
  void zero_grad();

  const std::string& op() const;
  Tensor detach() const;
  Tensor clone() const;

  /// Creates a node computed from `parents`; the graph edge is recorded only
  /// when some parent requires grad and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                            std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Seeds the scalar `loss` with gradient 1 and propagates to every leaf that
/// requires grad. Leaf gradients accumulate across calls; interior gradients
/// are reset at the start of each call.
void backward(const Tensor& loss);

/// Nodes reachable from `root` in topological order (parents first).
std::vector<detail::Node*> topological_order(const Tensor& root);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace cwda
