#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "occattn/tensor.hpp"

namespace occattn {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t sequence = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  Tensor& ensure_grad();
};

std::uint64_t next_sequence();

}  // namespace detail

/// Handle to a value in the define-by-run graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad.size() > 0; }
  /// Gradient buffer; zeros of the value's shape if backward never reached this node.
  Tensor grad() const;
  void zero_grad();

  bool defined() const { return node_ != nullptr; }
  const char* op() const { return node_->op; }

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Var from_node(std::shared_ptr<detail::Node> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op node from inputs. `backward` is dropped when no input needs gradients.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

/// Seeds d(loss)/d(loss) = 1 and propagates in reverse creation order. Leaf gradients
/// accumulate; interior gradients are reset first so repeated calls are reproducible.
void backward(const Var& loss);

/// Number of nodes reachable from `root`, in the order backward would visit them.
std::vector<std::shared_ptr<detail::Node>> topological_order(const Var& root);

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_index = 0;
};

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h for every
/// coordinate of `leaf`. `loss_fn` must rebuild the graph from the leaf's current value.
GradCheckReport finite_difference_check(const std::function<Var()>& loss_fn, Var leaf, double h = 1e-5,
                                        double abs_floor = 1e-6);

}  // namespace occattn
