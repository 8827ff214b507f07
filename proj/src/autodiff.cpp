#include "occattn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "occattn/error.hpp"

namespace occattn {

namespace detail {

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {
thread_local bool g_grad_enabled = true;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->sequence = detail::next_sequence();
}

Tensor Var::grad() const {
  if (!node_) return {};
  if (node_->grad.size() == node_->value.size() && node_->grad.shape() == node_->value.shape())
    return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

void Var::zero_grad() {
  if (node_ && node_->grad.size() > 0) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward) {
  if (!value.all_finite()) throw NonFiniteError(std::string("non-finite output from ") + op);
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  node->sequence = detail::next_sequence();
  bool needs = false;
  if (g_grad_enabled)
    for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (Var& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var::from_node(std::move(node));
}

std::vector<std::shared_ptr<detail::Node>> topological_order(const Var& root) {
  std::vector<std::shared_ptr<detail::Node>> nodes;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!n || !n->requires_grad || !seen.insert(n.get()).second) continue;
    for (const auto& in : n->inputs) stack.push_back(in);
    nodes.push_back(std::move(n));
  }
  // Creation order is a topological order of a define-by-run graph.
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->sequence > b->sequence; });
  return nodes;
}

void backward(const Var& loss) {
  if (!loss.defined()) throw ContractError("backward on undefined value");
  if (loss.value().size() != 1)
    throw ContractError("backward seed must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  for (auto& n : order)
    if (!n->is_leaf) n->ensure_grad().fill(0.0);
  order.front()->ensure_grad()[0] += 1.0;
  for (auto& n : order) {
    if (n->is_leaf || !n->backward) continue;
    for (auto& in : n->inputs)
      if (in->requires_grad) in->ensure_grad();
    n->backward(*n);
  }
}

GradCheckReport finite_difference_check(const std::function<Var()>& loss_fn, Var leaf, double h,
                                        double abs_floor) {
  leaf.zero_grad();
  Var loss = loss_fn();
  backward(loss);
  const Tensor analytic = leaf.grad();
  GradCheckReport report;
  Tensor& x = leaf.mutable_value();
  report.coordinates = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    double plus = 0.0;
    double minus = 0.0;
    {
      NoGradGuard guard;
      x[i] = saved + h;
      plus = loss_fn().value().item();
      x[i] = saved - h;
      minus = loss_fn().value().item();
    }
    x[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double abs_err = std::abs(numeric - analytic[i]);
    const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic[i]), abs_floor});
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  return report;
}

}  // namespace occattn
