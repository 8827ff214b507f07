#pragma once

#include <functional>
#include <string>
#include <vector>

#include "occattn/decoder.hpp"
#include "occattn/encoder.hpp"
#include "occattn/ops.hpp"
#include "occattn/trainer.hpp"
#include "test_support.hpp"

namespace occattn::testing {

/// A scalar loss and the leaves whose gradients are checked against finite differences.
struct GradientCase {
  std::string name;
  std::function<Var()> loss;
  std::vector<Var> leaves;
  std::shared_ptr<void> keep_alive;  // modules referenced by loss
};

/// Contracts y with fixed random weights so that every output coordinate matters.
inline Var weighted_sum(const Var& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, Var(random_tensor(y.shape(), seed ^ 0x9e3779b97f4a7c15ULL))));
}

inline void perturb(ParameterSet& set, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& p : set.parameters)
    for (double& v : p.var->mutable_value().values()) v += normal(rng);
}

inline std::vector<GradientCase> primitive_cases(std::uint64_t s) {
  std::vector<GradientCase> cases;
  auto unary = [&](std::string name, Shape shape, std::function<Var(const Var&)> op) {
    Var x = random_var(shape, s + 1);
    cases.push_back({std::move(name), [x, op, s] { return weighted_sum(op(x), s); }, {x}, nullptr});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Var(const Var&, const Var&)> op) {
    Var a = random_var(sa, s + 1), b = random_var(sb, s + 2);
    cases.push_back({std::move(name), [a, b, op, s] { return weighted_sum(op(a, b), s); }, {a, b}, nullptr});
  };
  binary("matmul", {3, 4}, {4, 2}, ops::matmul);
  binary("batched_matmul", {2, 3, 4}, {2, 4, 2}, ops::batched_matmul);
  unary("transpose", {2, 3, 4}, ops::transpose);
  binary("add_broadcast", {2, 3, 4}, {1, 1, 4}, ops::add);
  binary("sub", {2, 3}, {2, 3}, ops::sub);
  binary("mul_broadcast", {2, 3, 4}, {2, 1, 4}, ops::mul);
  unary("scale", {5}, [](const Var& x) { return ops::scale(x, -1.7); });
  unary("relu", {3, 5}, ops::relu);
  unary("sigmoid", {3, 5}, ops::sigmoid);
  unary("mean", {3, 5}, [](const Var& x) { return ops::scale(ops::mean(x), 3.0); });
  unary("reshape", {2, 6}, [](const Var& x) { return ops::reshape(x, {3, 4}); });
  unary("global_average_pool", {2, 3, 3, 2}, ops::global_average_pool);
  unary("softmax_rows", {2, 3, 4}, ops::softmax_rows);
  {
    Var x = random_var({2, 3}, s + 1), w = random_var({3, 4}, s + 2), b = random_var({4}, s + 3);
    cases.push_back({"fully_connected",
                     [x, w, b, s] { return weighted_sum(ops::fully_connected(x, w, b), s); }, {x, w, b}, nullptr});
  }
  {
    Var x = random_var({2, 2, 5, 5}, s + 1), w = random_var({3, 2, 3, 3}, s + 2);
    cases.push_back({"conv2d",
                     [x, w, s] { return weighted_sum(ops::conv2d(x, w, {2, 1}), s); }, {x, w}, nullptr});
    Var xd = random_var({1, 2, 4, 4}, s + 3), wd = random_var({2, 2, 3, 3}, s + 4);
    cases.push_back({"conv2d_direct",
                     [xd, wd, s] { return weighted_sum(ops::conv2d_direct(xd, wd, {1, 1}), s); }, {xd, wd}, nullptr});
  }
  unary("batch_normalize_channels", {3, 2, 2, 2},
        [](const Var& x) { return ops::batch_normalize(x, {0, 2, 3}, 1e-5).output; });
  unary("batch_normalize_instance", {2, 4, 3},
        [](const Var& x) { return ops::batch_normalize(x, {1}, 1e-5).output; });
  {
    Var logits = random_var({2, 6}, s + 1, 2.0);
    Tensor labels({2, 6});
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i * 7 + s) % 3 == 0 ? 1.0 : 0.0;
    cases.push_back({"bce_with_logits", [logits, labels] { return ops::bce_with_logits(logits, labels); }, {logits},
                     nullptr});
  }
  return cases;
}

/// Self-attention on a 1x8x4x4 input with a nonzero gate.
inline GradientCase attention_case(std::uint64_t s) {
  Rng rng(s);
  auto module = std::make_shared<SelfAttention>(8, 2, rng);
  module->gamma.mutable_value()[0] = 0.7;
  Var z = random_var({1, 8, 4, 4}, s + 1);
  return {"attention",
          [module, z, s] { return weighted_sum(module->forward(z), s); },
          {z, module->key, module->query, module->value, module->output, module->gamma},
          module};
}

/// Conditional batch norm in training mode with non-trivial scale and shift heads.
inline GradientCase conditional_norm_case(std::uint64_t s) {
  auto norm = std::make_shared<ConditionalNorm>(3, 4, NormMode::cbn);
  ParameterSet set;
  norm->collect("norm", set);
  perturb(set, s, 0.5);
  Var c = random_var({2, 3}, s + 1), f = random_var({2, 5, 4}, s + 2);
  return {"conditional_norm",
          [norm, c, f, s] { return weighted_sum(norm->forward(c, f, Mode::train), s); },
          {c, f, norm->scale.weight, norm->scale.bias, norm->shift.weight, norm->shift.bias},
          norm};
}

/// Image to loss through the whole model: every parameter and the image itself.
inline GradientCase end_to_end_case(std::uint64_t s, Placement placement = Placement::early) {
  auto model = std::make_shared<OccupancyModel>(tiny_model(placement), s);
  ParameterSet set = model->parameters();
  perturb(set, s + 5, 0.1);
  Var image = random_var({2, 3, 4, 4}, s + 1);
  Var points = Var(random_tensor({2, 5, 3}, s + 2, 0.3));
  Tensor labels({2, 5});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i + s) % 2 ? 1.0 : 0.0;
  std::vector<Var> leaves{image};
  for (auto& p : set.parameters) leaves.push_back(*p.var);
  return {"end_to_end",
          [model, image, points, labels] { return bce_loss(model->forward(image, points, Mode::train), labels); },
          leaves, model};
}

/// Worst relative error over every leaf of a case. The floor keeps gradients that are zero up to
/// finite-difference round-off (about 1e-10 here) from dominating the ratio.
inline double worst_relative_error(GradientCase& c, double h = 1e-5, double abs_floor = 1e-5) {
  double worst = 0.0;
  for (Var& leaf : c.leaves)
    worst = std::max(worst, finite_difference_check(c.loss, leaf, h, abs_floor).max_relative_error);
  return worst;
}

}  // namespace occattn::testing
