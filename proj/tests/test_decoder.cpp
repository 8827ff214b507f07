#include <doctest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "occattn/error.hpp"

using namespace occattn;
using namespace occattn::testing;

namespace {

/// Conditional norm computed directly from its definition. axes_bt selects batch moments
/// over (B, T) when true, per-sample moments over T otherwise.
Tensor direct_conditional_norm(const ConditionalNorm& n, const Tensor& c, const Tensor& f, bool axes_bt) {
  const std::size_t b = f.dim(0), t = f.dim(1), h = f.dim(2), k = c.dim(1);
  auto head = [&](const Linear& l, std::size_t s, std::size_t ch) {
    double v = l.bias.value()[ch];
    for (std::size_t i = 0; i < k; ++i) v += c[s * k + i] * l.weight.value()[i * h + ch];
    return v;
  };
  Tensor out(f.shape());
  for (std::size_t ch = 0; ch < h; ++ch)
    for (std::size_t s = 0; s < b; ++s) {
      double mean = 0.0, var = 0.0, count = 0.0;
      for (std::size_t s2 = 0; s2 < b; ++s2) {
        if (!axes_bt && s2 != s) continue;
        for (std::size_t q = 0; q < t; ++q) mean += f[(s2 * t + q) * h + ch], count += 1.0;
      }
      mean /= count;
      for (std::size_t s2 = 0; s2 < b; ++s2) {
        if (!axes_bt && s2 != s) continue;
        for (std::size_t q = 0; q < t; ++q) var += std::pow(f[(s2 * t + q) * h + ch] - mean, 2) / count;
      }
      for (std::size_t q = 0; q < t; ++q) {
        const std::size_t i = (s * t + q) * h + ch;
        out[i] = (f[i] - mean) / std::sqrt(var + n.eps) * head(n.scale, s, ch) + head(n.shift, s, ch);
      }
    }
  return out;
}

}  // namespace

TEST_CASE("conditional batch norm matches the direct formula") {
  for (NormMode mode : {NormMode::cbn, NormMode::adain}) {
    ConditionalNorm n(3, 4, mode);
    ParameterSet set;
    n.collect("n", set);
    perturb(set, 7, 0.5);
    const Tensor c = random_tensor({2, 3}, 1), f = random_tensor({2, 6, 4}, 2, 2.0);
    const Tensor got = n.forward(Var(c), Var(f), Mode::train).value();
    const Tensor want = direct_conditional_norm(n, c, f, mode == NormMode::cbn);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("conditional norm starts as plain normalization") {
  ConditionalNorm n(3, 4, NormMode::cbn);
  const Tensor f = random_tensor({2, 5, 4}, 3);
  const Tensor a = n.forward(Var(random_tensor({2, 3}, 4)), Var(f), Mode::train).value();
  const Tensor b = ops::batch_normalize(Var(f), {0, 1}, n.eps).output.value();
  CHECK(a == b);
}

TEST_CASE("conditional batch norm tracks running moments for evaluation") {
  ConditionalNorm n(2, 3, NormMode::cbn);
  const Tensor c = random_tensor({2, 2}, 1), f = random_tensor({2, 4, 3}, 2);
  n.forward(Var(c), Var(f), Mode::train);
  const auto moments = ops::batch_normalize(Var(f), {0, 1}, n.eps);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    CHECK(n.running_mean[ch] == doctest::Approx(0.1 * moments.mean[ch]).epsilon(1e-12));
    CHECK(n.running_var[ch] == doctest::Approx(0.9 + 0.1 * moments.variance[ch] * 8.0 / 7.0).epsilon(1e-12));
  }
  const Tensor eval = n.forward(Var(c), Var(f), Mode::eval).value();
  const Tensor want = normalize_with(Var(f), n.running_mean, n.running_var, n.eps).value();
  CHECK(eval == want);
}

TEST_CASE("conditional batch norm needs two values per channel") {
  ConditionalNorm n(2, 3, NormMode::cbn);
  CHECK_THROWS_AS(n.forward(Var(Tensor({1, 2})), Var(Tensor({1, 1, 3})), Mode::train), EmptyPopulationError);
  CHECK_THROWS_AS(n.forward(Var(Tensor({1, 5})), Var(Tensor({1, 1, 3})), Mode::train), DimensionError);
}

TEST_CASE("conditional norm gradients pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = conditional_norm_case(seed);
    CHECK(worst_relative_error(c) < 1e-4);
  }
}

TEST_CASE("decoder mean logit gradient passes finite differences") {
  for (NormMode mode : {NormMode::cbn, NormMode::adain}) {
    Rng rng(3);
    DecoderConfig config;
    config.hidden = 6;
    config.norm = mode;
    Decoder decoder(config, 4, rng);
    ParameterSet set;
    decoder.collect("decoder", set);
    perturb(set, 4, 0.2);
    const Var c = random_var({2, 4}, 5);
    const Var points = random_var({2, 7, 3}, 6, 0.3);
    auto loss = [&] { return ops::mean(decoder.forward(c, points, Mode::train)); };
    double worst = 0.0;
    for (auto& p : set.parameters) worst = std::max(worst, finite_difference_check(loss, *p.var).max_relative_error);
    worst = std::max(worst, finite_difference_check(loss, c).max_relative_error);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("frozen instance moments reproduce the per-sample path") {
  Rng rng(1);
  DecoderConfig config;
  config.norm = NormMode::adain;
  Decoder decoder(config, 4, rng);
  ParameterSet set;
  decoder.collect("d", set);
  perturb(set, 2, 0.2);
  const Var c(random_tensor({1, 4}, 3));
  const Var points(random_tensor({1, 50, 3}, 4, 0.3));
  const FrozenMoments moments = decoder.instance_moments(c, points);
  CHECK(moments.size() == 11);
  const Tensor free = std::as_const(decoder).forward(c, points, Mode::eval).value();
  const Tensor frozen = std::as_const(decoder).forward(c, points, Mode::eval, &moments).value();
  for (std::size_t i = 0; i < free.size(); ++i) CHECK(std::abs(free[i] - frozen[i]) < 1e-12);
}

TEST_CASE("occupancy probability is the sigmoid of the logits") {
  OccupancyModel model(tiny_model(), 3);
  ParameterSet set = model.parameters();
  perturb(set, 1, 0.3);
  const Tensor features = model.encode(random_tensor({2, 3, 4, 4}, 2));
  const Tensor points = random_tensor({2, 9, 3}, 3, 0.4);
  const Tensor logits = model.occupancy_logits(features, points);
  const Tensor p = model.occupancy_prob(features, points);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - 1.0 / (1.0 + std::exp(-logits[i]))) < 1e-15);
  const Tensor extremes = sigmoid(Tensor({3}, {-800.0, 0.0, 800.0}));
  CHECK(extremes[0] == 0.0);
  CHECK(extremes[1] == 0.5);
  CHECK(extremes[2] == 1.0);
}

TEST_CASE("decoder checks its inputs") {
  Rng rng(1);
  Decoder decoder(DecoderConfig{}, 4, rng);
  CHECK_THROWS_AS(decoder.forward(Var(Tensor({2, 3})), Var(Tensor({2, 5, 3})), Mode::train), DimensionError);
  CHECK_THROWS_AS(decoder.forward(Var(Tensor({2, 4})), Var(Tensor({2, 5, 2})), Mode::train), DimensionError);
  DecoderConfig bad;
  bad.blocks = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  CHECK(parse_norm_mode("adain") == NormMode::adain);
  CHECK_THROWS_AS(parse_norm_mode("layer"), ConfigurationError);
}

TEST_CASE("model copies are deep") {
  OccupancyModel a(tiny_model(Placement::early), 1);
  OccupancyModel b = a;
  a.parameters().parameters.front().var->mutable_value().fill(9.0);
  CHECK(b.parameters().parameters.front().var->value()[0] != 9.0);
}

TEST_CASE("whole-model gradients pass finite differences") {
  auto c = end_to_end_case(1);
  CHECK(worst_relative_error(c) < 1e-4);
}
