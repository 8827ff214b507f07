#include <doctest.h>

#include <cmath>

#include "occattn/error.hpp"
#include "occattn/shapegen.hpp"
#include "occattn/trainer.hpp"
#include "test_support.hpp"

using namespace occattn;
using namespace occattn::testing;

namespace {

TrainingObject make_object(const std::string& category, std::uint64_t seed, std::size_t resolution,
                           std::size_t samples) {
  const ShapeSpec spec = generate_shape(category, seed);
  RenderSpec view;
  view.resolution = resolution;
  TrainingObject o;
  o.id = category + "_" + std::to_string(seed);
  o.category = category;
  o.images.push_back(render(spec, view));
  o.samples = sample_training_points(spec, samples, seed);
  return o;
}

TrainConfig small_config(std::size_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.val_interval = 5;
  c.batch_size = 2;
  c.points_per_object = 64;
  c.val_points = 64;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("binary cross-entropy matches the unfused formula") {
  const Tensor logits = random_tensor({3, 7}, 1, 4.0);
  Tensor labels({3, 7});
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0 ? 1.0 : 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-logits[i])), 1e-12, 1.0 - 1e-12);
    ref -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  ref /= double(logits.size());
  CHECK(std::abs(bce_loss(Var(logits), labels).value().item() - ref) < 1e-9);
}

TEST_CASE("binary cross-entropy stays finite for extreme logits") {
  const Tensor logits({1, 2}, {800.0, -800.0});
  const double loss = bce_loss(Var(logits), Tensor({1, 2}, {1.0, 0.0})).value().item();
  CHECK(loss == doctest::Approx(0.0));
  CHECK(std::isfinite(bce_loss(Var(logits), Tensor({1, 2}, {0.0, 1.0})).value().item()));
}

TEST_CASE("Adam follows the hand-computed trajectory on theta squared") {
  TrainConfig config;
  config.learning_rate = 0.1;
  config.weight_decay = 0.01;
  Var theta(Tensor({1}, {1.0}), true);
  AdamState state;
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    theta.zero_grad();
    backward(ops::mul(theta, theta));
    adam_step({&theta}, state, config);
    const double g = 2.0 * x + 0.01 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double m_hat = m / (1.0 - std::pow(0.9, t)), v_hat = v / (1.0 - std::pow(0.999, t));
    x -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(std::abs(theta.value()[0] - x) < 1e-12);
  }
  CHECK(state.t == 3);
}

TEST_CASE("Adam rejects a mismatched state") {
  Var a(Tensor({2}), true), b(Tensor({3}), true);
  backward(ops::sum(ops::mul(a, a)));
  backward(ops::sum(ops::mul(b, b)));
  AdamState state;
  adam_step({&a}, state, TrainConfig{});
  CHECK_THROWS_AS(adam_step({&a, &b}, state, TrainConfig{}), ContractError);
}

TEST_CASE("training configuration validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  c = TrainConfig{};
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
}

TEST_CASE("training needs objects") {
  OccupancyModel model(tiny_model(Placement::none, 16), 1);
  CHECK_THROWS_AS(train(model, TrainingData{}, small_config(2)), ConfigurationError);
}

TEST_CASE("one object overfits within 500 steps") {
  TrainingData data;
  data.train.push_back(make_object("block", 4, 16, 4000));
  ModelConfig model_config;
  model_config.encoder.resolution = 16;
  model_config.encoder.placement = Placement::early;
  model_config.decoder.hidden = 32;
  OccupancyModel model(model_config, 2);
  TrainConfig config = small_config(500);
  config.batch_size = 1;
  config.points_per_object = 256;
  config.val_interval = 100;
  const TrainResult result = train(model, data, config);
  REQUIRE(result.history.size() == 500);
  CHECK(result.val_from_train);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) first += result.history[i].train_loss / 10.0;
  for (std::size_t i = 490; i < 500; ++i) last += result.history[i].train_loss / 10.0;
  CHECK(last < 0.1 * first);
}

TEST_CASE("history rows and validation schedule") {
  TrainingData data;
  data.train.push_back(make_object("ring", 1, 16, 2000));
  data.val.push_back(make_object("ring", 2, 16, 2000));
  OccupancyModel model(tiny_model(Placement::none, 16), 1);
  const TrainResult result = train(model, data, small_config(12));
  REQUIRE(result.history.size() == 12);
  CHECK_FALSE(result.val_from_train);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(result.history[i].step == i + 1);
    CHECK(result.history[i].val_loss.has_value() == ((i + 1) % 5 == 0 || i + 1 == 12));
  }
  double best = 1e300;
  for (const auto& row : result.history)
    if (row.val_loss) best = std::min(best, *row.val_loss);
  CHECK(result.best_val_loss == best);
  CHECK(validation_loss(result.best, data.val, small_config(12)) == doctest::Approx(best).epsilon(1e-12));
  const std::string csv = history_csv(result.history);
  CHECK(csv.rfind("step,train_loss,val_loss\n1,", 0) == 0);
}

TEST_CASE("training is deterministic per seed and placements share step-0 losses") {
  TrainingData data;
  data.train.push_back(make_object("barbell", 1, 16, 2000));
  data.train.push_back(make_object("table4", 2, 16, 2000));
  auto run = [&](Placement p) {
    OccupancyModel model(tiny_model(p, 16), 5);
    TrainConfig config = small_config(3);
    config.val_interval = 3;
    return train(model, data, config).history;
  };
  const auto a = run(Placement::none), b = run(Placement::none), c = run(Placement::early);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].train_loss == b[i].train_loss);
  CHECK(a[0].train_loss == c[0].train_loss);
}
