#include <doctest.h>

#include <Eigen/Dense>

#include "gradient_cases.hpp"
#include "occattn/error.hpp"

using namespace occattn;
using namespace occattn::testing;

namespace {

Eigen::MatrixXd weight_matrix(const Var& w) {
  return ConstMatrixMap(w.value().data(), Eigen::Index(w.dim(0)), Eigen::Index(w.dim(1)));
}

/// Attention with every N x N matrix materialized. Returns beta [N(j), N(i)] and the output [C, N].
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> dense_attention(const SelfAttention& m, const Tensor& z) {
  const Eigen::Index c = Eigen::Index(z.dim(1)), n = Eigen::Index(z.dim(2) * z.dim(3));
  const Eigen::MatrixXd x = ConstMatrixMap(z.data(), c, n);
  const Eigen::MatrixXd f = weight_matrix(m.key) * x;
  const Eigen::MatrixXd g = weight_matrix(m.query) * x;
  const Eigen::MatrixXd h = weight_matrix(m.value) * x;
  Eigen::MatrixXd s(n, n);  // s(i, j) = f_i . g_j
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s(i, j) = f.col(i).dot(g.col(j));
  Eigen::MatrixXd beta(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += std::exp(s(i, j));
    for (Eigen::Index i = 0; i < n; ++i) beta(j, i) = std::exp(s(i, j)) / total;
  }
  Eigen::MatrixXd o = Eigen::MatrixXd::Zero(c, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd mixed = Eigen::VectorXd::Zero(h.rows());
    for (Eigen::Index i = 0; i < n; ++i) mixed += beta(j, i) * h.col(i);
    o.col(j) = weight_matrix(m.output) * mixed;
  }
  const double gamma = m.gamma.value()[0];
  return {beta, gamma * o + x};
}

}  // namespace

TEST_CASE("attention matches the dense oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    SelfAttention m(8, 2, rng);
    m.gamma.mutable_value()[0] = 0.5;
    const Tensor z = random_tensor({1, 8, 3, 3}, seed + 10);
    const auto [beta, expected] = dense_attention(m, z);
    const Tensor y = m.forward(Var(z)).value();
    const Tensor map = m.attention_map(Var(z)).value();
    REQUIRE(map.shape() == Shape{1, 9, 9});
    for (std::size_t k = 0; k < y.size(); ++k) CHECK(std::abs(y[k] - expected(Eigen::Index(k / 9), Eigen::Index(k % 9))) < 1e-10);
    for (Eigen::Index j = 0; j < 9; ++j) {
      double row = 0.0;
      for (Eigen::Index i = 0; i < 9; ++i) {
        row += map[std::size_t(j * 9 + i)];
        CHECK(std::abs(map[std::size_t(j * 9 + i)] - beta(j, i)) < 1e-10);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("attention over a constant map is uniform") {
  Rng rng(3);
  SelfAttention m(8, 8, rng);
  const Tensor map = m.attention_map(Var(Tensor({1, 8, 3, 3}, 0.7))).value();
  for (double v : map.values()) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("reduced channel count") {
  CHECK(reduced_channels(64, 8) == 8);
  CHECK(reduced_channels(16, 8) == 2);
  CHECK(reduced_channels(4, 8) == 1);
  Rng rng(1);
  CHECK(SelfAttention(4, 8, rng).reduced_channels() == 1);
}

TEST_CASE("attention rejects a channel mismatch") {
  Rng rng(1);
  SelfAttention m(8, 2, rng);
  CHECK_THROWS_AS(m.forward(Var(Tensor({1, 4, 3, 3}))), DimensionError);
}

TEST_CASE("attention gradients pass finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = attention_case(seed);
    CHECK(worst_relative_error(c) < 1e-4);
  }
}

TEST_CASE("gate starts closed so attention is the identity") {
  Rng rng(2);
  SelfAttention m(8, 2, rng);
  CHECK(m.gamma.value()[0] == 0.0);
  const Tensor z = random_tensor({2, 8, 3, 3}, 4);
  CHECK(m.forward(Var(z)).value() == z);
}

TEST_CASE("attentioned encoders match the baseline at initialization") {
  const Tensor image = random_tensor({2, 3, 64, 64}, 5);
  for (Placement p : {Placement::early, Placement::late, Placement::all}) {
    OccupancyModel baseline(ModelConfig{}, 11);
    ModelConfig config;
    config.encoder.placement = p;
    OccupancyModel attended(config, 11);
    const Tensor a = baseline.encode(image), b = attended.encode(image);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-12);
    const Tensor ta = baseline.encoder().forward(Var(image), Mode::train).value();
    const Tensor tb = attended.encoder().forward(Var(image), Mode::train).value();
    CHECK(ta == tb);
  }
}

TEST_CASE("attention maps are reported per enabled layer") {
  OccupancyModel model(tiny_model(Placement::late, 8), 1);
  const auto maps = model.encoder().attention_maps(random_tensor({1, 3, 8, 8}, 2));
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].first == 3);
  CHECK(maps[1].first == 4);
  CHECK(maps[0].second.shape() == Shape{1, 4, 4});
}

TEST_CASE("placements") {
  CHECK(attention_layers(Placement::early) == std::array<bool, 4>{true, true, false, false});
  CHECK(attention_layers(Placement::late) == std::array<bool, 4>{false, false, true, true});
  CHECK(parse_placement("all") == Placement::all);
  CHECK(to_string(Placement::late) == "late");
  CHECK_THROWS_AS(parse_placement("middle"), ConfigurationError);
}

TEST_CASE("encoder checks the image shape") {
  OccupancyModel model(ModelConfig{}, 1);
  CHECK_THROWS_AS(model.encode(Tensor({1, 3, 32, 32})), DimensionError);
  CHECK_THROWS_AS(model.encode(Tensor({1, 1, 64, 64})), DimensionError);
  CHECK(model.encode(Tensor({2, 3, 64, 64})).shape() == Shape{2, 128});
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  c.widths[2] = 0;
  CHECK_THROWS_AS(c.validate(), ConfigurationError);
  CHECK(EncoderConfig::full().feature_dim == 256);
}
