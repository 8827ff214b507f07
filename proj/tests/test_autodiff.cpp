#include <doctest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "occattn/error.hpp"

using namespace occattn;
using namespace occattn::testing;

TEST_CASE("matmul matches a triple loop") {
  const Tensor a = random_tensor({5, 4}, 1), b = random_tensor({4, 3}, 2);
  const Tensor c = ops::matmul(Var(a), Var(b)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += a[i * 4 + k] * b[k * 3 + j];
      CHECK(std::abs(c[i * 3 + j] - ref) < 1e-12);
    }
}

TEST_CASE("conv2d matches nested loops") {
  for (auto [stride, padding] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {1, 1}}) {
    const Tensor x = random_tensor({1, 2, 5, 5}, 3), w = random_tensor({3, 2, 3, 3}, 4);
    const Tensor y = ops::conv2d(Var(x), Var(w), {stride, padding}).value();
    const Tensor yd = ops::conv2d_direct(Var(x), Var(w), {stride, padding}).value();
    const std::size_t out = ops::conv_output_extent(5, 3, stride, padding);
    REQUIRE(y.shape() == Shape{1, 3, out, out});
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t oy = 0; oy < out; ++oy)
        for (std::size_t ox = 0; ox < out; ++ox) {
          double ref = 0.0;
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long iy = long(oy * stride + ky) - long(padding), ix = long(ox * stride + kx) - long(padding);
                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                ref += w[((f * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 5 + std::size_t(iy)) * 5 + std::size_t(ix)];
              }
          const std::size_t o = (f * out + oy) * out + ox;
          CHECK(std::abs(y[o] - ref) < 1e-12);
          CHECK(std::abs(yd[o] - ref) < 1e-12);
        }
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  CHECK_THROWS_AS(ops::conv2d(Var(Tensor({1, 2, 5, 5})), Var(Tensor({3, 4, 3, 3}))), DimensionError);
}

TEST_CASE("softmax rows sum to one and match exp-normalize") {
  const Tensor x = random_tensor({4, 4}, 5, 3.0);
  const Tensor y = ops::softmax_rows(Var(x)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0, denom = 0.0;
    for (std::size_t j = 0; j < 4; ++j) denom += std::exp(x[i * 4 + j]);
    for (std::size_t j = 0; j < 4; ++j) {
      total += y[i * 4 + j];
      CHECK(std::abs(y[i * 4 + j] - std::exp(x[i * 4 + j]) / denom) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax is stable for large logits") {
  const Tensor y = ops::softmax_rows(Var(Tensor({1, 3}, {1000.0, 1000.0, -1000.0}))).value();
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[2] == 0.0);
}

TEST_CASE("batch normalize gives zero mean and eps-corrected unit variance") {
  const double eps = 1e-5;
  const Tensor x = random_tensor({8, 4}, 6, 2.0);
  const auto n = ops::batch_normalize(Var(x), {0}, eps);
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mean += n.output.value()[i * 4 + j] / 8.0;
    for (std::size_t i = 0; i < 8; ++i) var += std::pow(n.output.value()[i * 4 + j] - mean, 2) / 8.0;
    const double v = n.variance[j];
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(var - v / (v + eps)) < 1e-9);
  }
}

TEST_CASE("batch normalize needs a population") {
  CHECK_THROWS_AS(ops::batch_normalize(Var(Tensor({3, 4})), {}, 1e-5), EmptyPopulationError);
}

TEST_CASE("batch normalize of a constant is zero") {
  const auto n = ops::batch_normalize(Var(Tensor({4, 2}, 3.5)), {0}, 1e-5);
  for (double v : n.output.value().values()) CHECK(v == 0.0);
  CHECK(n.mean[0] == 3.5);
  CHECK(n.variance[0] == 0.0);
}

TEST_CASE("every primitive passes finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (auto& c : primitive_cases(seed * 100)) {
      CAPTURE(c.name);
      CAPTURE(seed);
      CHECK(worst_relative_error(c) < 1e-4);
    }
}

TEST_CASE("softmax cross-entropy toy gradient") {
  const Var logits = random_var({1, 5}, 8);
  Tensor onehot({1, 5});
  onehot[2] = 1.0;
  auto loss = [&] {
    const Var p = ops::softmax_rows(logits);
    const Var picked = ops::sum(ops::mul(p, Var(onehot)));
    return ops::scale(picked, -1.0);
  };
  CHECK(finite_difference_check(loss, logits, 1e-5).max_relative_error < 1e-6);
}

TEST_CASE("no-grad guard records no graph") {
  const Var a = random_var({2, 2}, 9);
  NoGradGuard guard;
  const Var b = ops::relu(a);
  CHECK_FALSE(b.requires_grad());
  CHECK_FALSE(grad_enabled());
}

TEST_CASE("non-finite results are rejected") {
  const Var a(Tensor({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(ops::scale(a, std::numeric_limits<double>::infinity()), NonFiniteError);
}

TEST_CASE("gradients accumulate across backward calls") {
  const Var a(Tensor({1}, {3.0}), true);
  backward(ops::mul(a, a));
  backward(ops::mul(a, a));
  CHECK(a.grad()[0] == doctest::Approx(12.0));
}
