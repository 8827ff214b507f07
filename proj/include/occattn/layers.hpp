#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "occattn/autodiff.hpp"
#include "occattn/ops.hpp"

namespace occattn {

using Rng = std::mt19937_64;

/// Train mode uses batch statistics and updates running buffers; eval mode is pure.
enum class Mode { train, eval };

struct NamedParameter {
  std::string name;
  Var* var;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

/// Flat, ordered view of a module tree's learnable parameters and persistent buffers.
struct ParameterSet {
  std::vector<NamedParameter> parameters;
  std::vector<NamedBuffer> buffers;

  void add(std::string name, Var& v) { parameters.push_back({std::move(name), &v}); }
  void add_buffer(std::string name, Tensor& t) { buffers.push_back({std::move(name), &t}); }
};

Var kaiming_parameter(Shape shape, std::size_t fan_in, Rng& rng);
Var constant_parameter(Shape shape, double value);

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  Var forward(const Var& x) const { return ops::fully_connected(x, weight, bias); }
  void collect(const std::string& prefix, ParameterSet& set);
};

struct Conv2d {
  Var weight;  // [F, C, k, k]
  ops::ConvOptions options;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);
  Var forward(const Var& x) const { return ops::conv2d(x, weight, options); }
  void collect(const std::string& prefix, ParameterSet& set);
};

/// Per-channel batch norm over (B, H, W) with affine weight/bias and running statistics.
struct BatchNorm2d {
  Var weight;
  Var bias;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);
  Var forward(const Var& x, Mode mode);
  Var forward(const Var& x, Mode mode) const;  // eval only
  void collect(const std::string& prefix, ParameterSet& set);
};

/// Normalizes with fixed moments shaped for broadcasting against x.
Var normalize_with(const Var& x, const Tensor& mean, const Tensor& var, double eps);

/// running = (1 - momentum) * running + momentum * batch, with unbiased batch variance.
void update_running_moments(Tensor& running_mean, Tensor& running_var, const Tensor& batch_mean,
                            const Tensor& batch_var, std::size_t population, double momentum);

}  // namespace occattn
