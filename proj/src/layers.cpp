#include "occattn/layers.hpp"

#include <cmath>
#include <utility>

#include "occattn/error.hpp"

namespace occattn {

Var kaiming_parameter(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : t.values()) v = normal(rng);
  return Var(std::move(t), true);
}

Var constant_parameter(Shape shape, double value) { return Var(Tensor(std::move(shape), value), true); }

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(kaiming_parameter({in, out}, in, rng)), bias(constant_parameter({out}, 0.0)) {}

void Linear::collect(const std::string& prefix, ParameterSet& set) {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
               Rng& rng)
    : weight(kaiming_parameter({out, in, kernel, kernel}, in * kernel * kernel, rng)), options{stride, padding} {}

void Conv2d::collect(const std::string& prefix, ParameterSet& set) { set.add(prefix + ".weight", weight); }

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : weight(constant_parameter({1, channels, 1, 1}, 1.0)),
      bias(constant_parameter({1, channels, 1, 1}, 0.0)),
      running_mean({1, channels, 1, 1}, 0.0),
      running_var({1, channels, 1, 1}, 1.0) {}

Var BatchNorm2d::forward(const Var& x, Mode mode) {
  if (mode == Mode::eval) return std::as_const(*this).forward(x, mode);
  auto n = ops::batch_normalize(x, {0, 2, 3}, eps);
  update_running_moments(running_mean, running_var, n.mean, n.variance, x.dim(0) * x.dim(2) * x.dim(3), momentum);
  return ops::add(ops::mul(n.output, weight), bias);
}

Var BatchNorm2d::forward(const Var& x, Mode mode) const {
  if (mode != Mode::eval) throw ContractError("train-mode batch norm needs a mutable layer");
  return ops::add(ops::mul(normalize_with(x, running_mean, running_var, eps), weight), bias);
}

void BatchNorm2d::collect(const std::string& prefix, ParameterSet& set) {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
  set.add_buffer(prefix + ".running_mean", running_mean);
  set.add_buffer(prefix + ".running_var", running_var);
}

Var normalize_with(const Var& x, const Tensor& mean, const Tensor& var, double eps) {
  Tensor neg_mean = mean;
  neg_mean.vector() = -mean.vector();
  Tensor inv_std = var;
  inv_std.vector() = (var.vector().array() + eps).rsqrt().matrix();
  return ops::mul(ops::add(x, Var(std::move(neg_mean))), Var(std::move(inv_std)));
}

void update_running_moments(Tensor& running_mean, Tensor& running_var, const Tensor& batch_mean,
                            const Tensor& batch_var, std::size_t population, double momentum) {
  const double correction =
      population > 1 ? static_cast<double>(population) / static_cast<double>(population - 1) : 1.0;
  running_mean.vector() = (1.0 - momentum) * running_mean.vector() + momentum * batch_mean.vector();
  running_var.vector() = (1.0 - momentum) * running_var.vector() + momentum * correction * batch_var.vector();
}

}  // namespace occattn
