#include "occattn/decoder.hpp"

#include <type_traits>

#include "occattn/error.hpp"

namespace occattn {

std::string to_string(NormMode m) { return m == NormMode::cbn ? "cbn" : "adain"; }

NormMode parse_norm_mode(const std::string& text) {
  if (text == "cbn") return NormMode::cbn;
  if (text == "adain") return NormMode::adain;
  throw ConfigurationError("unknown normalization '" + text + "' (expected cbn|adain)");
}

void DecoderConfig::validate() const {
  if (hidden == 0) throw ConfigurationError("decoder hidden width must be positive");
  if (blocks != 5) throw ConfigurationError("decoder uses exactly 5 conditional blocks");
}

ConditionalNorm::ConditionalNorm(std::size_t feature_dim, std::size_t hidden, NormMode m)
    : mode(m), running_mean({1, 1, hidden}, 0.0), running_var({1, 1, hidden}, 1.0) {
  // Starts as plain normalization: scale head outputs 1, shift head outputs 0.
  shift.weight = constant_parameter({feature_dim, hidden}, 0.0);
  shift.bias = constant_parameter({hidden}, 0.0);
  scale.weight = constant_parameter({feature_dim, hidden}, 0.0);
  scale.bias = constant_parameter({hidden}, 1.0);
}

template <typename Self>
Var ConditionalNorm::forward_impl(Self& self, const Var& c, const Var& f_in, Mode mode, const Normalized* frozen) {
  if (c.rank() != 2 || f_in.rank() != 3 || c.dim(0) != f_in.dim(0))
    throw DimensionError("conditional norm expects c [B,|c|] and f_in [B,T,h], got " + shape_string(c.shape()) +
                         " and " + shape_string(f_in.shape()));
  const std::size_t b = f_in.dim(0), t = f_in.dim(1), h = f_in.dim(2);
  if (self.scale.weight.dim(1) != h || self.scale.weight.dim(0) != c.dim(1))
    throw DimensionError("conditional norm width mismatch");

  Var normalized;
  if (frozen) {
    normalized = normalize_with(f_in, frozen->mean, frozen->variance, self.eps);
  } else if (self.mode == NormMode::adain) {
    normalized = ops::batch_normalize(f_in, {1}, self.eps).output;
  } else if (mode == Mode::train) {
    if (b * t < 2) throw EmptyPopulationError("conditional batch norm needs at least 2 values per channel");
    if constexpr (std::is_const_v<Self>) {
      throw ContractError("train-mode conditional norm needs a mutable layer");
    } else {
      auto n = ops::batch_normalize(f_in, {0, 1}, self.eps);
      update_running_moments(self.running_mean, self.running_var, n.mean, n.variance, b * t, self.momentum);
      normalized = n.output;
    }
  } else {
    normalized = normalize_with(f_in, self.running_mean, self.running_var, self.eps);
  }
  const Var gain = ops::reshape(self.scale.forward(c), {b, 1, h});
  const Var offset = ops::reshape(self.shift.forward(c), {b, 1, h});
  return ops::add(ops::mul(normalized, gain), offset);
}

Var ConditionalNorm::forward(const Var& c, const Var& f_in, Mode m, const Normalized* frozen) {
  return forward_impl(*this, c, f_in, m, frozen);
}

Var ConditionalNorm::forward(const Var& c, const Var& f_in, Mode m, const Normalized* frozen) const {
  return forward_impl(*this, c, f_in, m, frozen);
}

Normalized ConditionalNorm::instance_moments(const Var& f_in) const {
  return ops::batch_normalize(f_in, {1}, eps);
}

void ConditionalNorm::collect(const std::string& prefix, ParameterSet& set) {
  shift.collect(prefix + ".shift", set);
  scale.collect(prefix + ".scale", set);
  if (mode == NormMode::cbn) {
    set.add_buffer(prefix + ".running_mean", running_mean);
    set.add_buffer(prefix + ".running_var", running_var);
  }
}

Decoder::Decoder(const DecoderConfig& config, std::size_t feature_dim, Rng& rng)
    : config_(config), feature_dim_(feature_dim) {
  config_.validate();
  const std::size_t h = config_.hidden;
  embed_ = Linear(3, h, rng);
  blocks_.resize(config_.blocks);
  for (auto& block : blocks_) {
    block.norm0 = ConditionalNorm(feature_dim, h, config_.norm);
    block.fc0 = Linear(h, h, rng);
    block.norm1 = ConditionalNorm(feature_dim, h, config_.norm);
    block.fc1 = Linear(h, h, rng);
    // Residual branches start closed.
    block.fc1.weight.mutable_value().fill(0.0);
  }
  final_norm_ = ConditionalNorm(feature_dim, h, config_.norm);
  out_ = Linear(h, 1, rng);
}

void Decoder::check_inputs(const Var& c, const Var& points) const {
  if (c.rank() != 2 || c.dim(1) != feature_dim_)
    throw DimensionError("decoder expects features [B," + std::to_string(feature_dim_) + "], got " +
                         shape_string(c.shape()));
  if (points.rank() != 3 || points.dim(2) != 3 || points.dim(0) != c.dim(0))
    throw DimensionError("decoder expects points [B,T,3] matching features, got " + shape_string(points.shape()));
}

template <typename Self>
Var Decoder::forward_impl(Self& self, const Var& c, const Var& points, Mode mode, const FrozenMoments* frozen,
                          FrozenMoments* capture) {
  self.check_inputs(c, points);
  const std::size_t b = points.dim(0), t = points.dim(1);
  std::size_t norm_index = 0;
  auto normalize = [&](auto& norm, const Var& x) {
    const Normalized* fixed = frozen ? &frozen->at(norm_index) : nullptr;
    ++norm_index;
    if (capture) {
      capture->push_back(norm.instance_moments(x));
      fixed = &capture->back();
    }
    return norm.forward(c, x, mode, fixed);
  };
  Var net = self.embed_.forward(points);
  for (auto& block : self.blocks_) {
    const Var y = block.fc0.forward(ops::relu(normalize(block.norm0, net)));
    const Var dy = block.fc1.forward(ops::relu(normalize(block.norm1, y)));
    net = ops::add(net, dy);
  }
  const Var logits = self.out_.forward(ops::relu(normalize(self.final_norm_, net)));
  return ops::reshape(logits, {b, t});
}

Var Decoder::forward(const Var& c, const Var& points, Mode mode) {
  return forward_impl(*this, c, points, mode, nullptr, nullptr);
}

Var Decoder::forward(const Var& c, const Var& points, Mode mode, const FrozenMoments* frozen) const {
  return forward_impl(*this, c, points, mode, frozen, nullptr);
}

FrozenMoments Decoder::instance_moments(const Var& c, const Var& points) const {
  FrozenMoments moments;
  moments.reserve(2 * blocks_.size() + 1);
  forward_impl(*this, c, points, Mode::eval, nullptr, &moments);
  return moments;
}

void Decoder::collect(const std::string& prefix, ParameterSet& set) {
  embed_.collect(prefix + ".embed", set);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i + 1);
    blocks_[i].norm0.collect(p + ".norm0", set);
    blocks_[i].fc0.collect(p + ".fc0", set);
    blocks_[i].norm1.collect(p + ".norm1", set);
    blocks_[i].fc1.collect(p + ".fc1", set);
  }
  final_norm_.collect(prefix + ".final_norm", set);
  out_.collect(prefix + ".out", set);
}

}  // namespace occattn
