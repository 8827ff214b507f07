#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "occattn/layers.hpp"

namespace occattn {

using ops::Normalized;

enum class NormMode { cbn, adain };

std::string to_string(NormMode m);
NormMode parse_norm_mode(const std::string& text);

/// Feature-conditioned normalization: scale(c) * (f - mu) / sqrt(var + eps) + shift(c).
///
/// CBN takes moments per channel over every (sample, point) pair in the batch and keeps
/// running moments for eval. AdaIN takes moments per sample and channel over points only.
struct ConditionalNorm {
  Linear shift;  // phi: |c| -> h
  Linear scale;  // psi: |c| -> h
  NormMode mode = NormMode::cbn;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor running_mean;  // [1, 1, h], CBN only
  Tensor running_var;

  ConditionalNorm() = default;
  ConditionalNorm(std::size_t feature_dim, std::size_t hidden, NormMode mode);

  /// c [B, |c|], f_in [B, T, h] -> [B, T, h]. `frozen` supplies fixed AdaIN moments.
  Var forward(const Var& c, const Var& f_in, Mode mode, const Normalized* frozen = nullptr);
  Var forward(const Var& c, const Var& f_in, Mode mode, const Normalized* frozen = nullptr) const;
  /// Per-sample AdaIN moments of f_in, for reuse through `frozen`.
  Normalized instance_moments(const Var& f_in) const;
  void collect(const std::string& prefix, ParameterSet& set);

 private:
  template <typename Self>
  static Var forward_impl(Self& self, const Var& c, const Var& f_in, Mode mode, const Normalized* frozen);
};

struct DecoderConfig {
  std::size_t hidden = 64;
  std::size_t blocks = 5;
  NormMode norm = NormMode::cbn;

  static DecoderConfig desk() { return {}; }
  static DecoderConfig full() { return {256, 5, NormMode::cbn}; }
  void validate() const;
};

/// Fixed AdaIN moments, one entry per conditional norm in evaluation order.
using FrozenMoments = std::vector<Normalized>;

/// Occupancy decoder: point embedding -> conditional residual blocks -> norm/ReLU/FC logit.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& config, std::size_t feature_dim, Rng& rng);

  const DecoderConfig& config() const { return config_; }
  std::size_t feature_dim() const { return feature_dim_; }

  /// c [B, |c|], points [B, T, 3] -> logits [B, T].
  Var forward(const Var& c, const Var& points, Mode mode);
  Var forward(const Var& c, const Var& points, Mode mode, const FrozenMoments* frozen = nullptr) const;

  /// AdaIN moments of every conditional norm for a reference point set (eval mode).
  FrozenMoments instance_moments(const Var& c, const Var& points) const;

  void collect(const std::string& prefix, ParameterSet& set);

 private:
  struct Block {
    ConditionalNorm norm0;
    Linear fc0;
    ConditionalNorm norm1;
    Linear fc1;
  };

  template <typename Self>
  static Var forward_impl(Self& self, const Var& c, const Var& points, Mode mode, const FrozenMoments* frozen,
                          FrozenMoments* capture);
  void check_inputs(const Var& c, const Var& points) const;

  DecoderConfig config_;
  std::size_t feature_dim_ = 0;
  Linear embed_;
  std::vector<Block> blocks_;
  ConditionalNorm final_norm_;
  Linear out_;
};

}  // namespace occattn
