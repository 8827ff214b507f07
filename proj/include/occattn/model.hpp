#pragma once

#include <cstdint>
#include <memory>

#include "occattn/decoder.hpp"
#include "occattn/encoder.hpp"

namespace occattn {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
};

/// Image-conditioned occupancy network: encoder features c condition the point decoder.
class OccupancyModel {
 public:
  OccupancyModel(const ModelConfig& config, std::uint64_t seed);

  OccupancyModel(const OccupancyModel& other);
  OccupancyModel& operator=(const OccupancyModel& other);
  OccupancyModel(OccupancyModel&&) noexcept = default;
  OccupancyModel& operator=(OccupancyModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  Decoder& decoder() { return decoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// image [B,C,H,W], points [B,T,3] -> logits [B,T].
  Var forward(const Var& image, const Var& points, Mode mode);

  Tensor encode(const Tensor& image) const { return encoder_.encode(image); }
  /// Eval-mode logits [B,T] for precomputed features.
  Tensor occupancy_logits(const Tensor& features, const Tensor& points, const FrozenMoments* frozen = nullptr) const;
  /// Sigmoid of occupancy_logits, in (0, 1).
  Tensor occupancy_prob(const Tensor& features, const Tensor& points, const FrozenMoments* frozen = nullptr) const;

  /// Parameters and buffers in a fixed order with stable names.
  ParameterSet parameters();
  void zero_grad();

 private:
  ModelConfig config_;
  Encoder encoder_;
  Decoder decoder_;
};

Tensor sigmoid(const Tensor& logits);

}  // namespace occattn
