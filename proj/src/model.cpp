#include "occattn/model.hpp"

#include <cmath>

#include "occattn/error.hpp"

namespace occattn {

namespace {

// Separate generator streams keep decoder weights independent of encoder layout.
constexpr std::uint64_t kDecoderStream = 0x9e3779b97f4a7c15ULL;

void deep_copy_parameters(OccupancyModel& dst, const OccupancyModel& src) {
  auto d = dst.parameters();
  auto s = const_cast<OccupancyModel&>(src).parameters();
  for (std::size_t i = 0; i < d.parameters.size(); ++i)
    *d.parameters[i].var = Var(s.parameters[i].var->value(), true);
  for (std::size_t i = 0; i < d.buffers.size(); ++i) *d.buffers[i].tensor = *s.buffers[i].tensor;
}

}  // namespace

OccupancyModel::OccupancyModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  Rng encoder_rng(seed);
  Rng decoder_rng(seed ^ kDecoderStream);
  encoder_ = Encoder(config_.encoder, encoder_rng);
  decoder_ = Decoder(config_.decoder, config_.encoder.feature_dim, decoder_rng);
}

// Var handles share nodes, so copies rebuild fresh leaves holding the same values.
OccupancyModel::OccupancyModel(const OccupancyModel& other)
    : config_(other.config_), encoder_(other.encoder_), decoder_(other.decoder_) {
  deep_copy_parameters(*this, other);
}

OccupancyModel& OccupancyModel::operator=(const OccupancyModel& other) {
  if (this != &other) {
    config_ = other.config_;
    encoder_ = other.encoder_;
    decoder_ = other.decoder_;
    deep_copy_parameters(*this, other);
  }
  return *this;
}

Var OccupancyModel::forward(const Var& image, const Var& points, Mode mode) {
  const Var c = encoder_.forward(image, mode);
  return decoder_.forward(c, points, mode);
}

Tensor OccupancyModel::occupancy_logits(const Tensor& features, const Tensor& points,
                                        const FrozenMoments* frozen) const {
  NoGradGuard guard;
  return decoder_.forward(Var(features), Var(points), Mode::eval, frozen).value();
}

Tensor OccupancyModel::occupancy_prob(const Tensor& features, const Tensor& points,
                                      const FrozenMoments* frozen) const {
  return sigmoid(occupancy_logits(features, points, frozen));
}

ParameterSet OccupancyModel::parameters() {
  ParameterSet set;
  encoder_.collect("encoder", set);
  decoder_.collect("decoder", set);
  return set;
}

void OccupancyModel::zero_grad() {
  for (auto& p : parameters().parameters) p.var->zero_grad();
}

Tensor sigmoid(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = logits[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return out;
}

}  // namespace occattn
