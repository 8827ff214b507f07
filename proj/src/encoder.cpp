#include "occattn/encoder.hpp"

#include <algorithm>
#include <utility>

#include "occattn/error.hpp"

namespace occattn {

std::string to_string(Placement p) {
  switch (p) {
    case Placement::none: return "none";
    case Placement::early: return "early";
    case Placement::late: return "late";
    case Placement::all: return "all";
  }
  return "none";
}

Placement parse_placement(const std::string& text) {
  if (text == "none") return Placement::none;
  if (text == "early") return Placement::early;
  if (text == "late") return Placement::late;
  if (text == "all") return Placement::all;
  throw ConfigurationError("unknown attention placement '" + text + "' (expected none|early|late|all)");
}

std::array<bool, 4> attention_layers(Placement p) {
  switch (p) {
    case Placement::none: return {false, false, false, false};
    case Placement::early: return {true, true, false, false};
    case Placement::late: return {false, false, true, true};
    case Placement::all: return {true, true, true, true};
  }
  return {};
}

EncoderConfig EncoderConfig::full() {
  EncoderConfig c;
  c.resolution = 137;
  c.stem_channels = 64;
  c.widths = {64, 128, 256, 512};
  c.feature_dim = 256;
  return c;
}

void EncoderConfig::validate() const {
  if (resolution == 0 || in_channels == 0 || stem_channels == 0 || stem_stride == 0 || feature_dim == 0 ||
      reduction == 0)
    throw ConfigurationError("encoder sizes must be positive");
  for (std::size_t w : widths)
    if (w == 0) throw ConfigurationError("encoder layer widths must be positive");
}

std::size_t reduced_channels(std::size_t channels, std::size_t reduction) {
  return std::max<std::size_t>(1, channels / reduction);
}

SelfAttention::SelfAttention(std::size_t channels, std::size_t reduction, Rng& rng) {
  const std::size_t reduced = occattn::reduced_channels(channels, reduction);
  key = kaiming_parameter({reduced, channels, 1, 1}, channels, rng);
  query = kaiming_parameter({reduced, channels, 1, 1}, channels, rng);
  value = kaiming_parameter({reduced, channels, 1, 1}, channels, rng);
  output = kaiming_parameter({channels, reduced, 1, 1}, reduced, rng);
  gamma = constant_parameter({1}, 0.0);
}

namespace {

struct AttentionTerms {
  Var beta;          // [B, N(j), N(i)]
  Var values_by_row;  // h transposed, [B, N, C~]
};

AttentionTerms attention_terms(const SelfAttention& m, const Var& z) {
  if (z.rank() != 4) throw DimensionError("attention expects a [B,C,H,W] input, got " + shape_string(z.shape()));
  if (z.dim(1) != m.channels())
    throw DimensionError("attention module has " + std::to_string(m.channels()) + " channels, input has " +
                         std::to_string(z.dim(1)));
  const std::size_t b = z.dim(0), n = z.dim(2) * z.dim(3), reduced = m.reduced_channels();
  const Var f = ops::reshape(ops::conv2d(z, m.key), {b, reduced, n});
  const Var g = ops::reshape(ops::conv2d(z, m.query), {b, reduced, n});
  const Var h = ops::reshape(ops::conv2d(z, m.value), {b, reduced, n});
  // Row j of g^T f holds s_ij = f_i . g_j for every key i, so a row softmax normalizes over keys.
  const Var scores = ops::batched_matmul(ops::transpose(g), f);
  return {ops::softmax_rows(scores), ops::transpose(h)};
}

}  // namespace

Var SelfAttention::forward(const Var& z) const {
  const auto [beta, values_by_row] = attention_terms(*this, z);
  const std::size_t b = z.dim(0), height = z.dim(2), width = z.dim(3);
  // mixed[j][c] = sum_i beta[j][i] h[c][i]
  const Var mixed = ops::transpose(ops::batched_matmul(beta, values_by_row));
  const Var a = ops::conv2d(ops::reshape(mixed, {b, reduced_channels(), height, width}), output);
  return ops::add(ops::mul(a, ops::reshape(gamma, {1, 1, 1, 1})), z);
}

Var SelfAttention::attention_map(const Var& z) const { return attention_terms(*this, z).beta; }

void SelfAttention::collect(const std::string& prefix, ParameterSet& set) {
  set.add(prefix + ".key", key);
  set.add(prefix + ".query", query);
  set.add(prefix + ".value", value);
  set.add(prefix + ".output", output);
  set.add(prefix + ".gamma", gamma);
}

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : conv1(in, out, 3, stride, 1, rng),
      bn1(out),
      conv2(out, out, 3, 1, 1, rng),
      bn2(out),
      has_projection(stride != 1 || in != out) {
  if (has_projection) {
    projection = Conv2d(in, out, 1, stride, 0, rng);
    projection_bn = BatchNorm2d(out);
  }
}

template <typename Self>
Var ResidualBlock::forward_impl(Self& self, const Var& x, Mode mode) {
  Var y = ops::relu(self.bn1.forward(self.conv1.forward(x), mode));
  y = self.bn2.forward(self.conv2.forward(y), mode);
  const Var skip = self.has_projection ? self.projection_bn.forward(self.projection.forward(x), mode) : x;
  return ops::relu(ops::add(y, skip));
}

Var ResidualBlock::forward(const Var& x, Mode mode) { return forward_impl(*this, x, mode); }
Var ResidualBlock::forward(const Var& x, Mode mode) const { return forward_impl(*this, x, mode); }

void ResidualBlock::collect(const std::string& prefix, ParameterSet& set) {
  conv1.collect(prefix + ".conv1", set);
  bn1.collect(prefix + ".bn1", set);
  conv2.collect(prefix + ".conv2", set);
  bn2.collect(prefix + ".bn2", set);
  if (has_projection) {
    projection.collect(prefix + ".projection", set);
    projection_bn.collect(prefix + ".projection_bn", set);
  }
}

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  stem_ = Conv2d(config_.in_channels, config_.stem_channels, 3, config_.stem_stride, 1, rng);
  stem_bn_ = BatchNorm2d(config_.stem_channels);
  std::size_t in = config_.stem_channels;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t out = config_.widths[l];
    layers_[l][0] = ResidualBlock(in, out, l == 0 ? 1 : 2, rng);
    layers_[l][1] = ResidualBlock(out, out, 1, rng);
    in = out;
  }
  head_ = Linear(config_.widths[3], config_.feature_dim, rng);
  // Attention weights are drawn after the backbone so that encoders differing only in
  // placement share every backbone weight for a given seed.
  const auto enabled = attention_layers(config_.placement);
  for (std::size_t l = 0; l < 4; ++l)
    if (enabled[l]) attention_[l] = SelfAttention(config_.widths[l], config_.reduction, rng);
}

void Encoder::check_input(const Shape& shape) const {
  const Shape expected{shape.empty() ? 0 : shape[0], config_.in_channels, config_.resolution, config_.resolution};
  if (shape.size() != 4 || shape != expected)
    throw DimensionError("encoder expects image " + shape_string(expected) + ", got " + shape_string(shape));
}

template <typename Self>
Var Encoder::forward_impl(Self& self, const Var& image, Mode mode,
                          std::vector<std::pair<std::size_t, Tensor>>* maps) {
  self.check_input(image.shape());
  Var x = ops::relu(self.stem_bn_.forward(self.stem_.forward(image), mode));
  for (std::size_t l = 0; l < 4; ++l) {
    for (auto& block : self.layers_[l]) x = block.forward(x, mode);
    const auto& attn = self.attention_[l];
    if (attn.gamma.defined()) {
      if (maps) maps->emplace_back(l + 1, attn.attention_map(x).value());
      x = attn.forward(x);
    }
  }
  return self.head_.forward(ops::global_average_pool(x));
}

Var Encoder::forward(const Var& image, Mode mode) { return forward_impl(*this, image, mode, nullptr); }
Var Encoder::forward(const Var& image, Mode mode) const { return forward_impl(*this, image, mode, nullptr); }

Tensor Encoder::encode(const Tensor& image) const {
  NoGradGuard guard;
  return forward(Var(image), Mode::eval).value();
}

std::vector<std::pair<std::size_t, Tensor>> Encoder::attention_maps(const Tensor& image) const {
  NoGradGuard guard;
  std::vector<std::pair<std::size_t, Tensor>> maps;
  forward_impl(*this, Var(image), Mode::eval, &maps);
  return maps;
}

void Encoder::collect(const std::string& prefix, ParameterSet& set) {
  stem_.collect(prefix + ".stem", set);
  stem_bn_.collect(prefix + ".stem_bn", set);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t b = 0; b < 2; ++b)
      layers_[l][b].collect(prefix + ".layer" + std::to_string(l + 1) + ".block" + std::to_string(b + 1), set);
    if (attention_[l].gamma.defined()) attention_[l].collect(prefix + ".attention" + std::to_string(l + 1), set);
  }
  head_.collect(prefix + ".head", set);
}

}  // namespace occattn
