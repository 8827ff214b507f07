#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "occattn/layers.hpp"

namespace occattn {

/// Which residual layers are followed by a self-attention module.
enum class Placement { none, early, late, all };

std::string to_string(Placement p);
Placement parse_placement(const std::string& text);  // throws ConfigurationError
std::array<bool, 4> attention_layers(Placement p);

struct EncoderConfig {
  std::size_t resolution = 64;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  std::array<std::size_t, 4> widths{16, 32, 64, 128};
  std::size_t feature_dim = 128;
  Placement placement = Placement::none;
  std::size_t reduction = 8;

  static EncoderConfig desk() { return {}; }
  static EncoderConfig full();
  void validate() const;
};

/// Spatial self-attention over all H*W locations with a zero-initialized residual gate.
///
/// With z flattened to N = H*W locations, keys f = W_f z, queries g = W_g z and values
/// h = W_h z live in C~ = max(1, C / reduction) channels. The score s_ij = f_i . g_j is
/// normalized over keys i for each output location j, the mixed values are projected back
/// to C channels by W_v, and the result is y = gamma * a + z.
struct SelfAttention {
  Var key;     // W_f [C~, C, 1, 1]
  Var query;   // W_g [C~, C, 1, 1]
  Var value;   // W_h [C~, C, 1, 1]
  Var output;  // W_v [C, C~, 1, 1]
  Var gamma;   // [1]

  SelfAttention() = default;
  SelfAttention(std::size_t channels, std::size_t reduction, Rng& rng);

  std::size_t channels() const { return output.dim(0); }
  std::size_t reduced_channels() const { return key.dim(0); }

  Var forward(const Var& z) const;
  /// Attention weights [B, N, N]; row j is the distribution over key locations i.
  Var attention_map(const Var& z) const;
  void collect(const std::string& prefix, ParameterSet& set);
};

std::size_t reduced_channels(std::size_t channels, std::size_t reduction);

struct ResidualBlock {
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
  bool has_projection = false;
  Conv2d projection;
  BatchNorm2d projection_bn;

  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);

  Var forward(const Var& x, Mode mode);
  Var forward(const Var& x, Mode mode) const;
  void collect(const std::string& prefix, ParameterSet& set);

 private:
  template <typename Self>
  static Var forward_impl(Self& self, const Var& x, Mode mode);
};

/// Residual CNN: stem conv -> 4 layers x 2 blocks (optional attention after each layer)
/// -> global average pool -> fully connected feature vector.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  Var forward(const Var& image, Mode mode);
  Var forward(const Var& image, Mode mode) const;
  /// Eval-mode features without graph recording.
  Tensor encode(const Tensor& image) const;
  /// Attention maps of every enabled module for an eval-mode pass, in layer order.
  std::vector<std::pair<std::size_t, Tensor>> attention_maps(const Tensor& image) const;

  std::array<SelfAttention, 4>& attention() { return attention_; }
  const std::array<SelfAttention, 4>& attention() const { return attention_; }
  void collect(const std::string& prefix, ParameterSet& set);

 private:
  template <typename Self>
  static Var forward_impl(Self& self, const Var& image, Mode mode,
                          std::vector<std::pair<std::size_t, Tensor>>* maps);
  void check_input(const Shape& shape) const;

  EncoderConfig config_;
  Conv2d stem_;
  BatchNorm2d stem_bn_;
  std::array<std::array<ResidualBlock, 2>, 4> layers_;
  std::array<SelfAttention, 4> attention_;
  Linear head_;
};

}  // namespace occattn
