#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "occattn/autodiff.hpp"
#include "occattn/model.hpp"
#include "occattn/tensor.hpp"

namespace occattn::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = normal(rng);
  return t;
}

inline Var random_var(Shape shape, std::uint64_t seed, double scale = 1.0) {
  return Var(random_tensor(std::move(shape), seed, scale), true);
}

/// Encoder small enough for finite differences on a 4x4 image.
inline ModelConfig tiny_model(Placement placement = Placement::none, std::size_t resolution = 4) {
  ModelConfig c;
  c.encoder.resolution = resolution;
  c.encoder.stem_channels = 4;
  c.encoder.stem_stride = 1;
  c.encoder.widths = {8, 8, 8, 8};
  c.encoder.feature_dim = 6;
  c.encoder.reduction = 4;
  c.encoder.placement = placement;
  c.decoder.hidden = 5;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("occattn_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace occattn::testing
