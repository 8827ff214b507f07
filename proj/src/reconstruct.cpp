#include "occattn/reconstruct.hpp"

#include <algorithm>
#include <memory>

#include "occattn/error.hpp"
#include "occattn/runtime.hpp"
#include "occattn/shapegen.hpp"

namespace occattn {

Tensor reference_points(std::size_t n) {
  Tensor points({1, n * n * n, 3});
  const double step = 2.0 * kPaddedHalfWidth / double(n);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k, ++r) {
        points[r * 3 + 0] = -kPaddedHalfWidth + (double(i) + 0.5) * step;
        points[r * 3 + 1] = -kPaddedHalfWidth + (double(j) + 0.5) * step;
        points[r * 3 + 2] = -kPaddedHalfWidth + (double(k) + 0.5) * step;
      }
  return points;
}

ScalarField model_field(const OccupancyModel& model, const Tensor& image, std::size_t chunk) {
  if (image.rank() != 3) throw DimensionError("reconstruction expects one image [C,H,W], got " + shape_string(image.shape()));
  if (chunk == 0) throw ConfigurationError("chunk size must be positive");
  const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  auto features = std::make_shared<const Tensor>(model.encode(batch));
  std::shared_ptr<const FrozenMoments> frozen;
  if (model.config().decoder.norm == NormMode::adain) {
    NoGradGuard guard;
    frozen = std::make_shared<const FrozenMoments>(
        model.decoder().instance_moments(Var(*features), Var(reference_points())));
  }
  ScalarField field;
  field.evaluate = [&model, features, frozen, chunk](const Points& p) {
    Eigen::VectorXd out(p.rows());
    const std::size_t n = static_cast<std::size_t>(p.rows());
    const std::size_t pieces = (n + chunk - 1) / chunk;
    parallel_for(pieces, [&](std::size_t begin, std::size_t end) {
      NoGradGuard guard;
      for (std::size_t c = begin; c < end; ++c) {
        const std::size_t lo = c * chunk, count = std::min(chunk, n - lo);
        Tensor points({1, count, 3});
        std::copy(p.data() + lo * 3, p.data() + (lo + count) * 3, points.data());
        const Tensor prob = model.occupancy_prob(*features, points, frozen.get());
        std::copy(prob.data(), prob.data() + count, out.data() + lo);
      }
    });
    return out;
  };
  return field;
}

Mesh reconstruct(const OccupancyModel& model, const Tensor& image, const ReconstructConfig& config,
                 ExtractionStats* stats) {
  if (!(config.tau > 0.0 && config.tau < 1.0)) throw ConfigurationError("tau must lie in (0, 1)");
  return extract(model_field(model, image, config.chunk), config.tau, config.resolution, config.levels, stats);
}

}  // namespace occattn
