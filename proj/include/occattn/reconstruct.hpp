#pragma once

#include <cstddef>

#include "occattn/extraction.hpp"
#include "occattn/model.hpp"

namespace occattn {

struct ReconstructConfig {
  double tau = 0.2;
  std::size_t resolution = 16;
  std::size_t levels = 2;
  std::size_t chunk = 4096;  // points per decoder call
};

/// Occupancy probability of a frozen model conditioned on one image [C,H,W]. With
/// instance normalization the per-channel moments are fixed once from a reference
/// lattice so that the field stays pointwise.
ScalarField model_field(const OccupancyModel& model, const Tensor& image, std::size_t chunk = 4096);

/// Regular reference points (n^3 over the padded cube) used to freeze instance moments.
Tensor reference_points(std::size_t n = 16);

Mesh reconstruct(const OccupancyModel& model, const Tensor& image, const ReconstructConfig& config,
                 ExtractionStats* stats = nullptr);

}  // namespace occattn
