#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "occattn/mesh.hpp"

namespace occattn {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Pure pointwise field over a cubic domain; evaluate maps n points to n values.
struct ScalarField {
  std::function<Eigen::VectorXd(const Points&)> evaluate;
  Eigen::AlignedBox3d domain{Eigen::Vector3d::Constant(-0.55), Eigen::Vector3d::Constant(0.55)};

  /// Calls evaluate and rejects wrong counts or non-finite values with FieldError.
  Eigen::VectorXd operator()(const Points& points) const;
};

/// Soft sphere indicator sigmoid((r - |p - center|) / width); crosses 0.5 on the sphere.
ScalarField sphere_field(double radius, double width = 0.02, const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

/// Values at the (R+1)^3 corners of an R^3 voxel grid, x-major.
struct Lattice {
  std::size_t resolution = 0;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double cell = 1.0;
  std::vector<double> values;

  std::size_t side() const { return resolution + 1; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * side() + j) * side() + k; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return values[index(i, j, k)]; }
  Eigen::Vector3d position(std::size_t i, std::size_t j, std::size_t k) const {
    return origin + cell * Eigen::Vector3d(double(i), double(j), double(k));
  }
};

struct Voxel {
  std::uint32_t i = 0, j = 0, k = 0;
  bool operator==(const Voxel&) const = default;
  auto operator<=>(const Voxel&) const = default;
};

/// Cubic domain of the field sampled at (R+1)^3 corners. Requires R >= 2.
Lattice evaluate_grid(const ScalarField& field, std::size_t resolution);

/// Voxels whose corners do not all lie on one side of tau (value > tau counts as inside).
std::vector<Voxel> find_active_voxels(const Lattice& lattice, double tau);

/// Adaptive lattice: every evaluated point keyed by its coordinates at the current level.
struct OctreeGrid {
  std::size_t base_resolution = 0;
  std::size_t level = 0;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  double extent = 1.0;
  std::unordered_map<std::uint64_t, double> values;
  std::vector<Voxel> active;
  std::size_t evaluations = 0;

  std::size_t resolution() const { return base_resolution << level; }
  double cell() const { return extent / double(resolution()); }
  static std::uint64_t key(std::uint64_t i, std::uint64_t j, std::uint64_t k) { return (i << 42) | (j << 21) | k; }
};

/// Level-0 grid: dense evaluation plus its active voxels.
OctreeGrid initial_grid(const ScalarField& field, std::size_t base_resolution, double tau);

/// Splits every active voxel 8-way, evaluating only lattice points not seen before.
OctreeGrid refine(const ScalarField& field, const OctreeGrid& grid, double tau);

/// Dense lattice at the grid's level: evaluated values where known, trilinear
/// upsampling of the coarser level elsewhere.
Lattice fine_lattice(const OctreeGrid& grid);

/// Table-driven triangulation of the tau level; faces wind so normals point toward lower values.
Mesh marching_cubes(const Lattice& lattice, double tau);

struct ExtractionStats {
  std::size_t evaluations = 0;
  std::size_t final_resolution = 0;
  std::vector<std::size_t> active_per_level;
};

Mesh extract(const ScalarField& field, double tau, std::size_t base_resolution, std::size_t levels,
             ExtractionStats* stats = nullptr);

}  // namespace occattn
