#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "occattn/extraction.hpp"
#include "occattn/mesh.hpp"
#include "occattn/tensor.hpp"

namespace occattn {

inline constexpr std::array<std::string_view, 5> kShapeCategories = {"block", "barbell", "table4", "ring", "arch"};

enum class PrimitiveKind { sphere, box, cylinder, torus };

/// Solid in a local frame. size: sphere (r); box (half extents); cylinder (radius,
/// half height) along local z; torus (major, minor) around local z.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // local to world
  Eigen::Vector3d size = Eigen::Vector3d::Zero();

  bool contains(const Eigen::Vector3d& p) const;
  /// Exact signed distance, negative inside.
  double sdf(const Eigen::Vector3d& p) const;
  Eigen::AlignedBox3d bounds() const;
  bool operator==(const Primitive& other) const;
};

/// Union of primitives.
struct ShapeSpec {
  std::string category;
  std::uint64_t seed = 0;
  std::vector<Primitive> primitives;

  bool inside(const Eigen::Vector3d& p) const;
  /// min over primitives; +infinity for an empty spec.
  double sdf(const Eigen::Vector3d& p) const;
  Eigen::AlignedBox3d bounds() const;
  /// Rigidly rotates every primitive about the origin.
  ShapeSpec rotated(const Eigen::Matrix3d& r) const;
  bool operator==(const ShapeSpec& other) const = default;
};

/// Randomized member of a category, a pure function of (category, seed). Throws
/// ConfigurationError for unknown categories.
ShapeSpec generate_shape(const std::string& category, std::uint64_t seed);
std::size_t category_index(const std::string& category);

enum class Shading { silhouette, lambert };
Shading parse_shading(const std::string& text);
std::string to_string(Shading s);

struct RenderSpec {
  double azimuth_deg = 45.0;
  double elevation_deg = 25.0;
  std::size_t resolution = 64;
  std::size_t channels = 3;
  Shading shading = Shading::lambert;
  double background = 0.0;
  double extent = 1.25;  // world width covered by the image
};

/// Unit vector from the origin toward the orthographic camera.
Eigen::Vector3d view_direction(const RenderSpec& view);

/// Orthographic sphere-traced image [C,H,W]. Lambert channels use three lights fixed
/// in the camera frame.
Tensor render(const ShapeSpec& spec, const RenderSpec& view);

/// Marching cubes over sigmoid(-sdf / cell) at the given lattice resolution.
Mesh ground_truth_mesh(const ShapeSpec& spec, std::size_t resolution);

struct OccupancySamples {
  Points points;
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> labels;
  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

inline constexpr double kPaddedHalfWidth = 0.55;

/// Uniform points in the padded cube labelled by the analytic inside test.
OccupancySamples sample_training_points(const ShapeSpec& spec, std::size_t count, std::uint64_t seed);

void write_image(const Tensor& image, const std::filesystem::path& path);
Tensor read_image(const std::filesystem::path& path);
void write_samples(const OccupancySamples& samples, const std::filesystem::path& path);
OccupancySamples read_samples(const std::filesystem::path& path);

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& text);
/// Within a category, index j goes to train for j % 10 < 8, val for 8, test for 9.
Split split_for_index(std::size_t index);

struct DatasetConfig {
  std::vector<std::string> categories{kShapeCategories.begin(), kShapeCategories.end()};
  std::size_t per_category = 10;
  std::size_t views = 8;
  std::uint64_t seed = 0;
  std::size_t resolution = 64;
  Shading shading = Shading::lambert;
  std::size_t samples = 100000;
  std::size_t mesh_resolution = 64;
};

struct ObjectEntry {
  std::string id;
  std::string category;
  Split split = Split::train;
  std::uint64_t seed = 0;
  std::vector<std::string> images;  // relative to the manifest directory
  std::vector<std::array<double, 2>> views;  // azimuth, elevation in degrees
  std::string mesh;
  std::string samples;
};

struct DatasetManifest {
  std::filesystem::path root;
  DatasetConfig config;
  std::vector<ObjectEntry> objects;

  std::vector<const ObjectEntry*> select(Split split, const std::string& category = "") const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

/// Per-view camera used for image v of an object.
RenderSpec dataset_view(const DatasetConfig& config, std::size_t v);
std::uint64_t object_seed(std::uint64_t dataset_seed, std::size_t category, std::size_t index);

/// Writes images, samples, meshes, and manifest.json under out_dir.
DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);
std::string manifest_json(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace occattn
