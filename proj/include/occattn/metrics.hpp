#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "occattn/extraction.hpp"
#include "occattn/mesh.hpp"

namespace occattn {

/// Ray-parity containment for a watertight mesh, accelerated by binning triangles
/// along a fixed jittered ray direction. Throws TopologyError for open meshes.
class InsideTester {
 public:
  explicit InsideTester(const Mesh& mesh);
  bool contains(const Eigen::Vector3d& p) const;

 private:
  struct Projected {
    Eigen::Vector2d a, b, c;
  };
  int parity_along(const Eigen::Vector3d& p, const Eigen::Vector3d& dir, const std::vector<int>& candidates,
                   bool* degenerate) const;

  Mesh mesh_;
  Eigen::Vector3d dir_, u_, v_;
  Eigen::Vector2d lo_, hi_;
  std::size_t grid_ = 1;
  std::vector<std::vector<int>> bins_;
};

bool point_in_mesh(const Eigen::Vector3d& p, const Mesh& mesh);

/// Monte-Carlo intersection over union inside the joint bounding box padded 5% per axis.
double volumetric_iou(const Mesh& pred, const Mesh& gt, std::size_t samples, std::uint64_t seed);

struct SurfaceSamples {
  Points points;
  Points normals;
  std::vector<int> faces;
  std::uint64_t seed = 0;
  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

/// Area-weighted triangle choice with uniform barycentric placement.
SurfaceSamples sample_surface(const Mesh& mesh, std::size_t count, std::uint64_t seed);

enum class Distance { euclidean, manhattan };

/// Exact nearest-neighbour search over a fixed point set.
class KdTree {
 public:
  explicit KdTree(const Points& points);
  struct Hit {
    std::size_t index = 0;
    double distance = 0.0;
  };
  Hit nearest(const Eigen::Vector3d& q, Distance metric = Distance::euclidean) const;
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }

 private:
  struct Node {
    int left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;
    int axis = -1;
    double split = 0.0;
  };
  int build(std::uint32_t begin, std::uint32_t end);

  Points points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Closest-triangle search over a mesh.
class TriangleBvh {
 public:
  explicit TriangleBvh(const Mesh& mesh);
  struct Hit {
    int face = -1;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    double distance = 0.0;
  };
  Hit closest(const Eigen::Vector3d& q) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;
  };
  int build(std::uint32_t begin, std::uint32_t end);

  Mesh mesh_;
  std::vector<int> faces_;
  std::vector<Eigen::Vector3d> centroids_;
  std::vector<Node> nodes_;
};

/// 1/2 mean over a of the distance to the nearest b point plus the mirrored term.
double chamfer_l1(const SurfaceSamples& a, const SurfaceSamples& b, Distance metric = Distance::euclidean);
double chamfer_l1(const Points& a, const Points& b, Distance metric = Distance::euclidean);
/// Sum of squared nearest distances in both directions, unnormalized.
double chamfer_squared(const Points& x, const Points& y);

/// Symmetric mean |cos| between sample normals and the closest triangle's normal on the other mesh.
double normal_consistency(const Mesh& pred, const Mesh& gt, std::size_t samples, std::uint64_t seed);

struct MetricsConfig {
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  Distance distance = Distance::euclidean;
};

struct MetricsRecord {
  std::string category;
  std::string object_id;
  std::optional<double> iou, chamfer_l1, normal_consistency;
  std::vector<std::string> errors;

  bool complete() const { return iou && chamfer_l1 && normal_consistency; }
};

/// Runs all three metrics with shared seeds; a failing metric stays empty and its error is recorded.
MetricsRecord evaluate_pair(const Mesh& pred, const Mesh& gt, const MetricsConfig& config);

inline constexpr const char* kMetricsCsvHeader = "category,object_id,iou,chamfer_l1,normal_consistency";
std::string metrics_csv_row(const MetricsRecord& record);
std::string metrics_csv(const std::vector<MetricsRecord>& records);

}  // namespace occattn
