#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace occattn {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Indexed triangle surface.
struct Mesh {
  Vertices vertices;
  Faces faces;

  std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.rows()); }
  std::size_t face_count() const { return static_cast<std::size_t>(faces.rows()); }
  bool empty() const { return faces.rows() == 0; }

  Eigen::Vector3d corner(Eigen::Index face, int k) const { return vertices.row(faces(face, k)).transpose(); }
  /// Unit normals per face (zero rows for degenerate faces).
  Vertices face_normals() const;
  Eigen::VectorXd face_areas() const;
  double surface_area() const;
  /// Divergence-theorem volume; positive for outward-oriented closed meshes.
  double signed_volume() const;
  Eigen::AlignedBox3d bounds() const;
};

template <typename A, typename B, typename C>
Eigen::Vector3d triangle_cross(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b,
                               const Eigen::MatrixBase<C>& c) {
  return (b - a).cross(c - a);
}

/// Closest point on triangle abc to p (Ericson's region test).
Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c);

/// True when every undirected edge borders exactly two faces.
bool is_watertight(const Mesh& mesh);
/// V - E + F over the referenced vertices.
long euler_characteristic(const Mesh& mesh);
/// Throws ContractError if any face index is out of range.
void validate_indices(const Mesh& mesh);

/// Collapses faces whose area is at most `min_area` and compacts unused vertices.
Mesh remove_degenerate_faces(const Mesh& mesh, double min_area);

void write_off(const Mesh& mesh, const std::filesystem::path& path);
void write_obj(const Mesh& mesh, const std::filesystem::path& path);
std::string to_off_string(const Mesh& mesh);
Mesh read_off(const std::filesystem::path& path);
Mesh parse_off(const std::string& text);

/// Axis-aligned box [lo, hi] as 12 outward-facing triangles.
Mesh box_mesh(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi);
/// Subdivided icosahedron projected onto a sphere.
Mesh icosphere(const Eigen::Vector3d& center, double radius, int subdivisions);

}  // namespace occattn
