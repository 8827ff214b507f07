#include "occattn/extraction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "occattn/error.hpp"
#include "occattn/mc_tables.hpp"

namespace occattn {

Eigen::VectorXd ScalarField::operator()(const Points& points) const {
  if (!evaluate) throw FieldError("scalar field has no evaluator");
  Eigen::VectorXd values = evaluate(points);
  if (values.size() != points.rows())
    throw FieldError("field returned " + std::to_string(values.size()) + " values for " +
                     std::to_string(points.rows()) + " points");
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw FieldError("field value at (" + std::to_string(points(i, 0)) + ", " + std::to_string(points(i, 1)) + ", " +
                       std::to_string(points(i, 2)) + ") is not finite");
  return values;
}

ScalarField sphere_field(double radius, double width, const Eigen::Vector3d& center) {
  ScalarField field;
  field.evaluate = [=](const Points& p) {
    Eigen::VectorXd v(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double d = (p.row(i).transpose() - center).norm();
      v[i] = 1.0 / (1.0 + std::exp(-(radius - d) / width));
    }
    return v;
  };
  return field;
}

namespace {

double cubic_extent(const Eigen::AlignedBox3d& domain) {
  const Eigen::Vector3d size = domain.sizes();
  if (!(size.minCoeff() > 0.0) || std::abs(size.maxCoeff() - size.minCoeff()) > 1e-12 * size.maxCoeff())
    throw ContractError("field domain must be a non-empty cube");
  return size.x();
}

bool crosses(const std::array<double, 8>& corners, double tau) {
  bool above = false, below = false;
  for (double v : corners) (v > tau ? above : below) = true;
  return above && below;
}

constexpr std::uint64_t kKeyMask = (std::uint64_t(1) << 21) - 1;

// Same evaluated points re-keyed one level finer, with no active voxels.
OctreeGrid descend(const OctreeGrid& grid) {
  if ((grid.resolution() << 1) > kKeyMask) throw ContractError("octree depth exceeds key range");
  OctreeGrid next;
  next.base_resolution = grid.base_resolution;
  next.level = grid.level + 1;
  next.origin = grid.origin;
  next.extent = grid.extent;
  next.evaluations = grid.evaluations;
  next.values.reserve(grid.values.size() * 2);
  for (const auto& [key, value] : grid.values)
    next.values.emplace(
        OctreeGrid::key(((key >> 42) & kKeyMask) * 2, ((key >> 21) & kKeyMask) * 2, (key & kKeyMask) * 2), value);
  return next;
}

}  // namespace

Lattice evaluate_grid(const ScalarField& field, std::size_t resolution) {
  if (resolution < 2) throw ContractError("grid resolution must be at least 2");
  Lattice lattice;
  lattice.resolution = resolution;
  lattice.origin = field.domain.min();
  lattice.cell = cubic_extent(field.domain) / double(resolution);
  const std::size_t s = lattice.side();
  Points points(static_cast<Eigen::Index>(s * s * s), 3);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < s; ++k)
        points.row(static_cast<Eigen::Index>(lattice.index(i, j, k))) = lattice.position(i, j, k).transpose();
  const Eigen::VectorXd values = field(points);
  lattice.values.assign(values.data(), values.data() + values.size());
  return lattice;
}

std::vector<Voxel> find_active_voxels(const Lattice& lattice, double tau) {
  std::vector<Voxel> active;
  const std::size_t r = lattice.resolution;
  for (std::uint32_t i = 0; i < r; ++i)
    for (std::uint32_t j = 0; j < r; ++j)
      for (std::uint32_t k = 0; k < r; ++k) {
        std::array<double, 8> c{};
        for (int n = 0; n < 8; ++n) c[n] = lattice.at(i + (n & 1), j + ((n >> 1) & 1), k + ((n >> 2) & 1));
        if (crosses(c, tau)) active.push_back({i, j, k});
      }
  return active;
}

OctreeGrid initial_grid(const ScalarField& field, std::size_t base_resolution, double tau) {
  const Lattice lattice = evaluate_grid(field, base_resolution);
  OctreeGrid grid;
  grid.base_resolution = base_resolution;
  grid.origin = lattice.origin;
  grid.extent = lattice.cell * double(base_resolution);
  const std::size_t s = lattice.side();
  grid.values.reserve(lattice.values.size());
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < s; ++k) grid.values.emplace(OctreeGrid::key(i, j, k), lattice.at(i, j, k));
  grid.evaluations = lattice.values.size();
  grid.active = find_active_voxels(lattice, tau);
  return grid;
}

OctreeGrid refine(const ScalarField& field, const OctreeGrid& grid, double tau) {
  if (grid.active.empty()) return grid;
  OctreeGrid next = descend(grid);

  std::vector<std::array<std::uint32_t, 3>> fresh;
  for (const Voxel& v : grid.active)
    for (std::uint32_t a = 0; a < 3; ++a)
      for (std::uint32_t b = 0; b < 3; ++b)
        for (std::uint32_t c = 0; c < 3; ++c) {
          const std::array<std::uint32_t, 3> p{2 * v.i + a, 2 * v.j + b, 2 * v.k + c};
          if (!next.values.count(OctreeGrid::key(p[0], p[1], p[2]))) fresh.push_back(p);
        }
  std::sort(fresh.begin(), fresh.end());
  fresh.erase(std::unique(fresh.begin(), fresh.end()), fresh.end());

  const double cell = next.cell();
  Points points(static_cast<Eigen::Index>(fresh.size()), 3);
  for (std::size_t n = 0; n < fresh.size(); ++n)
    points.row(static_cast<Eigen::Index>(n)) =
        (next.origin + cell * Eigen::Vector3d(fresh[n][0], fresh[n][1], fresh[n][2])).transpose();
  if (!fresh.empty()) {
    const Eigen::VectorXd values = field(points);
    for (std::size_t n = 0; n < fresh.size(); ++n)
      next.values.emplace(OctreeGrid::key(fresh[n][0], fresh[n][1], fresh[n][2]), values[static_cast<Eigen::Index>(n)]);
  }
  next.evaluations += fresh.size();

  for (const Voxel& v : grid.active)
    for (std::uint32_t n = 0; n < 8; ++n) {
      const Voxel child{2 * v.i + (n & 1), 2 * v.j + ((n >> 1) & 1), 2 * v.k + ((n >> 2) & 1)};
      std::array<double, 8> c{};
      for (std::uint32_t m = 0; m < 8; ++m)
        c[m] = next.values.at(OctreeGrid::key(child.i + (m & 1), child.j + ((m >> 1) & 1), child.k + ((m >> 2) & 1)));
      if (crosses(c, tau)) next.active.push_back(child);
    }
  std::sort(next.active.begin(), next.active.end());
  return next;
}

Lattice fine_lattice(const OctreeGrid& grid) {
  Lattice lattice;
  lattice.resolution = grid.base_resolution;
  lattice.origin = grid.origin;
  lattice.cell = grid.extent / double(grid.base_resolution);
  auto overwrite = [&](std::size_t shift) {
    const std::uint64_t step = std::uint64_t(1) << shift;
    for (const auto& [key, value] : grid.values) {
      const std::uint64_t i = (key >> 42) & kKeyMask, j = (key >> 21) & kKeyMask, k = key & kKeyMask;
      if (i % step || j % step || k % step) continue;
      lattice.values[lattice.index(i / step, j / step, k / step)] = value;
    }
  };
  lattice.values.assign(lattice.side() * lattice.side() * lattice.side(), 0.0);
  overwrite(grid.level);
  for (std::size_t level = 1; level <= grid.level; ++level) {
    Lattice up;
    up.resolution = lattice.resolution * 2;
    up.origin = lattice.origin;
    up.cell = lattice.cell / 2.0;
    const std::size_t s = up.side();
    up.values.resize(s * s * s);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        for (std::size_t k = 0; k < s; ++k) {
          const std::size_t i0 = i / 2, i1 = (i + 1) / 2, j0 = j / 2, j1 = (j + 1) / 2, k0 = k / 2, k1 = (k + 1) / 2;
          up.values[up.index(i, j, k)] =
              0.125 * (lattice.at(i0, j0, k0) + lattice.at(i1, j0, k0) + lattice.at(i0, j1, k0) + lattice.at(i1, j1, k0) +
                       lattice.at(i0, j0, k1) + lattice.at(i1, j0, k1) + lattice.at(i0, j1, k1) + lattice.at(i1, j1, k1));
        }
    lattice = std::move(up);
    overwrite(grid.level - level);
  }
  return lattice;
}

namespace {

// Corner offsets and edge endpoints in the table's numbering.
constexpr std::array<std::array<int, 3>, 8> kCorner = {
    {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
constexpr std::array<std::array<int, 2>, 12> kEdge = {
    {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

}  // namespace

Mesh marching_cubes(const Lattice& lattice, double tau) {
  const std::size_t r = lattice.resolution;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  std::map<std::array<double, 3>, int> welded;
  std::vector<Eigen::Vector3d> vertices;
  std::vector<int> vertex_id;  // per crossing edge, index into welded vertices
  std::vector<std::array<int, 3>> faces;

  auto vertex_on_edge = [&](std::size_t i, std::size_t j, std::size_t k, int e) {
    std::array<std::size_t, 3> a{i + kCorner[kEdge[e][0]][0], j + kCorner[kEdge[e][0]][1], k + kCorner[kEdge[e][0]][2]};
    std::array<std::size_t, 3> b{i + kCorner[kEdge[e][1]][0], j + kCorner[kEdge[e][1]][1], k + kCorner[kEdge[e][1]][2]};
    if (b < a) std::swap(a, b);
    int axis = 0;
    while (a[axis] == b[axis]) ++axis;
    const std::uint64_t id = 3 * std::uint64_t(lattice.index(a[0], a[1], a[2])) + std::uint64_t(axis);
    auto it = edge_vertex.find(id);
    if (it != edge_vertex.end()) return it->second;
    const double va = lattice.at(a[0], a[1], a[2]), vb = lattice.at(b[0], b[1], b[2]);
    const double t = (tau - va) / (vb - va);
    const Eigen::Vector3d pa = lattice.position(a[0], a[1], a[2]), pb = lattice.position(b[0], b[1], b[2]);
    const Eigen::Vector3d p = pa + t * (pb - pa);
    const auto [slot, inserted] = welded.emplace(std::array<double, 3>{p.x(), p.y(), p.z()}, int(vertices.size()));
    if (inserted) vertices.push_back(p);
    edge_vertex.emplace(id, slot->second);
    return slot->second;
  };

  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < r; ++k) {
        int cube = 0;
        for (int n = 0; n < 8; ++n)
          if (!(lattice.at(i + kCorner[n][0], j + kCorner[n][1], k + kCorner[n][2]) > tau)) cube |= 1 << n;
        const auto& row = detail::kTriangleTable[cube];
        for (int t = 0; row[t] >= 0; t += 3) {
          const std::array<int, 3> tri{vertex_on_edge(i, j, k, row[t]), vertex_on_edge(i, j, k, row[t + 1]),
                                       vertex_on_edge(i, j, k, row[t + 2])};
          if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
          faces.push_back(tri);
        }
      }

  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(vertices.size()), 3);
  for (std::size_t v = 0; v < vertices.size(); ++v) mesh.vertices.row(static_cast<Eigen::Index>(v)) = vertices[v];
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) mesh.faces(static_cast<Eigen::Index>(f), c) = faces[f][c];
  return remove_degenerate_faces(mesh, 1e-12);
}

Mesh extract(const ScalarField& field, double tau, std::size_t base_resolution, std::size_t levels,
             ExtractionStats* stats) {
  OctreeGrid grid = initial_grid(field, base_resolution, tau);
  if (stats) stats->active_per_level.push_back(grid.active.size());
  for (std::size_t l = 0; l < levels; ++l) {
    grid = grid.active.empty() ? descend(grid) : refine(field, grid, tau);
    if (stats) stats->active_per_level.push_back(grid.active.size());
  }
  if (stats) {
    stats->evaluations = grid.evaluations;
    stats->final_resolution = grid.resolution();
  }
  return marching_cubes(fine_lattice(grid), tau);
}

}  // namespace occattn
