#include "occattn/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "occattn/error.hpp"

namespace occattn {

Vertices Mesh::face_normals() const {
  Vertices normals(faces.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d n = triangle_cross(corner(f, 0), corner(f, 1), corner(f, 2));
    const double len = n.norm();
    normals.row(f) = len > 0.0 ? Eigen::RowVector3d(n.transpose() / len) : Eigen::RowVector3d::Zero();
  }
  return normals;
}

Eigen::VectorXd Mesh::face_areas() const {
  Eigen::VectorXd areas(faces.rows());
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    areas[f] = 0.5 * triangle_cross(corner(f, 0), corner(f, 1), corner(f, 2)).norm();
  return areas;
}

double Mesh::surface_area() const { return face_areas().sum(); }

double Mesh::signed_volume() const {
  double v = 0.0;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) v += corner(f, 0).dot(corner(f, 1).cross(corner(f, 2)));
  return v / 6.0;
}

Eigen::AlignedBox3d Mesh::bounds() const {
  Eigen::AlignedBox3d box;
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) box.extend(corner(f, k));
  return box;
}

Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                                          const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Eigen::Vector3d bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Eigen::Vector3d cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

using EdgeKey = std::pair<int, int>;

std::map<EdgeKey, int> edge_counts(const Mesh& mesh) {
  std::map<EdgeKey, int> counts;
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) {
      const int a = mesh.faces(f, k), b = mesh.faces(f, (k + 1) % 3);
      ++counts[{std::min(a, b), std::max(a, b)}];
    }
  return counts;
}

}  // namespace

void validate_indices(const Mesh& mesh) {
  const int n = static_cast<int>(mesh.vertices.rows());
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k)
      if (mesh.faces(f, k) < 0 || mesh.faces(f, k) >= n)
        throw ContractError("face " + std::to_string(f) + " references vertex " + std::to_string(mesh.faces(f, k)) +
                            " of " + std::to_string(n));
}

bool is_watertight(const Mesh& mesh) {
  if (mesh.empty()) return false;
  for (const auto& [edge, count] : edge_counts(mesh))
    if (count != 2) return false;
  return true;
}

long euler_characteristic(const Mesh& mesh) {
  std::vector<char> used(mesh.vertices.rows(), 0);
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    for (int k = 0; k < 3; ++k) used[mesh.faces(f, k)] = 1;
  long v = 0;
  for (char u : used) v += u;
  return v - static_cast<long>(edge_counts(mesh).size()) + static_cast<long>(mesh.faces.rows());
}

namespace {

Mesh compact(const Vertices& vertices, const std::vector<std::array<int, 3>>& faces) {
  std::vector<int> remap(vertices.rows(), -1);
  std::vector<Eigen::Index> order;
  Mesh out;
  out.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) {
      int& slot = remap[faces[f][k]];
      if (slot < 0) {
        slot = static_cast<int>(order.size());
        order.push_back(faces[f][k]);
      }
      out.faces(static_cast<Eigen::Index>(f), k) = slot;
    }
  out.vertices.resize(static_cast<Eigen::Index>(order.size()), 3);
  for (std::size_t i = 0; i < order.size(); ++i) out.vertices.row(static_cast<Eigen::Index>(i)) = vertices.row(order[i]);
  return out;
}

}  // namespace

Mesh remove_degenerate_faces(const Mesh& mesh, double min_area) {
  // Collapsing the shortest edge of a sliver keeps a closed surface closed, where
  // deleting the sliver would open a hole.
  std::vector<int> parent(mesh.vertices.rows());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<std::array<int, 3>> faces(mesh.faces.rows());
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) faces[f] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
  for (;;) {
    bool collapsed = false;
    std::vector<std::array<int, 3>> kept;
    std::map<std::array<int, 3>, std::size_t> seen;
    for (auto tri : faces) {
      for (int& v : tri) v = find(v);
      if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
      const Eigen::Vector3d a = mesh.vertices.row(tri[0]), b = mesh.vertices.row(tri[1]), c = mesh.vertices.row(tri[2]);
      if (!(0.5 * triangle_cross(a, b, c).norm() > min_area)) {
        const std::array<double, 3> len{(b - a).norm(), (c - b).norm(), (a - c).norm()};
        const int e = static_cast<int>(std::min_element(len.begin(), len.end()) - len.begin());
        const int u = tri[e], w = tri[(e + 1) % 3];
        parent[std::max(u, w)] = std::min(u, w);
        collapsed = true;
        continue;
      }
      // A face and its reverse over the same vertices form a zero-volume fin; drop both.
      std::array<int, 3> sorted = tri;
      std::sort(sorted.begin(), sorted.end());
      auto it = seen.find(sorted);
      if (it != seen.end() && kept[it->second][0] >= 0) {
        kept[it->second] = {-1, -1, -1};
        seen.erase(it);
        continue;
      }
      seen.emplace(sorted, kept.size());
      kept.push_back(tri);
    }
    kept.erase(std::remove_if(kept.begin(), kept.end(), [](const auto& t) { return t[0] < 0; }), kept.end());
    faces.swap(kept);
    if (!collapsed) break;
  }
  return compact(mesh.vertices, faces);
}

std::string to_off_string(const Mesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "OFF\n" << mesh.vertices.rows() << ' ' << mesh.faces.rows() << " 0\n";
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
  return out.str();
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_off(const Mesh& mesh, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << to_off_string(mesh);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_obj(const Mesh& mesh, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << std::setprecision(9);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f)
    out << "f " << mesh.faces(f, 0) + 1 << ' ' << mesh.faces(f, 1) + 1 << ' ' << mesh.faces(f, 2) + 1 << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Mesh parse_off(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  in >> magic;
  if (magic != "OFF") throw FormatError("missing OFF header");
  long nv = -1, nf = -1, ne = 0;
  in >> nv >> nf >> ne;
  if (!in || nv < 0 || nf < 0) throw FormatError("bad OFF counts");
  Mesh mesh;
  mesh.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) in >> mesh.vertices(i, 0) >> mesh.vertices(i, 1) >> mesh.vertices(i, 2);
  mesh.faces.resize(nf, 3);
  for (long f = 0; f < nf; ++f) {
    int arity = 0;
    in >> arity;
    if (arity != 3) throw FormatError("OFF face " + std::to_string(f) + " is not a triangle");
    in >> mesh.faces(f, 0) >> mesh.faces(f, 1) >> mesh.faces(f, 2);
  }
  if (!in) throw FormatError("truncated OFF body");
  validate_indices(mesh);
  return mesh;
}

Mesh read_off(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_off(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Mesh box_mesh(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  Mesh mesh;
  mesh.vertices.resize(8, 3);
  for (int i = 0; i < 8; ++i)
    mesh.vertices.row(i) << (i & 1 ? hi.x() : lo.x()), (i & 2 ? hi.y() : lo.y()), (i & 4 ? hi.z() : lo.z());
  mesh.faces.resize(12, 3);
  mesh.faces << 0, 2, 1, 1, 2, 3,  // z = lo
      4, 5, 6, 5, 7, 6,            // z = hi
      0, 1, 4, 1, 5, 4,            // y = lo
      2, 6, 3, 3, 6, 7,            // y = hi
      0, 4, 2, 2, 4, 6,            // x = lo
      1, 3, 5, 3, 7, 5;            // x = hi
  return mesh;
}

Mesh icosphere(const Eigen::Vector3d& center, double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<EdgeKey, int> midpoint;
    auto mid = [&](int a, int b) {
      const EdgeKey key{std::min(a, b), std::max(a, b)};
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces.swap(next);
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = (center + radius * verts[i]).transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) mesh.faces(static_cast<Eigen::Index>(f), k) = faces[f][k];
  return mesh;
}

}  // namespace occattn
