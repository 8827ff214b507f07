#include "occattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "occattn/error.hpp"
#include "occattn/runtime.hpp"

namespace occattn {

namespace {

Eigen::Vector3d jitter_direction(int attempt) {
  // Irrational-looking components keep the ray off lattice-aligned edges and faces.
  const Eigen::Vector3d base(0.3127, 0.7541, 0.5782);
  const Eigen::Vector3d wobble(0.0731, -0.0417, 0.0593);
  return (base + double(attempt) * wobble + double(attempt * attempt) * wobble.cross(base) * 0.3).normalized();
}

}  // namespace

InsideTester::InsideTester(const Mesh& mesh) : mesh_(mesh) {
  validate_indices(mesh_);
  if (!mesh_.empty() && !is_watertight(mesh_)) throw TopologyError("inside test needs a watertight mesh");
  dir_ = jitter_direction(0);
  u_ = dir_.unitOrthogonal();
  v_ = dir_.cross(u_);
  if (mesh_.empty()) return;
  const Eigen::Index faces = mesh_.faces.rows();
  std::vector<Eigen::AlignedBox2d> boxes(faces);
  Eigen::AlignedBox2d all;
  for (Eigen::Index f = 0; f < faces; ++f) {
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d p = mesh_.corner(f, k);
      boxes[f].extend(Eigen::Vector2d(p.dot(u_), p.dot(v_)));
    }
    all.extend(boxes[f]);
  }
  lo_ = all.min();
  hi_ = all.max();
  grid_ = std::clamp<std::size_t>(static_cast<std::size_t>(std::sqrt(double(faces) / 2.0)), 1, 512);
  bins_.assign(grid_ * grid_, {});
  const Eigen::Vector2d span = (hi_ - lo_).cwiseMax(1e-300);
  auto cell = [&](double x, double lo, double s) {
    return std::min<std::size_t>(grid_ - 1, static_cast<std::size_t>(std::max(0.0, (x - lo) / s * double(grid_))));
  };
  for (Eigen::Index f = 0; f < faces; ++f) {
    const std::size_t x0 = cell(boxes[f].min().x(), lo_.x(), span.x()), x1 = cell(boxes[f].max().x(), lo_.x(), span.x());
    const std::size_t y0 = cell(boxes[f].min().y(), lo_.y(), span.y()), y1 = cell(boxes[f].max().y(), lo_.y(), span.y());
    for (std::size_t x = x0; x <= x1; ++x)
      for (std::size_t y = y0; y <= y1; ++y) bins_[x * grid_ + y].push_back(static_cast<int>(f));
  }
}

int InsideTester::parity_along(const Eigen::Vector3d& p, const Eigen::Vector3d& dir, const std::vector<int>& candidates,
                               bool* degenerate) const {
  constexpr double eps = 1e-10;
  int crossings = 0;
  *degenerate = false;
  for (int f : candidates) {
    const Eigen::Vector3d a = mesh_.corner(f, 0), e1 = mesh_.corner(f, 1) - a, e2 = mesh_.corner(f, 2) - a;
    const Eigen::Vector3d pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) <= 1e-14 * e1.norm() * e2.norm()) continue;  // ray parallel to the face plane
    const double inv = 1.0 / det;
    const Eigen::Vector3d s = p - a;
    const double u = s.dot(pvec) * inv;
    if (u < -eps || u > 1.0 + eps) continue;
    const Eigen::Vector3d qvec = s.cross(e1);
    const double v = dir.dot(qvec) * inv;
    if (v < -eps || u + v > 1.0 + eps) continue;
    const double t = e2.dot(qvec) * inv;
    if (t < -eps) continue;
    if (u < eps || v < eps || u + v > 1.0 - eps || t < eps) {
      *degenerate = true;
      return 0;
    }
    ++crossings;
  }
  return crossings & 1;
}

bool InsideTester::contains(const Eigen::Vector3d& p) const {
  if (mesh_.empty()) return false;
  const Eigen::Vector2d q(p.dot(u_), p.dot(v_));
  if ((q.array() < lo_.array()).any() || (q.array() > hi_.array()).any()) return false;
  const Eigen::Vector2d span = (hi_ - lo_).cwiseMax(1e-300);
  const std::size_t x = std::min<std::size_t>(grid_ - 1, static_cast<std::size_t>((q.x() - lo_.x()) / span.x() * double(grid_)));
  const std::size_t y = std::min<std::size_t>(grid_ - 1, static_cast<std::size_t>((q.y() - lo_.y()) / span.y() * double(grid_)));
  bool degenerate = false;
  const int parity = parity_along(p, dir_, bins_[x * grid_ + y], &degenerate);
  if (!degenerate) return parity == 1;
  std::vector<int> all(mesh_.faces.rows());
  std::iota(all.begin(), all.end(), 0);
  for (int attempt = 1; attempt <= 16; ++attempt) {
    const int retry = parity_along(p, jitter_direction(attempt), all, &degenerate);
    if (!degenerate) return retry == 1;
  }
  return true;  // only points lying on the surface stay degenerate in every direction
}

bool point_in_mesh(const Eigen::Vector3d& p, const Mesh& mesh) { return InsideTester(mesh).contains(p); }

double volumetric_iou(const Mesh& pred, const Mesh& gt, std::size_t samples, std::uint64_t seed) {
  if (pred.empty() && gt.empty()) throw UndefinedMetricError("IoU of two empty meshes is undefined");
  if (samples == 0) throw UndefinedMetricError("IoU needs at least one sample");
  const InsideTester in_pred(pred), in_gt(gt);
  Eigen::AlignedBox3d box = pred.bounds();
  box.extend(gt.bounds());
  const Eigen::Vector3d pad = 0.05 * box.sizes();
  const Eigen::Vector3d lo = box.min() - pad, hi = box.max() + pad;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Points points(static_cast<Eigen::Index>(samples), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (int a = 0; a < 3; ++a) points(i, a) = lo[a] + (hi[a] - lo[a]) * unit(rng);
  std::vector<std::uint8_t> flags(samples);
  parallel_for(samples, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Eigen::Vector3d p = points.row(static_cast<Eigen::Index>(i)).transpose();
      flags[i] = std::uint8_t(in_pred.contains(p)) | std::uint8_t(in_gt.contains(p) << 1);
    }
  });
  std::size_t inter = 0, uni = 0;
  for (std::uint8_t f : flags) {
    inter += f == 3;
    uni += f != 0;
  }
  if (uni == 0) throw UndefinedMetricError("no IoU sample fell inside either mesh");
  return double(inter) / double(uni);
}

SurfaceSamples sample_surface(const Mesh& mesh, std::size_t count, std::uint64_t seed) {
  validate_indices(mesh);
  const Eigen::VectorXd areas = mesh.face_areas();
  std::vector<double> cumulative(static_cast<std::size_t>(areas.size()));
  double total = 0.0;
  for (Eigen::Index f = 0; f < areas.size(); ++f) cumulative[f] = total += areas[f];
  if (!(total > 0.0)) throw DegenerateMeshError("mesh has no positive-area face to sample");
  const Vertices normals = mesh.face_normals();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SurfaceSamples out;
  out.seed = seed;
  out.points.resize(static_cast<Eigen::Index>(count), 3);
  out.normals.resize(static_cast<Eigen::Index>(count), 3);
  out.faces.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = unit(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    int f = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), areas.size() - 1));
    while (areas[f] <= 0.0) --f;  // a pick landing exactly on a boundary skips zero-area faces
    const double r1 = std::sqrt(unit(rng)), r2 = unit(rng);
    const Eigen::Index row = static_cast<Eigen::Index>(i);
    out.points.row(row) =
        ((1.0 - r1) * mesh.corner(f, 0) + r1 * (1.0 - r2) * mesh.corner(f, 1) + r1 * r2 * mesh.corner(f, 2)).transpose();
    out.normals.row(row) = normals.row(f);
    out.faces[i] = f;
  }
  return out;
}

KdTree::KdTree(const Points& points) : points_(points) {
  order_.resize(static_cast<std::size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), 0u);
  if (!order_.empty()) build(0, static_cast<std::uint32_t>(order_.size()));
}

int KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= 8) return id;
  Eigen::AlignedBox3d box;
  for (std::uint32_t i = begin; i < end; ++i) box.extend(Eigen::Vector3d(points_.row(order_[i])));
  Eigen::Index axis = 0;
  box.sizes().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_(a, axis) < points_(b, axis); });
  const double split = points_(order_[mid], axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = static_cast<int>(axis);
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

KdTree::Hit KdTree::nearest(const Eigen::Vector3d& q, Distance metric) const {
  if (nodes_.empty()) throw UndefinedMetricError("nearest neighbour in an empty point set");
  // Euclidean search compares squared distances; both metrics bound a subtree by the split-plane gap.
  auto measure = [&](std::uint32_t i) {
    const Eigen::Vector3d d = points_.row(i).transpose() - q;
    return metric == Distance::euclidean ? d.squaredNorm() : d.cwiseAbs().sum();
  };
  auto gap = [&](double g) { return metric == Distance::euclidean ? g * g : std::abs(g); };
  Hit best{0, std::numeric_limits<double>::infinity()};
  std::vector<std::pair<int, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    if (bound > best.distance) continue;
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const double d = measure(order_[i]);
        if (d < best.distance || (d == best.distance && order_[i] < best.index)) best = {order_[i], d};
      }
      continue;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0 ? node.left : node.right, far = diff < 0 ? node.right : node.left;
    stack.push_back({far, std::max(bound, gap(diff))});
    stack.push_back({near, bound});
  }
  if (metric == Distance::euclidean) best.distance = std::sqrt(best.distance);
  return best;
}

TriangleBvh::TriangleBvh(const Mesh& mesh) : mesh_(mesh) {
  validate_indices(mesh_);
  faces_.resize(static_cast<std::size_t>(mesh_.faces.rows()));
  std::iota(faces_.begin(), faces_.end(), 0);
  centroids_.resize(faces_.size());
  for (std::size_t f = 0; f < faces_.size(); ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    centroids_[f] = (mesh_.corner(fi, 0) + mesh_.corner(fi, 1) + mesh_.corner(fi, 2)) / 3.0;
  }
  if (!faces_.empty()) build(0, static_cast<std::uint32_t>(faces_.size()));
}

int TriangleBvh::build(std::uint32_t begin, std::uint32_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Eigen::AlignedBox3d box, centers;
  for (std::uint32_t i = begin; i < end; ++i) {
    for (int k = 0; k < 3; ++k) box.extend(mesh_.corner(faces_[i], k));
    centers.extend(centroids_[faces_[i]]);
  }
  nodes_[id].box = box;
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= 4) return id;
  Eigen::Index axis = 0;
  centers.sizes().maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(faces_.begin() + begin, faces_.begin() + mid, faces_.begin() + end,
                   [&](int a, int b) { return centroids_[a][axis] < centroids_[b][axis]; });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

TriangleBvh::Hit TriangleBvh::closest(const Eigen::Vector3d& q) const {
  if (nodes_.empty()) throw DegenerateMeshError("closest triangle on an empty mesh");
  Hit best;
  double best2 = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.box.squaredExteriorDistance(q) > best2) continue;
    if (node.left < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const int f = faces_[i];
        const Eigen::Vector3d p = closest_point_on_triangle(q, mesh_.corner(f, 0), mesh_.corner(f, 1), mesh_.corner(f, 2));
        const double d2 = (p - q).squaredNorm();
        if (d2 < best2 || (d2 == best2 && f < best.face)) {
          best2 = d2;
          best.face = f;
          best.point = p;
        }
      }
      continue;
    }
    const double dl = nodes_[node.left].box.squaredExteriorDistance(q);
    const double dr = nodes_[node.right].box.squaredExteriorDistance(q);
    if (dl < dr) {
      stack.push_back(node.right);
      stack.push_back(node.left);
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  best.distance = std::sqrt(best2);
  return best;
}

namespace {

double mean_nearest(const Points& from, const KdTree& to, Distance metric) {
  std::vector<double> d(static_cast<std::size_t>(from.rows()));
  parallel_for(d.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      d[i] = to.nearest(from.row(static_cast<Eigen::Index>(i)).transpose(), metric).distance;
  });
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / double(d.size());
}

}  // namespace

double chamfer_l1(const Points& a, const Points& b, Distance metric) {
  if (a.rows() == 0 || b.rows() == 0) throw UndefinedMetricError("Chamfer distance needs two non-empty point sets");
  const KdTree ta(a), tb(b);
  return 0.5 * mean_nearest(a, tb, metric) + 0.5 * mean_nearest(b, ta, metric);
}

double chamfer_l1(const SurfaceSamples& a, const SurfaceSamples& b, Distance metric) {
  return chamfer_l1(a.points, b.points, metric);
}

double chamfer_squared(const Points& x, const Points& y) {
  if (x.rows() == 0 || y.rows() == 0) throw UndefinedMetricError("Chamfer distance needs two non-empty point sets");
  const KdTree tx(x), ty(y);
  auto sum_sq = [](const Points& from, const KdTree& to) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      const double d = to.nearest(from.row(i).transpose()).distance;
      s += d * d;
    }
    return s;
  };
  return sum_sq(x, ty) + sum_sq(y, tx);
}

namespace {

double mean_normal_agreement(const SurfaceSamples& samples, const Mesh& other) {
  const TriangleBvh bvh(other);
  const Vertices normals = other.face_normals();
  std::vector<double> agree(samples.size());
  parallel_for(agree.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const int f = bvh.closest(samples.points.row(row).transpose()).face;
      agree[i] = std::abs(samples.normals.row(row).dot(normals.row(f)));
    }
  });
  double sum = 0.0;
  for (double v : agree) sum += v;
  return std::min(1.0, sum / double(agree.size()));
}

}  // namespace

double normal_consistency(const Mesh& pred, const Mesh& gt, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw UndefinedMetricError("normal consistency needs at least one sample");
  const SurfaceSamples sp = sample_surface(pred, samples, seed);
  const SurfaceSamples sg = sample_surface(gt, samples, seed + 1);
  return 0.5 * mean_normal_agreement(sp, gt) + 0.5 * mean_normal_agreement(sg, pred);
}

MetricsRecord evaluate_pair(const Mesh& pred, const Mesh& gt, const MetricsConfig& config) {
  MetricsRecord record;
  auto attempt = [&](const char* name, auto&& fn, std::optional<double>& slot) {
    try {
      slot = fn();
    } catch (const Error& e) {
      record.errors.push_back(std::string(name) + ": " + e.what());
    }
  };
  attempt("iou", [&] { return volumetric_iou(pred, gt, config.samples, config.seed); }, record.iou);
  // One seed for both surfaces so that identical meshes draw identical samples.
  attempt("chamfer_l1", [&] {
    return chamfer_l1(sample_surface(pred, config.samples, config.seed + 2),
                      sample_surface(gt, config.samples, config.seed + 2), config.distance);
  }, record.chamfer_l1);
  attempt("normal_consistency", [&] { return normal_consistency(pred, gt, config.samples, config.seed + 4); },
          record.normal_consistency);
  return record;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  return r.category + "," + r.object_id + "," + cell(r.iou) + "," + cell(r.chamfer_l1) + "," +
         cell(r.normal_consistency);
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::ostringstream out;
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : records) out << metrics_csv_row(r) << '\n';
  return out.str();
}

}  // namespace occattn
