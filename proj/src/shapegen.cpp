#include "occattn/shapegen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include <json.hpp>

#include "occattn/error.hpp"
#include "occattn/runtime.hpp"

namespace occattn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

bool Primitive::contains(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = rotation.transpose() * (p - center);
  switch (kind) {
    case PrimitiveKind::sphere: return q.squaredNorm() < size.x() * size.x();
    case PrimitiveKind::box: return (q.cwiseAbs().array() < size.array()).all();
    case PrimitiveKind::cylinder: return q.head<2>().squaredNorm() < size.x() * size.x() && std::abs(q.z()) < size.y();
    case PrimitiveKind::torus: {
      const double radial = q.head<2>().norm() - size.x();
      return radial * radial + q.z() * q.z() < size.y() * size.y();
    }
  }
  return false;
}

double Primitive::sdf(const Eigen::Vector3d& p) const {
  const Eigen::Vector3d q = rotation.transpose() * (p - center);
  switch (kind) {
    case PrimitiveKind::sphere: return q.norm() - size.x();
    case PrimitiveKind::box: {
      const Eigen::Vector3d d = q.cwiseAbs() - size;
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case PrimitiveKind::cylinder: {
      const Eigen::Vector2d d(q.head<2>().norm() - size.x(), std::abs(q.z()) - size.y());
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
    case PrimitiveKind::torus: return Eigen::Vector2d(q.head<2>().norm() - size.x(), q.z()).norm() - size.y();
  }
  return std::numeric_limits<double>::infinity();
}

Eigen::AlignedBox3d Primitive::bounds() const {
  // Tight half extents along each world axis; the local z axis is rotation.row(e).z() in world axis e.
  Eigen::Vector3d half;
  for (int e = 0; e < 3; ++e) {
    const double along = std::abs(rotation(e, 2)), across = std::sqrt(std::max(0.0, 1.0 - along * along));
    switch (kind) {
      case PrimitiveKind::sphere: half[e] = size.x(); break;
      case PrimitiveKind::box: half[e] = rotation.row(e).cwiseAbs().dot(size); break;
      case PrimitiveKind::cylinder: half[e] = size.x() * across + size.y() * along; break;
      case PrimitiveKind::torus: half[e] = size.x() * across + size.y(); break;
    }
  }
  return {center - half, center + half};
}

bool Primitive::operator==(const Primitive& other) const {
  return kind == other.kind && center == other.center && rotation == other.rotation && size == other.size;
}

bool ShapeSpec::inside(const Eigen::Vector3d& p) const {
  return std::any_of(primitives.begin(), primitives.end(), [&](const Primitive& s) { return s.contains(p); });
}

double ShapeSpec::sdf(const Eigen::Vector3d& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& s : primitives) d = std::min(d, s.sdf(p));
  return d;
}

Eigen::AlignedBox3d ShapeSpec::bounds() const {
  Eigen::AlignedBox3d box;
  for (const auto& s : primitives) box.extend(s.bounds());
  return box;
}

ShapeSpec ShapeSpec::rotated(const Eigen::Matrix3d& r) const {
  ShapeSpec out = *this;
  for (auto& s : out.primitives) {
    s.center = r * s.center;
    s.rotation = r * s.rotation;
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

 private:
  std::mt19937_64 rng_;
};

Eigen::Matrix3d yaw(double angle) { return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

Primitive make(PrimitiveKind kind, const Eigen::Vector3d& center, const Eigen::Vector3d& size,
               const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity()) {
  Primitive p;
  p.kind = kind;
  p.center = center;
  p.size = size;
  p.rotation = rotation;
  return p;
}

void block(Draw& draw, ShapeSpec& spec) {
  const Eigen::Vector3d half(draw(0.12, 0.3), draw(0.12, 0.3), draw(0.12, 0.38));
  spec.primitives.push_back(make(PrimitiveKind::box, Eigen::Vector3d::Zero(), half, yaw(draw(0.0, std::numbers::pi / 2))));
}

void barbell(Draw& draw, ShapeSpec& spec) {
  const double r = draw(0.1, 0.16);
  const double d = draw(0.2, 0.48 - r);
  const double bar = draw(0.035, 0.06);
  const double heading = draw(0.0, std::numbers::pi), tilt = draw(-0.3, 0.3);
  const Eigen::Vector3d axis(std::cos(tilt) * std::cos(heading), std::cos(tilt) * std::sin(heading), std::sin(tilt));
  const Eigen::Matrix3d frame = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), axis).toRotationMatrix();
  spec.primitives.push_back(make(PrimitiveKind::sphere, d * axis, {r, 0, 0}));
  spec.primitives.push_back(make(PrimitiveKind::sphere, -d * axis, {r, 0, 0}));
  spec.primitives.push_back(make(PrimitiveKind::cylinder, Eigen::Vector3d::Zero(), {bar, d, 0}, frame));
}

void table4(Draw& draw, ShapeSpec& spec) {
  const double hx = draw(0.25, 0.35), hy = draw(0.25, 0.35), thickness = draw(0.025, 0.05);
  const double top = draw(0.1, 0.3), bottom = draw(-0.45, -0.3), leg = draw(0.025, 0.05);
  const Eigen::Matrix3d r = yaw(draw(0.0, std::numbers::pi / 2));
  spec.primitives.push_back(make(PrimitiveKind::box, r * Eigen::Vector3d(0, 0, top), {hx, hy, thickness}, r));
  const double leg_half = (top - bottom) / 2, leg_z = (top + bottom) / 2;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      spec.primitives.push_back(make(PrimitiveKind::box, r * Eigen::Vector3d(sx * (hx - leg), sy * (hy - leg), leg_z),
                                     {leg, leg, leg_half}, r));
}

void ring(Draw& draw, ShapeSpec& spec) {
  const double minor = draw(0.05, 0.1);
  const double major = draw(0.22, 0.42 - minor);
  const double tilt = draw(std::numbers::pi / 6, std::numbers::pi / 2), heading = draw(0.0, 2 * std::numbers::pi);
  const Eigen::Vector3d axis(std::sin(tilt) * std::cos(heading), std::sin(tilt) * std::sin(heading), std::cos(tilt));
  const Eigen::Matrix3d frame = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), axis).toRotationMatrix();
  spec.primitives.push_back(make(PrimitiveKind::torus, Eigen::Vector3d::Zero(), {major, minor, 0}, frame));
}

void arch(Draw& draw, ShapeSpec& spec) {
  const double width = draw(0.05, 0.1), depth = draw(0.08, 0.2);
  const double spread = draw(0.15, 0.42 - width);
  const double lintel = draw(0.04, 0.08);
  const double bottom = -0.4, top = draw(0.1, 0.5 - 2 * lintel);
  const Eigen::Matrix3d r = yaw(draw(0.0, std::numbers::pi));
  for (int s : {-1, 1})
    spec.primitives.push_back(make(PrimitiveKind::box, r * Eigen::Vector3d(s * spread, 0, (top + bottom) / 2),
                                   {width, depth, (top - bottom) / 2}, r));
  spec.primitives.push_back(
      make(PrimitiveKind::box, r * Eigen::Vector3d(0, 0, top + lintel), {spread + width, depth, lintel}, r));
}

}  // namespace

std::size_t category_index(const std::string& category) {
  for (std::size_t i = 0; i < kShapeCategories.size(); ++i)
    if (kShapeCategories[i] == category) return i;
  throw ConfigurationError("unknown shape category '" + category + "'");
}

ShapeSpec generate_shape(const std::string& category, std::uint64_t seed) {
  const std::size_t index = category_index(category);
  ShapeSpec spec;
  spec.category = category;
  spec.seed = seed;
  Draw draw(splitmix64(seed ^ (index * 0x632be59bd9b4e019ULL)));
  switch (index) {
    case 0: block(draw, spec); break;
    case 1: barbell(draw, spec); break;
    case 2: table4(draw, spec); break;
    case 3: ring(draw, spec); break;
    default: arch(draw, spec); break;
  }
  return spec;
}

Shading parse_shading(const std::string& text) {
  if (text == "silhouette") return Shading::silhouette;
  if (text == "lambert") return Shading::lambert;
  throw ConfigurationError("unknown shading '" + text + "' (expected silhouette|lambert)");
}

std::string to_string(Shading s) { return s == Shading::silhouette ? "silhouette" : "lambert"; }

Eigen::Vector3d view_direction(const RenderSpec& view) {
  const double az = view.azimuth_deg * std::numbers::pi / 180.0, el = view.elevation_deg * std::numbers::pi / 180.0;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

Tensor render(const ShapeSpec& spec, const RenderSpec& view) {
  if (view.resolution == 0 || view.channels == 0 || !(view.extent > 0.0))
    throw ConfigurationError("render needs positive resolution, channels, and extent");
  if (std::abs(view.elevation_deg) >= 89.0) throw ConfigurationError("camera elevation must stay within (-89, 89) degrees");
  const Eigen::Vector3d c = view_direction(view);
  const Eigen::Vector3d right = Eigen::Vector3d::UnitZ().cross(c).normalized();
  const Eigen::Vector3d up = c.cross(right);
  const std::array<Eigen::Vector3d, 3> lights = {(c + 0.7 * right + 0.5 * up).normalized(), (c + 0.7 * up).normalized(),
                                                 (c - 0.7 * right + 0.5 * up).normalized()};
  const std::size_t n = view.resolution;
  const double bound = 0.9;  // every shape fits inside this sphere
  Tensor image({view.channels, n, n}, view.background);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col) {
      const double x = ((double(col) + 0.5) / double(n) - 0.5) * view.extent;
      const double y = (0.5 - (double(row) + 0.5) / double(n)) * view.extent;
      const double offset2 = x * x + y * y;
      if (offset2 >= bound * bound || spec.primitives.empty()) continue;
      const Eigen::Vector3d origin = 2.0 * c + x * right + y * up;
      const double chord = std::sqrt(bound * bound - offset2);
      double t = 2.0 - chord;
      const double t_end = 2.0 + chord;
      bool hit = false;
      for (int step = 0; step < 512 && t <= t_end; ++step) {
        const double d = spec.sdf(origin - t * c);
        if (d < 1e-5) {
          hit = true;
          break;
        }
        t += d;
      }
      if (!hit) continue;
      const Eigen::Vector3d p = origin - t * c;
      for (std::size_t ch = 0; ch < view.channels; ++ch) {
        double value = 1.0;
        if (view.shading == Shading::lambert) {
          const double h = 1e-4;
          Eigen::Vector3d normal;
          for (int a = 0; a < 3; ++a) {
            const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(a);
            normal[a] = spec.sdf(p + e) - spec.sdf(p - e);
          }
          normal.normalize();
          value = 0.15 + 0.85 * std::max(0.0, normal.dot(lights[ch % 3]));
        }
        image[(ch * n + row) * n + col] = value;
      }
    }
  return image;
}

Mesh ground_truth_mesh(const ShapeSpec& spec, std::size_t resolution) {
  ScalarField field;
  const double cell = 2.0 * kPaddedHalfWidth / double(resolution);
  field.evaluate = [&spec, cell](const Points& p) {
    Eigen::VectorXd v(p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) v[i] = 1.0 / (1.0 + std::exp(spec.sdf(p.row(i).transpose()) / cell));
    return v;
  };
  return marching_cubes(evaluate_grid(field, resolution), 0.5);
}

OccupancySamples sample_training_points(const ShapeSpec& spec, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(-kPaddedHalfWidth, kPaddedHalfWidth);
  OccupancySamples out;
  out.points.resize(static_cast<Eigen::Index>(count), 3);
  out.labels.resize(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < out.points.rows(); ++i) {
    for (int a = 0; a < 3; ++a) out.points(i, a) = coord(rng);
    out.labels[i] = spec.inside(out.points.row(i).transpose()) ? 1 : 0;
  }
  return out;
}

namespace {

constexpr char kImageMagic[6] = {'O', 'A', 'I', 'M', 'G', '1'};
constexpr char kSamplesMagic[6] = {'O', 'A', 'O', 'C', 'C', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError(path.string() + ": truncated file");
  return value;
}

std::ofstream create(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open(const std::filesystem::path& path, const char (&magic)[6]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char header[6] = {};
  if (!in.read(header, 6) || std::memcmp(header, magic, 6) != 0)
    throw FormatError(path.string() + ": bad magic (expected " + std::string(magic, 6) + ")");
  return in;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void write_image(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3) throw DimensionError("image must be [C,H,W], got " + shape_string(image.shape()));
  auto out = create(path);
  out.write(kImageMagic, 6);
  for (std::size_t a = 0; a < 3; ++a) put<std::uint32_t>(out, static_cast<std::uint32_t>(image.dim(a)));
  for (double v : image.values()) put<float>(out, static_cast<float>(v));
  finish(out, path);
}

Tensor read_image(const std::filesystem::path& path) {
  auto in = open(path, kImageMagic);
  Shape shape(3);
  for (auto& d : shape) d = get<std::uint32_t>(in, path);
  if (shape_size(shape) == 0) throw FormatError(path.string() + ": zero image extent");
  Tensor image(shape);
  for (double& v : image.values()) v = get<float>(in, path);
  return image;
}

void write_samples(const OccupancySamples& samples, const std::filesystem::path& path) {
  auto out = create(path);
  out.write(kSamplesMagic, 6);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  for (Eigen::Index i = 0; i < samples.points.rows(); ++i) {
    for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(samples.points(i, a)));
    put<std::uint8_t>(out, samples.labels[i]);
  }
  finish(out, path);
}

OccupancySamples read_samples(const std::filesystem::path& path) {
  auto in = open(path, kSamplesMagic);
  const auto n = get<std::uint32_t>(in, path);
  OccupancySamples samples;
  samples.points.resize(n, 3);
  samples.labels.resize(n);
  for (Eigen::Index i = 0; i < Eigen::Index(n); ++i) {
    for (int a = 0; a < 3; ++a) samples.points(i, a) = get<float>(in, path);
    samples.labels[i] = get<std::uint8_t>(in, path);
    if (samples.labels[i] > 1) throw FormatError(path.string() + ": label outside {0,1}");
  }
  return samples;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigurationError("unknown split '" + text + "' (expected train|val|test)");
}

Split split_for_index(std::size_t index) {
  const std::size_t r = index % 10;
  return r < 8 ? Split::train : (r == 8 ? Split::val : Split::test);
}

std::vector<const ObjectEntry*> DatasetManifest::select(Split split, const std::string& category) const {
  std::vector<const ObjectEntry*> out;
  for (const auto& o : objects)
    if (o.split == split && (category.empty() || o.category == category)) out.push_back(&o);
  return out;
}

RenderSpec dataset_view(const DatasetConfig& config, std::size_t v) {
  RenderSpec view;
  view.azimuth_deg = 30.0 + 360.0 * double(v) / double(std::max<std::size_t>(1, config.views));
  view.elevation_deg = v % 2 == 0 ? 20.0 : 35.0;
  view.resolution = config.resolution;
  view.shading = config.shading;
  return view;
}

std::uint64_t object_seed(std::uint64_t dataset_seed, std::size_t category, std::size_t index) {
  return splitmix64(splitmix64(dataset_seed) ^ (std::uint64_t(category) << 40) ^ std::uint64_t(index));
}

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  if (config.categories.empty() || config.per_category == 0 || config.views == 0)
    throw ConfigurationError("dataset needs at least one category, object, and view");
  for (const auto& c : config.categories) category_index(c);
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.config = config;
  for (const auto& category : config.categories)
    for (std::size_t j = 0; j < config.per_category; ++j) {
      ObjectEntry e;
      e.category = category;
      e.id = category + "_" + (j < 10 ? "00" : j < 100 ? "0" : "") + std::to_string(j);
      e.split = split_for_index(j);
      e.seed = object_seed(config.seed, category_index(category), j);
      for (std::size_t v = 0; v < config.views; ++v) {
        const RenderSpec view = dataset_view(config, v);
        e.images.push_back("images/" + e.id + "_v" + std::to_string(v) + ".oaimg");
        e.views.push_back({view.azimuth_deg, view.elevation_deg});
      }
      e.mesh = "meshes/" + e.id + ".off";
      e.samples = "samples/" + e.id + ".oaocc";
      manifest.objects.push_back(std::move(e));
    }
  std::filesystem::create_directories(out_dir);
  parallel_for(manifest.objects.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ObjectEntry& e = manifest.objects[i];
      const ShapeSpec spec = generate_shape(e.category, e.seed);
      for (std::size_t v = 0; v < config.views; ++v)
        write_image(render(spec, dataset_view(config, v)), manifest.resolve(e.images[v]));
      write_samples(sample_training_points(spec, config.samples, splitmix64(e.seed)), manifest.resolve(e.samples));
      write_off(ground_truth_mesh(spec, config.mesh_resolution), manifest.resolve(e.mesh));
    }
  });
  const std::filesystem::path path = out_dir / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << manifest_json(manifest);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
  return manifest;
}

std::string manifest_json(const DatasetManifest& manifest) {
  using nlohmann::json;
  const DatasetConfig& c = manifest.config;
  json doc;
  doc["format"] = "occattn-dataset-1";
  doc["config"] = {{"categories", c.categories}, {"per_category", c.per_category}, {"views", c.views},
                   {"seed", c.seed},             {"resolution", c.resolution},     {"shading", to_string(c.shading)},
                   {"samples", c.samples},       {"mesh_resolution", c.mesh_resolution}};
  json objects = json::array();
  for (const auto& o : manifest.objects) {
    json views = json::array();
    for (const auto& v : o.views) views.push_back({{"azimuth", v[0]}, {"elevation", v[1]}});
    objects.push_back({{"id", o.id},
                       {"category", o.category},
                       {"split", to_string(o.split)},
                       {"seed", o.seed},
                       {"images", o.images},
                       {"views", views},
                       {"mesh", o.mesh},
                       {"samples", o.samples}});
  }
  doc["objects"] = objects;
  return doc.dump(2) + "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  DatasetManifest manifest;
  manifest.root = path.parent_path();
  try {
    const auto doc = nlohmann::json::parse(in);
    if (doc.at("format") != "occattn-dataset-1") throw FormatError(path.string() + ": unknown manifest format");
    const auto& c = doc.at("config");
    DatasetConfig& cfg = manifest.config;
    cfg.categories = c.at("categories").get<std::vector<std::string>>();
    cfg.per_category = c.at("per_category");
    cfg.views = c.at("views");
    cfg.seed = c.at("seed");
    cfg.resolution = c.at("resolution");
    cfg.shading = parse_shading(c.at("shading"));
    cfg.samples = c.at("samples");
    cfg.mesh_resolution = c.at("mesh_resolution");
    for (const auto& o : doc.at("objects")) {
      ObjectEntry e;
      e.id = o.at("id");
      e.category = o.at("category");
      e.split = parse_split(o.at("split"));
      e.seed = o.at("seed");
      e.images = o.at("images").get<std::vector<std::string>>();
      for (const auto& v : o.at("views")) e.views.push_back({v.at("azimuth"), v.at("elevation")});
      e.mesh = o.at("mesh");
      e.samples = o.at("samples");
      manifest.objects.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest;
}

}  // namespace occattn
