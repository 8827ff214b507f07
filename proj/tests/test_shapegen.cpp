#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "occattn/error.hpp"
#include "occattn/metrics.hpp"
#include "occattn/shapegen.hpp"
#include "test_support.hpp"

using namespace occattn;
using namespace occattn::testing;

namespace {

ShapeSpec single(PrimitiveKind kind, const Eigen::Vector3d& size) {
  ShapeSpec s;
  s.category = "test";
  Primitive p;
  p.kind = kind;
  p.size = size;
  s.primitives.push_back(p);
  return s;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

TEST_CASE("sphere label fraction matches its volume") {
  const auto samples = sample_training_points(single(PrimitiveKind::sphere, {0.4, 0, 0}), 100000, 3);
  double inside = 0.0;
  for (Eigen::Index i = 0; i < samples.labels.size(); ++i) inside += samples.labels[i];
  const double expected = 4.0 / 3.0 * std::acos(-1.0) * std::pow(0.4, 3) / std::pow(1.1, 3);
  CHECK(std::abs(inside / 100000.0 - expected) < 0.005);
  for (Eigen::Index i = 0; i < samples.points.rows(); ++i)
    CHECK(samples.points.row(i).cwiseAbs().maxCoeff() <= kPaddedHalfWidth);
}

TEST_CASE("box volume by Monte Carlo") {
  const auto samples = sample_training_points(single(PrimitiveKind::box, {0.1, 0.15, 0.2}), 100000, 4);
  double inside = 0.0;
  for (Eigen::Index i = 0; i < samples.labels.size(); ++i) inside += samples.labels[i];
  const double cube = std::pow(1.1, 3), p = 0.024 / cube;
  const double sigma = std::sqrt(p * (1 - p) / 100000.0) * cube;
  CHECK(std::abs(inside / 100000.0 * cube - 0.024) < 3.0 * sigma);
}

TEST_CASE("signed distance is negative inside") {
  const ShapeSpec torus = single(PrimitiveKind::torus, {0.3, 0.08, 0});
  CHECK(torus.sdf({0.3, 0, 0}) == doctest::Approx(-0.08));
  CHECK(torus.sdf({0, 0, 0}) == doctest::Approx(0.22));
  const ShapeSpec cylinder = single(PrimitiveKind::cylinder, {0.2, 0.3, 0});
  CHECK(cylinder.sdf({0, 0, 0.5}) == doctest::Approx(0.2));
  CHECK(cylinder.inside({0.1, 0.1, 0.2}));
  CHECK_FALSE(cylinder.inside({0.2, 0.2, 0}));
  CHECK(std::isinf(ShapeSpec{}.sdf({0, 0, 0})));
}

TEST_CASE("generated shapes stay inside the unit cube") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-kPaddedHalfWidth, kPaddedHalfWidth);
  for (const auto category : kShapeCategories) {
    const std::size_t count = category == "table4" ? 100 : 20;
    for (std::uint64_t seed = 0; seed < count; ++seed) {
      const ShapeSpec spec = generate_shape(std::string(category), seed);
      REQUIRE_FALSE(spec.primitives.empty());
      const auto box = spec.bounds();
      CHECK(box.min().minCoeff() >= -0.5);
      CHECK(box.max().maxCoeff() <= 0.5);
      int escaped = 0;
      for (int i = 0; i < 10000; ++i) {
        const Eigen::Vector3d p(u(rng), u(rng), u(rng));
        if (p.cwiseAbs().maxCoeff() > 0.5 && spec.inside(p)) ++escaped;
      }
      CHECK(escaped == 0);
    }
  }
}

TEST_CASE("shape generation is a pure function of category and seed") {
  CHECK(generate_shape("ring", 9) == generate_shape("ring", 9));
  CHECK_FALSE(generate_shape("ring", 9) == generate_shape("ring", 10));
  CHECK_THROWS_AS(generate_shape("boat", 1), ConfigurationError);
  CHECK(category_index("arch") == 4);
}

TEST_CASE("sphere silhouette covers its projected disc") {
  RenderSpec view;
  view.shading = Shading::silhouette;
  view.channels = 1;
  const Tensor image = render(single(PrimitiveKind::sphere, {0.4, 0, 0}), view);
  REQUIRE(image.shape() == Shape{1, 64, 64});
  double covered = 0.0;
  for (double v : image.values()) covered += v > 0.5;
  const double expected = std::acos(-1.0) * 0.16 / (view.extent * view.extent);
  CHECK(std::abs(covered / (64.0 * 64.0) - expected) < 0.02 * expected);
}

TEST_CASE("empty scene renders the background") {
  RenderSpec view;
  view.background = 0.25;
  for (double v : render(ShapeSpec{}, view).values()) CHECK(v == 0.25);
}

TEST_CASE("lambert renders are shaded and bounded") {
  const Tensor image = render(generate_shape("barbell", 2), RenderSpec{});
  CHECK(image.shape() == Shape{3, 64, 64});
  double lo = 1.0, hi = 0.0;
  for (double v : image.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi > 0.3);
}

TEST_CASE("ground-truth sphere mesh") {
  const Mesh mesh = ground_truth_mesh(single(PrimitiveKind::sphere, {0.4, 0, 0}), 64);
  CHECK(is_watertight(mesh));
  const double cell = 1.1 / 64.0;
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v) CHECK(std::abs(mesh.vertices.row(v).norm() - 0.4) < 1.5 * cell);
}

TEST_CASE("ground-truth meshes agree with the analytic inside test") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-kPaddedHalfWidth, kPaddedHalfWidth);
  for (const auto category : kShapeCategories) {
    const ShapeSpec spec = generate_shape(std::string(category), 3);
    const Mesh mesh = ground_truth_mesh(spec, 64);
    REQUIRE(is_watertight(mesh));
    const InsideTester tester(mesh);
    double both = 0.0, either = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const Eigen::Vector3d p(u(rng), u(rng), u(rng));
      const bool a = spec.inside(p), b = tester.contains(p);
      both += a && b;
      either += a || b;
    }
    CAPTURE(category);
    CHECK(both / either > 0.97);
  }
}

TEST_CASE("splits follow the index") {
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t j = 0; j < 100; ++j) ++counts[std::size_t(split_for_index(j))];
  CHECK(counts[0] == 80);
  CHECK(counts[1] == 10);
  CHECK(counts[2] == 10);
  CHECK(parse_split("val") == Split::val);
  CHECK_THROWS_AS(parse_split("dev"), ConfigurationError);
}

TEST_CASE("image and sample files round-trip") {
  TempDir dir("io");
  const Tensor image = render(generate_shape("arch", 1), RenderSpec{});
  write_image(image, dir / "a.oaimg");
  const Tensor back = read_image(dir / "a.oaimg");
  REQUIRE(back.shape() == image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) CHECK(back[i] == double(float(image[i])));

  const auto samples = sample_training_points(generate_shape("arch", 1), 500, 2);
  write_samples(samples, dir / "a.oaocc");
  const auto loaded = read_samples(dir / "a.oaocc");
  CHECK(loaded.labels == samples.labels);
  CHECK((loaded.points - samples.points).cwiseAbs().maxCoeff() < 1e-7);

  std::ofstream(dir / "bad.oaimg", std::ios::binary) << "NOTIMG";
  CHECK_THROWS_AS(read_image(dir / "bad.oaimg"), FormatError);
  CHECK_THROWS_AS(read_samples(dir / "missing.oaocc"), IoError);
}

TEST_CASE("dataset build is deterministic") {
  TempDir a("ds_a"), b("ds_b");
  DatasetConfig config;
  config.categories = {"barbell"};
  config.per_category = 2;
  config.views = 2;
  config.samples = 1000;
  config.mesh_resolution = 32;
  config.seed = 5;
  const DatasetManifest ma = build_dataset(config, a.path());
  build_dataset(config, b.path());
  CHECK(ma.objects.size() == 2);
  CHECK(ma.objects[0].images.size() == 2);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  for (const auto& o : ma.objects) {
    CHECK(slurp(a / o.images[1]) == slurp(b / o.images[1]));
    CHECK(slurp(a / o.samples) == slurp(b / o.samples));
    CHECK(slurp(a / o.mesh) == slurp(b / o.mesh));
  }
  const DatasetManifest loaded = load_manifest(a / "manifest.json");
  CHECK(manifest_json(loaded) == manifest_json(ma));
  CHECK(loaded.select(Split::train, "barbell").size() == 2);
}
