#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <thread>

#include "occattn/checkpoint.hpp"
#include "occattn/ensemble.hpp"
#include "occattn/error.hpp"
#include "test_support.hpp"

using namespace occattn;
using namespace occattn::testing;

TEST_CASE("default placement follows the late set") {
  CHECK(default_placement("airplane") == Placement::early);
  CHECK(default_placement("lamp") == Placement::late);
  CHECK(default_placement("bench") == Placement::late);
  CHECK(default_placement("display") == Placement::late);
  CHECK(default_placement("ring") == Placement::late);
  CHECK(default_placement("block") == Placement::early);
  CHECK(default_placement("block", {"block"}) == Placement::late);
  CHECK_THROWS_AS(default_placement("boat"), ConfigurationError);
}

TEST_CASE("select best reproduces the per-category choices") {
  const std::vector<ScoredVariant> airplane{
      {Placement::none, 0.649, 0.010, 0.868}, {Placement::early, 0.645, 0.011, 0.868}, {Placement::late, 0.637, 0.011, 0.865}};
  const std::vector<ScoredVariant> bench{
      {Placement::none, 0.434, 0.017, 0.806}, {Placement::early, 0.461, 0.016, 0.813}, {Placement::late, 0.493, 0.016, 0.813}};
  CHECK(select_best("airplane", airplane) == Placement::none);
  CHECK(select_best("bench", bench) == Placement::late);
  CHECK(select_best("bench", bench, Criterion::chamfer_l1) == Placement::early);
  CHECK(select_best("airplane", airplane, Criterion::normal_consistency) == Placement::none);
}

TEST_CASE("select best ties prefer fewer attention modules and ignore order") {
  std::vector<ScoredVariant> tied{
      {Placement::late, 0.5, 0.1, 0.9}, {Placement::early, 0.5, 0.1, 0.9}, {Placement::none, 0.5, 0.1, 0.9}};
  CHECK(select_best("x", tied) == Placement::none);
  std::vector<ScoredVariant> bench{
      {Placement::none, 0.434, 0.017, 0.806}, {Placement::early, 0.461, 0.016, 0.813}, {Placement::late, 0.493, 0.016, 0.813}};
  std::sort(bench.begin(), bench.end(), [](auto& a, auto& b) { return int(a.placement) < int(b.placement); });
  do {
    CHECK(select_best("bench", bench) == Placement::late);
  } while (std::next_permutation(bench.begin(), bench.end(),
                                 [](auto& a, auto& b) { return int(a.placement) < int(b.placement); }));
  CHECK_THROWS_AS(select_best("x", {}), ConfigurationError);
}

TEST_CASE("placement labels") {
  CHECK(placement_label(Placement::none) == "w.o. attn");
  CHECK(placement_label(Placement::early) == "attn 1-2");
  CHECK(placement_label(Placement::late) == "attn 3-4");
  CHECK(placement_label(Placement::all) == "attn 1-2-3-4");
}

TEST_CASE("registry routes lazily and caches") {
  TempDir dir("registry");
  const OccupancyModel model(tiny_model(Placement::early, 8), 3);
  save_checkpoint(model, CheckpointMeta{}, dir / "ring.oac");
  EnsembleRegistry registry(dir.path());
  registry.set("ring", {Placement::early, "ring.oac", {Placement::early, 0.8, 0.01, 0.9}});
  CHECK_THROWS_AS(registry.route("block"), RoutingError);

  std::shared_ptr<const OccupancyModel> a, b;
  std::thread t([&] { a = registry.route("ring"); });
  b = registry.route("ring");
  t.join();
  CHECK(a.get() == b.get());
  CHECK(registry.route("ring").get() == a.get());
  CHECK(a->config().encoder.placement == Placement::early);

  registry.save(dir / "registry.json");
  const EnsembleRegistry loaded = EnsembleRegistry::load(dir / "registry.json");
  CHECK(loaded.to_json() == registry.to_json());
  CHECK(loaded.checkpoint_path("ring") == dir / "ring.oac");
  CHECK(loaded.entry("ring").scores.iou == 0.8);
  CHECK(loaded.route("ring")->config().encoder.resolution == 8);
}

TEST_CASE("malformed registries are rejected") {
  CHECK_THROWS_AS(EnsembleRegistry::from_json("{\"ring\": {\"placement\": \"early\"}}", "."), FormatError);
  CHECK_THROWS_AS(EnsembleRegistry::from_json("[1,", "."), FormatError);
  CHECK_THROWS_AS(EnsembleRegistry::load("/nonexistent/registry.json"), IoError);
}

TEST_CASE("evaluation with injected predictions") {
  TempDir dir("ens_eval");
  DatasetConfig config;
  config.categories = {"block", "ring"};
  config.per_category = 1;
  config.views = 1;
  config.samples = 100;
  config.mesh_resolution = 32;
  const DatasetManifest manifest = build_dataset(config, dir.path());
  MetricsConfig metrics;
  metrics.samples = 2000;

  auto objects = manifest.select(Split::train);
  const Predictor identical = [&](const ObjectEntry& o) { return read_off(manifest.resolve(o.mesh)); };
  const EvaluationResult same = evaluate_objects(manifest, objects, identical, metrics);
  REQUIRE(same.report.categories.size() == 2);
  CHECK(*same.report.mean.iou == 1.0);
  CHECK(*same.report.mean.chamfer_l1 == 0.0);
  CHECK(std::abs(*same.report.mean.normal_consistency - 1.0) < 1e-9);

  const Predictor flaky = [&](const ObjectEntry& o) {
    if (o.category == "ring") throw DegenerateMeshError("no surface");
    return read_off(manifest.resolve(o.mesh));
  };
  const EvaluationResult partial = evaluate_objects(manifest, objects, flaky, metrics);
  CHECK(partial.report.failures == 1);
  CHECK(partial.records.size() == 2);
  CHECK_FALSE(partial.records[1].errors.empty());

  EnsembleRegistry empty;
  CHECK_THROWS_AS(ensemble_evaluate(empty, manifest, Split::train, metrics, ReconstructConfig{}), RoutingError);
}

TEST_CASE("report mean equals the mean of category rows") {
  std::vector<MetricsRecord> records{{"a", "a0", 0.2, 0.01, 0.7, {}},
                                     {"a", "a1", 0.4, 0.03, 0.9, {}},
                                     {"b", "b0", 0.9, 0.02, 0.8, {}}};
  const MetricsReport report = aggregate(records);
  REQUIRE(report.categories.size() == 2);
  CHECK(*report.categories[0].iou == doctest::Approx(0.3));
  const double mean = (*report.categories[0].iou + *report.categories[1].iou) / 2.0;
  CHECK(std::abs(*report.mean.iou - mean) < 1e-12);
  CHECK(std::abs(*report.mean.chamfer_l1 - (0.02 + 0.02) / 2.0) < 1e-12);
}
