#include "occattn/ensemble.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "occattn/checkpoint.hpp"
#include "occattn/error.hpp"

namespace occattn {

Placement default_placement(const std::string& category, const std::set<std::string>& late_set) {
  const bool known = std::find(kBenchmarkCategories.begin(), kBenchmarkCategories.end(), category) != kBenchmarkCategories.end() ||
                     std::find(kShapeCategories.begin(), kShapeCategories.end(), category) != kShapeCategories.end() ||
                     late_set.count(category);
  if (!known) throw ConfigurationError("unknown category '" + category + "'");
  return late_set.count(category) ? Placement::late : Placement::early;
}

Placement default_placement(const std::string& category) {
  const bool desk = std::find(kShapeCategories.begin(), kShapeCategories.end(), category) != kShapeCategories.end();
  return default_placement(category, desk ? kDeskLateSet : kBenchmarkLateSet);
}

std::string placement_label(Placement p) {
  switch (p) {
    case Placement::none: return "w.o. attn";
    case Placement::early: return "attn 1-2";
    case Placement::late: return "attn 3-4";
    case Placement::all: return "attn 1-2-3-4";
  }
  return "";
}

Placement select_best(const std::string& category, const std::vector<ScoredVariant>& variants, Criterion criterion) {
  if (variants.empty()) throw ConfigurationError("no scored variants for category '" + category + "'");
  auto score = [criterion](const ScoredVariant& v) {
    switch (criterion) {
      case Criterion::iou: return v.iou;
      case Criterion::chamfer_l1: return -v.chamfer_l1;
      case Criterion::normal_consistency: return v.normal_consistency;
    }
    return v.iou;
  };
  const ScoredVariant* best = &variants.front();
  for (const auto& v : variants) {
    const double a = score(v), b = score(*best);
    if (a > b || (a == b && static_cast<int>(v.placement) < static_cast<int>(best->placement))) best = &v;
  }
  return best->placement;
}

EnsembleRegistry& EnsembleRegistry::operator=(const EnsembleRegistry& other) {
  if (this != &other) {
    std::scoped_lock lock(mutex_);
    base_ = other.base_;
    entries_ = other.entries_;
    cache_.clear();
  }
  return *this;
}

void EnsembleRegistry::set(const std::string& category, RegistryEntry entry) {
  std::scoped_lock lock(mutex_);
  entries_[category] = std::move(entry);
  cache_.erase(category);
}

const RegistryEntry& EnsembleRegistry::entry(const std::string& category) const {
  const auto it = entries_.find(category);
  if (it == entries_.end()) throw RoutingError("no specialist registered for category '" + category + "'");
  return it->second;
}

std::filesystem::path EnsembleRegistry::checkpoint_path(const std::string& category) const {
  const std::filesystem::path p = entry(category).checkpoint;
  return p.is_absolute() ? p : base_ / p;
}

std::shared_ptr<const OccupancyModel> EnsembleRegistry::route(const std::string& category) const {
  const std::filesystem::path path = checkpoint_path(category);
  std::scoped_lock lock(mutex_);
  auto& slot = cache_[category];
  if (!slot) slot = std::make_shared<const OccupancyModel>(load_checkpoint(path).model);
  return slot;
}

std::string EnsembleRegistry::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [category, e] : entries_)
    doc[category] = {{"placement", to_string(e.placement)},
                     {"checkpoint", e.checkpoint},
                     {"scores",
                      {{"iou", e.scores.iou}, {"chamfer_l1", e.scores.chamfer_l1}, {"nc", e.scores.normal_consistency}}}};
  return doc.dump(2) + "\n";
}

EnsembleRegistry EnsembleRegistry::from_json(const std::string& text, const std::filesystem::path& base) {
  EnsembleRegistry registry(base);
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& [category, e] : doc.items()) {
      RegistryEntry entry;
      entry.placement = parse_placement(e.at("placement"));
      entry.checkpoint = e.at("checkpoint");
      const auto& s = e.at("scores");
      entry.scores = {entry.placement, s.at("iou"), s.at("chamfer_l1"), s.at("nc")};
      registry.entries_[category] = entry;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad registry: ") + e.what());
  }
  return registry;
}

void EnsembleRegistry::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

EnsembleRegistry EnsembleRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open registry '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str(), path.parent_path());
}

EvaluationResult evaluate_objects(const DatasetManifest& manifest, const std::vector<const ObjectEntry*>& objects,
                                  const Predictor& predict, const MetricsConfig& metrics) {
  EvaluationResult result;
  for (const ObjectEntry* o : objects) {
    MetricsRecord record;
    try {
      const Mesh gt = read_off(manifest.resolve(o->mesh));
      const Mesh pred = predict(*o);
      record = evaluate_pair(pred, gt, metrics);
    } catch (const Error& e) {
      record.errors.push_back(e.what());
    }
    record.category = o->category;
    record.object_id = o->id;
    result.records.push_back(std::move(record));
  }
  result.report = aggregate(result.records);
  return result;
}

EvaluationResult ensemble_evaluate(const EnsembleRegistry& registry, const DatasetManifest& manifest, Split split,
                                   const MetricsConfig& metrics, const ReconstructConfig& extraction) {
  const auto objects = manifest.select(split);
  for (const ObjectEntry* o : objects)
    if (!registry.contains(o->category))
      throw RoutingError("no specialist registered for category '" + o->category + "'");
  const Predictor predict = [&](const ObjectEntry& o) {
    const auto model = registry.route(o.category);
    return reconstruct(*model, read_image(manifest.resolve(o.images.front())), extraction);
  };
  return evaluate_objects(manifest, objects, predict, metrics);
}

}  // namespace occattn
