#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "occattn/encoder.hpp"
#include "occattn/model.hpp"
#include "occattn/reconstruct.hpp"
#include "occattn/report.hpp"
#include "occattn/shapegen.hpp"

namespace occattn {

inline const std::vector<std::string> kBenchmarkCategories = {"airplane", "bench", "cabinet", "car",       "chair",
                                                          "display",  "lamp",  "loudspeaker", "rifle", "sofa",
                                                          "table",    "telephone", "vessel"};
inline const std::set<std::string> kBenchmarkLateSet = {"bench", "display", "lamp"};
inline const std::set<std::string> kDeskLateSet = {"ring"};

/// Attention after layers 1-2 for every known category except those in the late set,
/// which take layers 3-4. Unknown categories throw ConfigurationError.
Placement default_placement(const std::string& category);
Placement default_placement(const std::string& category, const std::set<std::string>& late_set);

/// Table label: "w.o. attn", "attn 1-2", "attn 3-4", "attn 1-2-3-4".
std::string placement_label(Placement p);

enum class Criterion { iou, chamfer_l1, normal_consistency };

struct ScoredVariant {
  Placement placement = Placement::none;
  double iou = 0.0;
  double chamfer_l1 = 0.0;
  double normal_consistency = 0.0;
};

/// Best variant by the criterion (lowest Chamfer, highest otherwise); ties go to the
/// placement with fewer attention modules (none, early, late, all).
Placement select_best(const std::string& category, const std::vector<ScoredVariant>& variants,
                      Criterion criterion = Criterion::iou);

struct RegistryEntry {
  Placement placement = Placement::none;
  std::string checkpoint;  // relative to the registry file's directory unless absolute
  ScoredVariant scores;
};

/// One specialist per category with lazily loaded, cached checkpoints.
class EnsembleRegistry {
 public:
  EnsembleRegistry() = default;
  explicit EnsembleRegistry(std::filesystem::path base) : base_(std::move(base)) {}
  EnsembleRegistry(const EnsembleRegistry& other) : base_(other.base_), entries_(other.entries_) {}
  EnsembleRegistry& operator=(const EnsembleRegistry& other);

  void set(const std::string& category, RegistryEntry entry);
  bool contains(const std::string& category) const { return entries_.count(category) != 0; }
  const RegistryEntry& entry(const std::string& category) const;
  const std::map<std::string, RegistryEntry>& entries() const { return entries_; }
  std::filesystem::path checkpoint_path(const std::string& category) const;

  /// Specialist for a category; the checkpoint loads once and later calls share it.
  /// Throws RoutingError for unregistered categories.
  std::shared_ptr<const OccupancyModel> route(const std::string& category) const;

  std::string to_json() const;
  static EnsembleRegistry from_json(const std::string& text, const std::filesystem::path& base);
  void save(const std::filesystem::path& path) const;
  static EnsembleRegistry load(const std::filesystem::path& path);

 private:
  std::filesystem::path base_;
  std::map<std::string, RegistryEntry> entries_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const OccupancyModel>> cache_;
};

using Predictor = std::function<Mesh(const ObjectEntry&)>;

struct EvaluationResult {
  std::vector<MetricsRecord> records;
  MetricsReport report;
};

/// Predicts and scores every object against its ground-truth mesh. Prediction or metric
/// failures are recorded per object and the run continues.
EvaluationResult evaluate_objects(const DatasetManifest& manifest, const std::vector<const ObjectEntry*>& objects,
                                  const Predictor& predict, const MetricsConfig& metrics);

/// Routes each object of the split to its category specialist and reconstructs from view 0.
EvaluationResult ensemble_evaluate(const EnsembleRegistry& registry, const DatasetManifest& manifest, Split split,
                                   const MetricsConfig& metrics, const ReconstructConfig& extraction);

}  // namespace occattn
