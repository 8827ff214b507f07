#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "occattn/metrics.hpp"

namespace occattn {

struct CategoryScores {
  std::string category;
  std::optional<double> iou, chamfer_l1, normal_consistency;
  std::size_t objects = 0;
  std::size_t failures = 0;
};

/// Per-category means plus their unweighted mean, the "mean" row of the tables.
struct MetricsReport {
  std::vector<CategoryScores> categories;
  CategoryScores mean;
  std::size_t failures = 0;
};

/// Groups records by category in order of first appearance. Each metric averages the
/// records where it is present; records missing any metric count as failures.
MetricsReport aggregate(const std::vector<MetricsRecord>& records);

/// Object rows followed by one "<category>,mean" row per category and a final "mean,mean" row.
std::string metrics_report_csv(const std::vector<MetricsRecord>& records, const MetricsReport& report);

/// Reads a metrics CSV. Aggregate rows are used when present, otherwise object rows are averaged.
MetricsReport parse_metrics_csv(const std::string& text);

struct LabeledReport {
  std::string label;
  MetricsReport report;
};

enum class ReportFormat { markdown, csv };

/// Category-by-method grid grouped by metric (IoU, Chamfer-L1, Normal Consistency). With
/// more than one run the best value per metric in each row is bolded (lowest Chamfer).
/// Categories missing from a run stay blank and produce a warning.
std::string render_grid(const std::vector<LabeledReport>& runs, ReportFormat format,
                        std::vector<std::string>* warnings = nullptr);

/// Two-column list of each run's mean IoU.
std::string render_list(const std::vector<LabeledReport>& runs, ReportFormat format);

}  // namespace occattn
