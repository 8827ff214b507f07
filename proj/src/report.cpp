#include "occattn/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "occattn/error.hpp"

namespace occattn {

namespace {

struct Accumulator {
  double sum = 0.0;
  std::size_t n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> mean() const { return n ? std::optional<double>(sum / double(n)) : std::nullopt; }
};

std::string fixed(const std::optional<double>& v, int digits) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw FormatError("bad metric value '" + cell + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("bad metric value '" + cell + "'");
  }
}

CategoryScores mean_of(const std::vector<CategoryScores>& rows) {
  Accumulator iou, cd, nc;
  CategoryScores mean;
  mean.category = "mean";
  for (const auto& r : rows) {
    iou.add(r.iou);
    cd.add(r.chamfer_l1);
    nc.add(r.normal_consistency);
    mean.objects += r.objects;
    mean.failures += r.failures;
  }
  mean.iou = iou.mean();
  mean.chamfer_l1 = cd.mean();
  mean.normal_consistency = nc.mean();
  return mean;
}

}  // namespace

MetricsReport aggregate(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::array<Accumulator, 3>> acc;
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& r : records) {
    if (!acc.count(r.category)) order.push_back(r.category);
    auto& a = acc[r.category];
    a[0].add(r.iou);
    a[1].add(r.chamfer_l1);
    a[2].add(r.normal_consistency);
    auto& c = counts[r.category];
    ++c.first;
    if (!r.complete()) ++c.second;
  }
  MetricsReport report;
  for (const auto& name : order) {
    CategoryScores s;
    s.category = name;
    s.iou = acc[name][0].mean();
    s.chamfer_l1 = acc[name][1].mean();
    s.normal_consistency = acc[name][2].mean();
    s.objects = counts[name].first;
    s.failures = counts[name].second;
    report.failures += s.failures;
    report.categories.push_back(s);
  }
  report.mean = mean_of(report.categories);
  return report;
}

std::string metrics_report_csv(const std::vector<MetricsRecord>& records, const MetricsReport& report) {
  std::string out = metrics_csv(records);
  auto row = [](const CategoryScores& s) {
    MetricsRecord r;
    r.category = s.category;
    r.object_id = "mean";
    r.iou = s.iou;
    r.chamfer_l1 = s.chamfer_l1;
    r.normal_consistency = s.normal_consistency;
    return metrics_csv_row(r) + "\n";
  };
  for (const auto& c : report.categories) out += row(c);
  out += row(report.mean);
  return out;
}

MetricsReport parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader)
    throw FormatError(std::string("metrics CSV must start with '") + kMetricsCsvHeader + "'");
  std::vector<MetricsRecord> objects;
  std::vector<CategoryScores> aggregates;
  std::optional<CategoryScores> mean;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw FormatError("metrics CSV row needs 5 cells: '" + line + "'");
    if (cells[1] == "mean") {
      CategoryScores s{cells[0], parse_cell(cells[2]), parse_cell(cells[3]), parse_cell(cells[4]), 0, 0};
      if (cells[0] == "mean") mean = s;
      else aggregates.push_back(s);
      continue;
    }
    MetricsRecord r;
    r.category = cells[0];
    r.object_id = cells[1];
    r.iou = parse_cell(cells[2]);
    r.chamfer_l1 = parse_cell(cells[3]);
    r.normal_consistency = parse_cell(cells[4]);
    objects.push_back(r);
  }
  MetricsReport report = aggregate(objects);
  if (!aggregates.empty()) {
    // Recorded aggregates win over recomputation; object counts come from the object rows.
    for (auto& s : aggregates)
      for (const auto& c : report.categories)
        if (c.category == s.category) {
          s.objects = c.objects;
          s.failures = c.failures;
        }
    report.categories = aggregates;
    report.mean = mean_of(report.categories);
  }
  if (mean) {
    mean->objects = report.mean.objects;
    mean->failures = report.mean.failures;
    report.mean = *mean;
  }
  return report;
}

namespace {

struct MetricColumn {
  const char* title;
  std::optional<double> CategoryScores::*field;
  bool lower_is_better;
};

constexpr MetricColumn kColumns[] = {{"IoU", &CategoryScores::iou, false},
                                     {"Chamfer-L1", &CategoryScores::chamfer_l1, true},
                                     {"Normal Consistency", &CategoryScores::normal_consistency, false}};

std::string join_row(const std::vector<std::string>& cells, ReportFormat format) {
  std::string out = format == ReportFormat::markdown ? "| " : "";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += format == ReportFormat::markdown ? " | " : ",";
    out += cells[i];
  }
  return out + (format == ReportFormat::markdown ? " |\n" : "\n");
}

std::string alignment_row(std::size_t value_columns) {
  std::string out = "|:---|";
  for (std::size_t i = 0; i < value_columns; ++i) out += "---:|";
  return out + "\n";
}

}  // namespace

std::string render_grid(const std::vector<LabeledReport>& runs, ReportFormat format, std::vector<std::string>* warnings) {
  if (runs.empty()) throw ConfigurationError("report needs at least one run");
  std::vector<std::string> categories;
  for (const auto& run : runs)
    for (const auto& c : run.report.categories)
      if (std::find(categories.begin(), categories.end(), c.category) == categories.end()) categories.push_back(c.category);
  const bool compare = runs.size() > 1;

  auto lookup = [](const LabeledReport& run, const std::string& category) -> const CategoryScores* {
    if (category == "mean") return &run.report.mean;
    for (const auto& c : run.report.categories)
      if (c.category == category) return &c;
    return nullptr;
  };
  for (const auto& run : runs)
    for (const auto& category : categories)
      if (!lookup(run, category) && warnings)
        warnings->push_back("run '" + run.label + "' has no category '" + category + "'");

  std::vector<std::string> header{"Category"};
  for (const auto& col : kColumns)
    for (const auto& run : runs) header.push_back(compare ? std::string(col.title) + " " + run.label : col.title);
  std::string out = join_row(header, format);
  if (format == ReportFormat::markdown) out += alignment_row(header.size() - 1);

  categories.push_back("mean");
  for (const auto& category : categories) {
    std::vector<std::string> cells{category};
    for (const auto& col : kColumns) {
      std::vector<std::optional<double>> values;
      for (const auto& run : runs) {
        const CategoryScores* s = lookup(run, category);
        values.push_back(s ? s->*col.field : std::nullopt);
      }
      // Best is judged on the printed (rounded) value so that ties bold together.
      std::optional<double> best;
      for (const auto& v : values) {
        if (!v) continue;
        const double shown = std::stod(fixed(v, 3));
        if (!best || (col.lower_is_better ? shown < *best : shown > *best)) best = shown;
      }
      for (const auto& v : values) {
        std::string text = fixed(v, 3);
        if (compare && v && format == ReportFormat::markdown && std::stod(text) == *best) text = "**" + text + "**";
        cells.push_back(text);
      }
    }
    out += join_row(cells, format);
  }
  return out;
}

std::string render_list(const std::vector<LabeledReport>& runs, ReportFormat format) {
  if (runs.empty()) throw ConfigurationError("report needs at least one run");
  std::string out = join_row({"Category", "IoU"}, format);
  if (format == ReportFormat::markdown) out += alignment_row(1);
  for (const auto& run : runs) out += join_row({run.label, fixed(run.report.mean.iou, 3)}, format);
  return out;
}

}  // namespace occattn
