#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "occattn/metrics.hpp"
#include "occattn/model.hpp"
#include "occattn/reconstruct.hpp"
#include "occattn/trainer.hpp"

namespace occattn {

/// Every tunable knob, addressable as a flat dotted key (e.g. "train.steps").
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  ReconstructConfig extraction;
  MetricsConfig metrics;

  /// Throws ConfigurationError for unknown keys and unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// All keys with their current values, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  static const std::vector<std::string>& keys();

  /// key=value lines; '#' starts a comment; blank lines ignored.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_text() const;
};

}  // namespace occattn
