#include "occattn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "occattn/error.hpp"

namespace occattn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::size_t to_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigurationError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  return v;
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigurationError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

std::string format(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format(std::size_t v) { return std::to_string(v); }

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Field size_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_size(k, v); },
          [member](RunConfig c) { return format(std::size_t(member(c))); }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = to_double(k, v); },
          [member](RunConfig c) { return format(double(member(c))); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto size = [&](std::string key, auto member) { t.emplace_back(std::move(key), size_field(member)); };
    auto real = [&](std::string key, auto member) { t.emplace_back(std::move(key), double_field(member)); };
    size("encoder.resolution", [](RunConfig& c) -> std::size_t& { return c.model.encoder.resolution; });
    size("encoder.in_channels", [](RunConfig& c) -> std::size_t& { return c.model.encoder.in_channels; });
    size("encoder.stem_channels", [](RunConfig& c) -> std::size_t& { return c.model.encoder.stem_channels; });
    size("encoder.stem_stride", [](RunConfig& c) -> std::size_t& { return c.model.encoder.stem_stride; });
    t.emplace_back("encoder.widths",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           std::stringstream in(v);
                           std::string part;
                           std::vector<std::size_t> widths;
                           while (std::getline(in, part, ',')) widths.push_back(to_size(k, trim(part)));
                           if (widths.size() != 4) throw ConfigurationError("'" + k + "' expects four comma-separated widths");
                           for (std::size_t i = 0; i < 4; ++i) c.model.encoder.widths[i] = widths[i];
                         },
                         [](const RunConfig& c) {
                           const auto& w = c.model.encoder.widths;
                           return format(w[0]) + "," + format(w[1]) + "," + format(w[2]) + "," + format(w[3]);
                         }});
    size("encoder.feature_dim", [](RunConfig& c) -> std::size_t& { return c.model.encoder.feature_dim; });
    t.emplace_back("encoder.placement",
                   Field{[](RunConfig& c, const std::string&, const std::string& v) {
                           c.model.encoder.placement = parse_placement(v);
                         },
                         [](const RunConfig& c) { return to_string(c.model.encoder.placement); }});
    size("encoder.reduction", [](RunConfig& c) -> std::size_t& { return c.model.encoder.reduction; });
    size("decoder.hidden", [](RunConfig& c) -> std::size_t& { return c.model.decoder.hidden; });
    t.emplace_back("decoder.norm", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                           c.model.decoder.norm = parse_norm_mode(v);
                                         },
                                         [](const RunConfig& c) { return to_string(c.model.decoder.norm); }});
    real("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    real("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
    real("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
    real("train.epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; });
    size("train.steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; });
    size("train.val_interval", [](RunConfig& c) -> std::size_t& { return c.train.val_interval; });
    size("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    size("train.points_per_object", [](RunConfig& c) -> std::size_t& { return c.train.points_per_object; });
    size("train.val_points", [](RunConfig& c) -> std::size_t& { return c.train.val_points; });
    size("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    t.emplace_back("train.schedule", Field{[](RunConfig& c, const std::string&, const std::string& v) {
                                             c.train.schedule = parse_lr_schedule(v);
                                           },
                                           [](const RunConfig& c) { return to_string(c.train.schedule); }});
    real("extract.tau", [](RunConfig& c) -> double& { return c.extraction.tau; });
    size("extract.resolution", [](RunConfig& c) -> std::size_t& { return c.extraction.resolution; });
    size("extract.levels", [](RunConfig& c) -> std::size_t& { return c.extraction.levels; });
    size("extract.chunk", [](RunConfig& c) -> std::size_t& { return c.extraction.chunk; });
    size("metrics.samples", [](RunConfig& c) -> std::size_t& { return c.metrics.samples; });
    size("metrics.seed", [](RunConfig& c) -> std::uint64_t& { return c.metrics.seed; });
    t.emplace_back("metrics.distance",
                   Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                           if (v == "euclidean") c.metrics.distance = Distance::euclidean;
                           else if (v == "manhattan") c.metrics.distance = Distance::manhattan;
                           else throw ConfigurationError("'" + k + "' expects euclidean|manhattan, got '" + v + "'");
                         },
                         [](const RunConfig& c) {
                           return std::string(c.metrics.distance == Distance::euclidean ? "euclidean" : "manhattan");
                         }});
    return t;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw ConfigurationError("unknown configuration key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(*this));
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, f] : fields()) n.push_back(name);
    return n;
  }();
  return names;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigurationError("line " + std::to_string(number) + ": expected key=value, got '" + line + "'");
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigurationError& e) {
      throw ConfigurationError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse(buffer.str());
  } catch (const ConfigurationError& e) {
    throw ConfigurationError(path.string() + ": " + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + "=" + v + "\n";
  return out;
}

}  // namespace occattn
