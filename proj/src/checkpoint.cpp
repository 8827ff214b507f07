#include "occattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "occattn/error.hpp"

namespace occattn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'A', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_to_json(const ModelConfig& c) {
  const EncoderConfig& e = c.encoder;
  return {{"encoder",
           {{"resolution", e.resolution},
            {"in_channels", e.in_channels},
            {"stem_channels", e.stem_channels},
            {"stem_stride", e.stem_stride},
            {"widths", e.widths},
            {"feature_dim", e.feature_dim},
            {"placement", to_string(e.placement)},
            {"reduction", e.reduction}}},
          {"decoder", {{"hidden", c.decoder.hidden}, {"blocks", c.decoder.blocks}, {"norm", to_string(c.decoder.norm)}}}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& e = j.at("encoder");
  c.encoder.resolution = e.at("resolution");
  c.encoder.in_channels = e.at("in_channels");
  c.encoder.stem_channels = e.at("stem_channels");
  c.encoder.stem_stride = e.at("stem_stride");
  c.encoder.widths = e.at("widths").get<std::array<std::size_t, 4>>();
  c.encoder.feature_dim = e.at("feature_dim");
  c.encoder.placement = parse_placement(e.at("placement"));
  c.encoder.reduction = e.at("reduction");
  const auto& d = j.at("decoder");
  c.decoder.hidden = d.at("hidden");
  c.decoder.blocks = d.at("blocks");
  c.decoder.norm = parse_norm_mode(d.at("norm"));
  return c;
}

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string text(std::size_t n) { return std::string(take(n), n); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string model_config_json(const ModelConfig& config) { return config_to_json(config).dump(); }

ModelConfig parse_model_config_json(const std::string& text) {
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
}

std::string serialize_checkpoint(const OccupancyModel& model, const CheckpointMeta& meta) {
  OccupancyModel copy = model;
  ParameterSet set = copy.parameters();
  nlohmann::json header = {{"model", config_to_json(model.config())},
                           {"meta", {{"step", meta.step}, {"val_loss", meta.val_loss}, {"seed", meta.seed}}}};
  nlohmann::json run = nlohmann::json::array();
  for (const auto& [k, v] : meta.run_config) run.push_back({k, v});
  header["meta"]["run_config"] = run;
  const std::string json = header.dump();

  std::string out(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out += json;
  put_u32(out, static_cast<std::uint32_t>(set.parameters.size() + set.buffers.size()));
  auto put_tensor = [&](const std::string& name, std::uint8_t kind, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(kind));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  };
  for (const auto& p : set.parameters) put_tensor(p.name, 0, p.var->value());
  for (const auto& b : set.buffers) put_tensor(b.name, 1, *b.tensor);
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(8), kMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = in.u32();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.text(in.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  CheckpointMeta meta;
  ModelConfig config;
  try {
    config = config_from_json(header.at("model"));
    const auto& m = header.at("meta");
    meta.step = m.at("step");
    meta.val_loss = m.at("val_loss");
    meta.seed = m.at("seed");
    for (const auto& kv : m.at("run_config")) meta.run_config.emplace_back(kv.at(0), kv.at(1));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }

  OccupancyModel model(config, 0);
  ParameterSet set = model.parameters();
  const std::size_t expected = set.parameters.size() + set.buffers.size();
  const std::uint32_t count = in.u32();
  if (count != expected)
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model expects " + std::to_string(expected));
  auto read_into = [&](const std::string& name, std::uint8_t kind, Tensor& target) {
    const std::string got = in.text(in.u32());
    if (got != name) throw FormatError("expected tensor '" + name + "', found '" + got + "'");
    if (static_cast<std::uint8_t>(*in.take(1)) != kind) throw FormatError("tensor '" + name + "' has the wrong kind");
    Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    if (shape != target.shape())
      throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(target.shape()));
    for (double& v : target.values()) {
      float f;
      std::memcpy(&f, in.take(4), 4);
      v = f;
    }
    if (!target.all_finite()) throw FormatError("tensor '" + name + "' holds non-finite values");
  };
  for (auto& p : set.parameters) read_into(p.name, 0, p.var->mutable_value());
  for (auto& b : set.buffers) read_into(b.name, 1, *b.tensor);
  if (!in.done()) throw FormatError("trailing bytes after checkpoint tensors");
  return {std::move(model), std::move(meta)};
}

void save_checkpoint(const OccupancyModel& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(model, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_checkpoint(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace occattn
