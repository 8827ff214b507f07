#include <doctest.h>

#include <fstream>
#include <sstream>

#include "occattn/checkpoint.hpp"
#include "occattn/cli.hpp"
#include "occattn/config.hpp"
#include "occattn/ensemble.hpp"
#include "occattn/error.hpp"
#include "occattn/reconstruct.hpp"
#include "occattn/shapegen.hpp"
#include "test_support.hpp"

using namespace occattn;
using namespace occattn::testing;

namespace {

const std::filesystem::path kGolden = OCCATTN_GOLDEN_DIR;
const std::filesystem::path kFixtures = kGolden.parent_path() / "fixtures";

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string fixture(const std::string& label, const std::string& name) {
  return label + "=" + (kFixtures / name).string();
}

/// Small dataset and config whose images fit a 16x16 encoder.
std::vector<std::string> tiny_sets() {
  return {"--set", "encoder.resolution=16", "--set", "decoder.hidden=16", "--set", "train.batch_size=2",
          "--set", "train.points_per_object=64", "--set", "train.val_points=64", "--set", "train.val_interval=2",
          "--set", "extract.resolution=8", "--set", "extract.levels=1", "--set", "metrics.samples=500"};
}

}  // namespace

TEST_CASE("report renders the mean comparison in the four-method layout") {
  const Run r = cli({"report", "--run", fixture("3D-R2N2", "t1_r2n2.csv"), "--run", fixture("Pix2Mesh", "t1_pix2mesh.csv"),
                     "--run", fixture("Onet", "t1_onet.csv"), "--run", fixture("Ours", "t1_ours.csv")});
  CHECK(r.code == 0);
  CHECK(r.out == slurp(kGolden / "table1_mean.md"));
}

TEST_CASE("report of a single run has no comparison columns") {
  const Run r = cli({"report", "--run", fixture("Ours", "t1_ours.csv")});
  CHECK(r.out == slurp(kGolden / "table1_single.md"));
}

TEST_CASE("report renders the per-category variant triple") {
  const Run r = cli({"report", "--run", fixture("w.o. attn", "t2_none.csv"), "--run", fixture("attn 1-2", "t2_early.csv"),
                     "--run", fixture("attn 3-4", "t2_late.csv")});
  CHECK(r.out == slurp(kGolden / "table2.md"));
}

TEST_CASE("report renders the ablation list") {
  const Run md = cli({"report", "--style", "list", "--run", fixture("AdaIN", "t3_adain.csv"), "--run",
                      fixture("single attn 1-2", "t3_attn12.csv"), "--run", fixture("single attn 3-4", "t3_attn34.csv"),
                      "--run", fixture("single attn 1-2-3-4", "t3_attn1234.csv")});
  CHECK(md.out == slurp(kGolden / "table3.md"));
  const Run csv = cli({"report", "--style", "list", "--format", "csv", "--run", fixture("AdaIN", "t3_adain.csv"),
                       "--run", fixture("single attn 3-4", "t3_attn34.csv")});
  CHECK(csv.out == slurp(kGolden / "table3.csv"));
  const Run pair = cli({"report", "--format", "csv", "--run", fixture("Ours", "t1_ours.csv"), "--run",
                        fixture("Onet", "t1_onet.csv")});
  CHECK(pair.out == slurp(kGolden / "table1_pair.csv"));
}

TEST_CASE("report warns about inconsistent categories") {
  const Run r = cli({"report", "--run", fixture("a", "t2_none.csv"), "--run", fixture("b", "t1_ours.csv")});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(r.out.find("| airplane | **0.649** |  |") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"gen-data", "--count", "2"}).code == kExitUsage);
  CHECK(cli({"gen-data", "--out", "x", "--count", "zero"}).code == kExitUsage);
  CHECK(cli({"train", "--data", "x", "--out", "y", "--placement", "middle"}).code == kExitUsage);
  CHECK(cli({"report", "--run", "a.csv", "--style", "wide"}).code == kExitUsage);
  CHECK(cli({"eval", "--data", "x", "--out", "y"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitSuccess);
}

TEST_CASE("gen-data writes images and a reproducible manifest") {
  TempDir dir("gen");
  const std::vector<std::string> args{"gen-data", "--categories", "barbell", "--count", "2", "--views", "2",
                                      "--samples", "500", "--seed", "4", "--out"};
  auto with_out = [&](const std::string& out) {
    auto a = args;
    a.push_back(out);
    return a;
  };
  REQUIRE(cli(with_out((dir / "a").string())).code == 0);
  REQUIRE(cli(with_out((dir / "b").string())).code == 0);
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a" / "images")) images += e.is_regular_file();
  CHECK(images == 4);
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(cli({"gen-data", "--categories", "boat", "--out", (dir / "c").string()}).code == kExitUsage);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  OccupancyModel model(tiny_model(Placement::all, 8), 9);
  ParameterSet set = model.parameters();
  for (auto& b : set.buffers) b.tensor->fill(0.25);
  CheckpointMeta meta{12, 0.125, 9, {{"train.steps", "12"}}};
  const std::string bytes = serialize_checkpoint(model, meta);
  const Checkpoint loaded = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(loaded.model, loaded.meta) == bytes);
  CHECK(loaded.meta.step == 12);
  CHECK(loaded.meta.run_config == meta.run_config);
  OccupancyModel copy = loaded.model;
  ParameterSet a = model.parameters(), b = copy.parameters();
  REQUIRE(a.parameters.size() == b.parameters.size());
  for (std::size_t i = 0; i < a.parameters.size(); ++i) {
    CHECK(a.parameters[i].name == b.parameters[i].name);
    const Tensor& x = a.parameters[i].var->value();
    const Tensor& y = b.parameters[i].var->value();
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(double(float(x[k])) == y[k]);
  }
  CHECK(b.buffers.front().tensor->values()[0] == 0.25);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = serialize_checkpoint(OccupancyModel(tiny_model(), 1), CheckpointMeta{});
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(parse_checkpoint(bytes + "x"), FormatError);
}

TEST_CASE("run config parsing") {
  const RunConfig c = RunConfig::parse("# comment\ntrain.steps = 40\n\nencoder.placement=late\nencoder.widths=8,8,16,16\n");
  CHECK(c.train.steps == 40);
  CHECK(c.model.encoder.placement == Placement::late);
  CHECK(c.model.encoder.widths[3] == 16);
  CHECK(c.get("encoder.widths") == "8,8,16,16");
  CHECK(RunConfig::parse(c.to_text()).to_text() == c.to_text());
  CHECK(c.entries().size() == RunConfig::keys().size());
  try {
    RunConfig::parse("train.steps=4\ntrain.bogus=1\n");
    FAIL("expected a configuration error");
  } catch (const ConfigurationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::parse("train.steps=many\n"), ConfigurationError);
}

TEST_CASE("train, reconstruct and eval from the command line") {
  TempDir dir("pipeline");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"gen-data", "--categories", "block", "--count", "1", "--views", "1", "--resolution", "16", "--samples",
               "2000", "--out", data})
              .code == 0);

  auto train_args = [&](const std::string& placement, const std::string& out) {
    std::vector<std::string> a{"train", "--data", data, "--placement", placement, "--steps", "4", "--seed", "2", "--out", out};
    for (const auto& s : tiny_sets()) a.push_back(s);
    return a;
  };
  const Run none = cli(train_args("none", (dir / "none").string()));
  REQUIRE(none.code == 0);
  const Run early = cli(train_args("early", (dir / "early").string()));
  REQUIRE(early.code == 0);
  CHECK(std::filesystem::exists(dir / "none" / "checkpoint.oac"));
  const std::string history = slurp(dir / "none" / "history.csv");
  CHECK(history.rfind("step,train_loss,val_loss\n", 0) == 0);
  const auto first_row = [](const std::string& h) { return h.substr(0, h.find('\n', h.find('\n') + 1)); };
  CHECK(first_row(history) == first_row(slurp(dir / "early" / "history.csv")));
  CHECK(slurp(dir / "none" / "config.txt").find("train.steps=4") != std::string::npos);

  const DatasetManifest manifest = load_manifest(dir / "data" / "manifest.json");
  const std::string image = manifest.resolve(manifest.objects[0].images[0]).string();
  const std::string model = (dir / "none" / "checkpoint.oac").string();
  const Run rec = cli({"reconstruct", "--model", model, "--image", image, "--out", (dir / "a.off").string(),
                       "--dump-attention", (dir / "beta.bin").string()});
  CHECK(rec.code == 0);
  const Checkpoint checkpoint = load_checkpoint(model);
  ReconstructConfig rc;
  rc.resolution = 8;
  rc.levels = 1;
  CHECK(slurp(dir / "a.off") == to_off_string(reconstruct(checkpoint.model, read_image(image), rc)));
  CHECK(slurp(dir / "beta.bin").size() == 4);  // no attention modules: only the map count

  const Run rec_early = cli({"reconstruct", "--model", (dir / "early" / "checkpoint.oac").string(), "--image", image,
                             "--out", (dir / "b.off").string(), "--dump-attention", (dir / "beta2.bin").string()});
  CHECK(rec_early.code == 0);
  // Two maps after the stride-2 stem: layer 1 at 8x8 (N = 64) and layer 2 at 4x4 (N = 16).
  CHECK(slurp(dir / "beta2.bin").size() == 4 + 2 * 12 + 8 * (64 * 64 + 16 * 16));

  write_image(Tensor({1, 16, 16}), dir / "gray.oaimg");
  const Run mismatch = cli({"reconstruct", "--model", model, "--image", (dir / "gray.oaimg").string(), "--out",
                            (dir / "c.off").string()});
  CHECK(mismatch.code == kExitFailure);
  CHECK(mismatch.err.find("expects image") != std::string::npos);

  std::ofstream(dir / "broken.oac", std::ios::binary) << "NOTACKPT";
  CHECK(cli({"reconstruct", "--model", (dir / "broken.oac").string(), "--image", image, "--out",
             (dir / "d.off").string()})
            .code == kExitFailure);

  std::filesystem::create_directories(dir / "pred");
  std::filesystem::copy_file(manifest.resolve(manifest.objects[0].mesh), dir / "pred" / "block_000.off");
  auto eval = [&](const std::string& out) {
    return cli({"eval", "--pred-dir", (dir / "pred").string(), "--data", data, "--split", "train", "--samples",
                "1000", "--seed", "3", "--out", out});
  };
  REQUIRE(eval((dir / "m1.csv").string()).code == 0);
  REQUIRE(eval((dir / "m2.csv").string()).code == 0);
  const std::string csv = slurp(dir / "m1.csv");
  CHECK(csv == slurp(dir / "m2.csv"));
  CHECK(csv.find("block,block_000,1.000000,0.000000,1.000000") != std::string::npos);

  std::filesystem::remove(dir / "pred" / "block_000.off");
  const Run missing = eval((dir / "m3.csv").string());
  CHECK(missing.code == 0);
  CHECK(missing.out.find("1 failures") != std::string::npos);
  CHECK(slurp(dir / "m3.csv").find("block,block_000,,,") != std::string::npos);

  const Run scored = cli({"eval", "--model", model, "--data", data, "--split", "train", "--samples", "500", "--out",
                          (dir / "m4.csv").string(), "--set", "extract.resolution=8", "--set", "extract.levels=1"});
  CHECK(scored.code == 0);
}

TEST_CASE("ensemble command picks one variant per category and is idempotent") {
  TempDir dir("ensemble");
  const std::string data = (dir / "data").string();
  REQUIRE(cli({"gen-data", "--categories", "block,ring", "--count", "1", "--views", "1", "--resolution", "16",
               "--samples", "2000", "--out", data})
              .code == 0);
  std::vector<std::string> args{"ensemble", "--data", data, "--out", (dir / "ens").string(), "--steps", "2",
                                "--split", "train", "--eval-split", "train"};
  for (const auto& s : tiny_sets()) args.push_back(s);
  const Run first = cli(args);
  REQUIRE(first.code == 0);
  const EnsembleRegistry registry = EnsembleRegistry::load(dir / "ens" / "registry.json");
  CHECK(registry.entries().size() == 2);
  CHECK(registry.contains("block"));
  CHECK(registry.contains("ring"));
  CHECK(first.out.find("| Category | IoU w.o. attn | IoU attn 1-2 | IoU attn 3-4 |") == 0);
  CHECK(std::filesystem::exists(dir / "ens" / "ensemble_metrics.csv"));

  const Run second = cli(args);
  REQUIRE(second.code == 0);
  CHECK(second.err.find("training") == std::string::npos);
  CHECK(second.err.find("reusing") != std::string::npos);
  CHECK(second.out == first.out);
  CHECK(EnsembleRegistry::load(dir / "ens" / "registry.json").to_json() == registry.to_json());
}
