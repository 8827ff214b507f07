#include "occattn/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "occattn/checkpoint.hpp"
#include "occattn/config.hpp"
#include "occattn/ensemble.hpp"
#include "occattn/error.hpp"
#include "occattn/report.hpp"
#include "occattn/trainer.hpp"

namespace occattn {
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) items.push_back(item);
  return items;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

DatasetManifest open_dataset(const fs::path& path) {
  return load_manifest(fs::is_directory(path) ? path / "manifest.json" : path);
}

RunConfig make_run_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigurationError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

struct TrainOutcome {
  TrainResult result;
  fs::path checkpoint;
};

TrainOutcome train_to_disk(const RunConfig& config, const DatasetManifest& manifest, const std::string& category,
                           const fs::path& out_dir, std::ostream& log) {
  const TrainingData data = load_training_data(manifest, category);
  OccupancyModel model(config.model, config.train.seed);
  log << "training " << (category.empty() ? "all categories" : category) << " ("
      << to_string(config.model.encoder.placement) << ", " << data.train.size() << " objects, " << config.train.steps
      << " steps)\n";
  TrainResult result = train(model, data, config.train, [&](const HistoryRow& row) {
    if (row.val_loss) log << "step " << row.step << " train " << row.train_loss << " val " << *row.val_loss << "\n";
  });
  CheckpointMeta meta;
  meta.step = result.best_step;
  meta.val_loss = result.best_val_loss;
  meta.seed = config.train.seed;
  meta.run_config = config.entries();
  const fs::path checkpoint = out_dir / "checkpoint.oac";
  save_checkpoint(result.best, meta, checkpoint);
  write_text(out_dir / "history.csv", history_csv(result.history));
  write_text(out_dir / "config.txt", config.to_text());
  return {std::move(result), checkpoint};
}

std::vector<const ObjectEntry*> objects_for(const DatasetManifest& manifest, Split split, const std::string& category) {
  auto objects = manifest.select(split, category);
  if (objects.empty())
    throw ConfigurationError("no " + to_string(split) + " objects" +
                             (category.empty() ? std::string() : " for category '" + category + "'"));
  return objects;
}

EvaluationResult evaluate_checkpoint(const OccupancyModel& model, const DatasetManifest& manifest,
                                     const std::vector<const ObjectEntry*>& objects, const RunConfig& config) {
  const Predictor predict = [&](const ObjectEntry& o) {
    return reconstruct(model, read_image(manifest.resolve(o.images.front())), config.extraction);
  };
  return evaluate_objects(manifest, objects, predict, config.metrics);
}

void write_attention(const fs::path& path, const std::vector<std::pair<std::size_t, Tensor>>& maps) {
  // u32 map count, then per map: u32 layer, u32 B, u32 N, float64 [B,N,N] row-major.
  std::string bytes;
  auto put_u32 = [&](std::uint32_t v) { bytes.append(reinterpret_cast<const char*>(&v), 4); };
  put_u32(static_cast<std::uint32_t>(maps.size()));
  for (const auto& [layer, beta] : maps) {
    put_u32(static_cast<std::uint32_t>(layer));
    put_u32(static_cast<std::uint32_t>(beta.dim(0)));
    put_u32(static_cast<std::uint32_t>(beta.dim(1)));
    bytes.append(reinterpret_cast<const char*>(beta.data()), beta.size() * sizeof(double));
  }
  write_text(path, bytes);
}

int cmd_gen_data(const std::string& categories, std::size_t count, std::size_t views, std::uint64_t seed,
                 const std::string& shading, std::size_t resolution, std::size_t samples, const fs::path& out,
                 std::ostream& log) {
  DatasetConfig config;
  if (!categories.empty()) config.categories = split_list(categories);
  config.per_category = count;
  config.views = views;
  config.seed = seed;
  config.shading = parse_shading(shading);
  config.resolution = resolution;
  config.samples = samples;
  const DatasetManifest manifest = build_dataset(config, out);
  log << "wrote " << manifest.objects.size() << " objects to " << out.string() << "\n";
  return kExitSuccess;
}

struct EnsembleOptions {
  std::string data, out, config, categories, split = "val", eval_split = "test", criterion = "iou";
  std::vector<std::string> overrides;
};

Criterion parse_criterion(const std::string& text) {
  if (text == "iou") return Criterion::iou;
  if (text == "chamfer_l1") return Criterion::chamfer_l1;
  if (text == "nc") return Criterion::normal_consistency;
  throw ConfigurationError("unknown criterion '" + text + "' (expected iou|chamfer_l1|nc)");
}

int cmd_ensemble(const EnsembleOptions& options, std::ostream& out, std::ostream& log) {
  const RunConfig base = make_run_config(options.config, options.overrides);
  const DatasetManifest manifest = open_dataset(options.data);
  const fs::path root = options.out;
  const fs::path registry_path = root / "registry.json";
  EnsembleRegistry registry = fs::exists(registry_path) ? EnsembleRegistry::load(registry_path) : EnsembleRegistry(root);
  const Criterion criterion = parse_criterion(options.criterion);

  std::vector<std::string> categories = split_list(options.categories);
  if (categories.empty())
    for (const auto& o : manifest.objects)
      if (std::find(categories.begin(), categories.end(), o.category) == categories.end())
        categories.push_back(o.category);

  const std::vector<Placement> variants = {Placement::none, Placement::early, Placement::late};
  std::vector<LabeledReport> columns;
  for (Placement p : variants) columns.push_back({placement_label(p), {}});

  for (const auto& category : categories) {
    Split split = parse_split(options.split);
    if (manifest.select(split, category).empty()) {
      log << "warning: no " << to_string(split) << " objects for " << category << ", scoring on train\n";
      split = Split::train;
    }
    const auto objects = objects_for(manifest, split, category);
    std::vector<ScoredVariant> scored;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const fs::path dir = root / category / to_string(variants[v]);
      const fs::path metrics_path = dir / "metrics.csv";
      MetricsReport report;
      if (fs::exists(metrics_path) && fs::exists(dir / "checkpoint.oac")) {
        log << category << " " << placement_label(variants[v]) << ": reusing " << metrics_path.string() << "\n";
        report = parse_metrics_csv(read_text(metrics_path));
      } else {
        RunConfig config = base;
        config.model.encoder.placement = variants[v];
        const TrainOutcome trained = train_to_disk(config, manifest, category, dir, log);
        const auto evaluated = evaluate_checkpoint(trained.result.best, manifest, objects, config);
        write_text(metrics_path, metrics_report_csv(evaluated.records, evaluated.report));
        report = evaluated.report;
      }
      const CategoryScores& row = report.mean;
      scored.push_back({variants[v], row.iou.value_or(0.0), row.chamfer_l1.value_or(0.0),
                        row.normal_consistency.value_or(0.0)});
      CategoryScores named = report.categories.empty() ? row : report.categories.front();
      named.category = category;
      columns[v].report.categories.push_back(named);
    }
    const Placement best = select_best(category, scored, criterion);
    const auto chosen = std::find_if(scored.begin(), scored.end(), [&](const auto& s) { return s.placement == best; });
    registry.set(category, {best, (fs::path(category) / to_string(best) / "checkpoint.oac").generic_string(), *chosen});
    log << category << ": chose " << placement_label(best) << "\n";
  }
  registry.save(registry_path);

  for (auto& column : columns) {
    std::vector<MetricsRecord> rows;
    for (const auto& c : column.report.categories)
      rows.push_back({c.category, c.category, c.iou, c.chamfer_l1, c.normal_consistency, {}});
    const std::size_t failures = column.report.failures;
    column.report = aggregate(rows);
    column.report.failures = failures;
  }
  const std::string table = render_grid(columns, ReportFormat::markdown);
  write_text(root / "report.md", table);
  out << table;

  const Split eval_split = parse_split(options.eval_split);
  if (!manifest.select(eval_split).empty()) {
    const auto evaluated = ensemble_evaluate(registry, manifest, eval_split, base.metrics, base.extraction);
    write_text(root / "ensemble_metrics.csv", metrics_report_csv(evaluated.records, evaluated.report));
  }
  return kExitSuccess;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-augmented occupancy networks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_categories, gen_out, gen_shading = "lambert";
  std::size_t gen_count = 10, gen_views = 8, gen_resolution = 64, gen_samples = 100000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--categories", gen_categories, "Comma-separated categories (default all)");
  gen->add_option("--count", gen_count, "Objects per category")->check(CLI::PositiveNumber);
  gen->add_option("--views", gen_views, "Rendered views per object")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--shading", gen_shading, "lambert|silhouette|depth");
  gen->add_option("--resolution", gen_resolution, "Image resolution")->check(CLI::PositiveNumber);
  gen->add_option("--samples", gen_samples, "Occupancy samples per object")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* trn = app.add_subcommand("train", "Train one model");
  std::string trn_config, trn_data, trn_category, trn_placement, trn_out;
  std::vector<std::string> trn_set;
  std::size_t trn_steps = 0;
  std::uint64_t trn_seed = 0;
  trn->add_option("--config", trn_config, "key=value config file");
  trn->add_option("--data", trn_data, "Dataset directory or manifest")->required();
  trn->add_option("--category", trn_category, "Restrict to one category");
  trn->add_option("--placement", trn_placement, "none|early|late|all")
      ->check(CLI::IsMember({"none", "early", "late", "all"}));
  trn->add_option("--out", trn_out, "Output directory")->required();
  auto* trn_steps_opt = trn->add_option("--steps", trn_steps, "Training steps")->check(CLI::PositiveNumber);
  auto* trn_seed_opt = trn->add_option("--seed", trn_seed, "Training seed");
  trn->add_option("--set", trn_set, "Override a config key (key=value)");

  auto* rec = app.add_subcommand("reconstruct", "Extract a mesh from one image");
  std::string rec_model, rec_image, rec_out, rec_attention;
  double rec_tau = 0.0;
  std::size_t rec_res = 0, rec_levels = 0;
  rec->add_option("--model", rec_model, "Checkpoint")->required();
  rec->add_option("--image", rec_image, "OAIMG1 image")->required();
  auto* rec_tau_opt = rec->add_option("--tau", rec_tau, "Occupancy threshold")->check(CLI::Range(0.0, 1.0));
  auto* rec_res_opt = rec->add_option("--res", rec_res, "Base grid resolution")->check(CLI::Range(2, 1024));
  auto* rec_levels_opt = rec->add_option("--levels", rec_levels, "Refinement levels")->check(CLI::Range(0, 8));
  rec->add_option("--out", rec_out, "Output mesh (.off or .obj)")->required();
  rec->add_option("--dump-attention", rec_attention, "Write attention maps to this file");

  auto* evl = app.add_subcommand("eval", "Score reconstructions against ground truth");
  std::string evl_pred, evl_model, evl_data, evl_split = "test", evl_out, evl_category, evl_config;
  std::vector<std::string> evl_set;
  std::size_t evl_samples = 0;
  std::uint64_t evl_seed = 0;
  auto* evl_pred_opt = evl->add_option("--pred-dir", evl_pred, "Directory of <object_id>.off meshes");
  auto* evl_model_opt = evl->add_option("--model", evl_model, "Checkpoint to reconstruct with");
  evl_pred_opt->excludes(evl_model_opt);
  evl->add_option("--data", evl_data, "Dataset directory or manifest")->required();
  evl->add_option("--split", evl_split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
  evl->add_option("--category", evl_category, "Restrict to one category");
  evl->add_option("--config", evl_config, "key=value config file");
  evl->add_option("--set", evl_set, "Override a config key (key=value)");
  auto* evl_samples_opt = evl->add_option("--samples", evl_samples, "Samples per metric")->check(CLI::PositiveNumber);
  auto* evl_seed_opt = evl->add_option("--seed", evl_seed, "Metric seed");
  evl->add_option("--out", evl_out, "Output CSV")->required();

  auto* rep = app.add_subcommand("report", "Render metric CSVs as tables");
  std::vector<std::string> rep_runs;
  std::string rep_style = "grid", rep_format = "markdown", rep_out;
  rep->add_option("--run", rep_runs, "label=metrics.csv (or a path, labeled by file stem)")->required();
  rep->add_option("--style", rep_style, "grid|list")->check(CLI::IsMember({"grid", "list"}));
  rep->add_option("--format", rep_format, "markdown|csv")->check(CLI::IsMember({"markdown", "csv"}));
  rep->add_option("--out", rep_out, "Output file (default stdout)");

  auto* ens = app.add_subcommand("ensemble", "Train per-category variants and pick specialists");
  EnsembleOptions ens_options;
  std::size_t ens_steps = 0;
  std::uint64_t ens_seed = 0;
  ens->add_option("--data", ens_options.data, "Dataset directory or manifest")->required();
  ens->add_option("--out", ens_options.out, "Output directory")->required();
  ens->add_option("--config", ens_options.config, "key=value config file");
  ens->add_option("--set", ens_options.overrides, "Override a config key (key=value)");
  ens->add_option("--categories", ens_options.categories, "Comma-separated categories (default all)");
  ens->add_option("--split", ens_options.split, "Split used for selection")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ens->add_option("--eval-split", ens_options.eval_split, "Split scored by the routed ensemble")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ens->add_option("--criterion", ens_options.criterion, "iou|chamfer_l1|nc")
      ->check(CLI::IsMember({"iou", "chamfer_l1", "nc"}));
  auto* ens_steps_opt = ens->add_option("--steps", ens_steps, "Training steps")->check(CLI::PositiveNumber);
  auto* ens_seed_opt = ens->add_option("--seed", ens_seed, "Training seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_categories, gen_count, gen_views, gen_seed, gen_shading, gen_resolution, gen_samples,
                          gen_out, err);

    if (trn->parsed()) {
      RunConfig config = make_run_config(trn_config, trn_set);
      if (!trn_placement.empty()) config.model.encoder.placement = parse_placement(trn_placement);
      if (*trn_steps_opt) config.train.steps = trn_steps;
      if (*trn_seed_opt) config.train.seed = trn_seed;
      config.train.validate();
      const TrainOutcome trained = train_to_disk(config, open_dataset(trn_data), trn_category, trn_out, err);
      out << "best step " << trained.result.best_step << " val " << trained.result.best_val_loss << " -> "
          << trained.checkpoint.string() << "\n";
      return kExitSuccess;
    }

    if (rec->parsed()) {
      const Checkpoint checkpoint = load_checkpoint(rec_model);
      RunConfig config;
      for (const auto& [key, value] : checkpoint.meta.run_config)
        if (key.rfind("extract.", 0) == 0) config.set(key, value);
      if (*rec_tau_opt) config.extraction.tau = rec_tau;
      if (*rec_res_opt) config.extraction.resolution = rec_res;
      if (*rec_levels_opt) config.extraction.levels = rec_levels;
      const Tensor image = read_image(rec_image);
      ExtractionStats stats;
      const Mesh mesh = reconstruct(checkpoint.model, image, config.extraction, &stats);
      const fs::path path = rec_out;
      if (path.extension() == ".obj")
        write_obj(mesh, path);
      else
        write_off(mesh, path);
      if (!rec_attention.empty()) {
        const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
        write_attention(rec_attention, checkpoint.model.encoder().attention_maps(batch));
      }
      out << mesh.vertex_count() << " vertices, " << mesh.face_count() << " faces, " << stats.evaluations
          << " evaluations -> " << path.string() << "\n";
      return kExitSuccess;
    }

    if (evl->parsed()) {
      if (!*evl_pred_opt && !*evl_model_opt) {
        err << "usage error: eval needs --pred-dir or --model\n";
        return kExitUsage;
      }
      RunConfig config = make_run_config(evl_config, evl_set);
      if (*evl_samples_opt) config.metrics.samples = evl_samples;
      if (*evl_seed_opt) config.metrics.seed = evl_seed;
      const DatasetManifest manifest = open_dataset(evl_data);
      const auto objects = objects_for(manifest, parse_split(evl_split), evl_category);
      EvaluationResult evaluated;
      if (*evl_model_opt) {
        const Checkpoint checkpoint = load_checkpoint(evl_model);
        evaluated = evaluate_checkpoint(checkpoint.model, manifest, objects, config);
      } else {
        const fs::path dir = evl_pred;
        const Predictor predict = [&](const ObjectEntry& o) { return read_off(dir / (o.id + ".off")); };
        evaluated = evaluate_objects(manifest, objects, predict, config.metrics);
      }
      write_text(evl_out, metrics_report_csv(evaluated.records, evaluated.report));
      for (const auto& r : evaluated.records)
        for (const auto& e : r.errors) err << "warning: " << r.object_id << ": " << e << "\n";
      out << evaluated.records.size() << " objects, " << evaluated.report.failures << " failures -> " << evl_out
          << "\n";
      return kExitSuccess;
    }

    if (rep->parsed()) {
      std::vector<LabeledReport> runs;
      for (const auto& run : rep_runs) {
        const auto eq = run.find('=');
        const fs::path path = eq == std::string::npos ? run : run.substr(eq + 1);
        const std::string label = eq == std::string::npos ? path.stem().string() : run.substr(0, eq);
        runs.push_back({label, parse_metrics_csv(read_text(path))});
      }
      const ReportFormat format = rep_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
      std::vector<std::string> warnings;
      const std::string table = rep_style == "list" ? render_list(runs, format) : render_grid(runs, format, &warnings);
      for (const auto& w : warnings) err << "warning: " << w << "\n";
      if (rep_out.empty())
        out << table;
      else
        write_text(rep_out, table);
      return kExitSuccess;
    }

    if (ens->parsed()) {
      if (*ens_steps_opt) ens_options.overrides.push_back("train.steps=" + std::to_string(ens_steps));
      if (*ens_seed_opt) ens_options.overrides.push_back("train.seed=" + std::to_string(ens_seed));
      return cmd_ensemble(ens_options, out, err);
    }
  } catch (const ConfigurationError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDivergedError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace occattn
