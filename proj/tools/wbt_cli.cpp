// wbt: command-line entry points for the WBT-BGRL pipeline.
//
//   wbt gen-synth --out data/planted --blocks 10 --weight_skew 50
//   wbt run --data data/planted --out runs/a --seeds 42,43,44,45,46
//   wbt ablate --data data/planted --out runs/ablation
//   wbt eval-only --data data/planted --checkpoint runs/a/seed_42/checkpoint.txt
//   wbt inspect-checkpoint runs/a/seed_42/checkpoint.txt

#include "wbt/wbt.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct DataOptions {
  std::string dir;
  std::string edges;
  std::string u_features;
  std::string v_features;

  void add_to(CLI::App& app) {
    app.add_option("--data", dir, "Directory with edges.csv, u_features.csv, v_features.csv");
    app.add_option("--edges", edges, "Edge CSV (u_id,v_id,weight,timestamp)");
    app.add_option("--u-features", u_features, "U-partition feature CSV");
    app.add_option("--v-features", v_features, "V-partition feature CSV");
  }

  wbt::BipartiteGraph load() const {
    wbt::DatasetPaths paths;
    if (!dir.empty()) paths = wbt::DatasetPaths::in(dir);
    if (!edges.empty()) paths.edges = edges;
    if (!u_features.empty()) paths.u_features = u_features;
    if (!v_features.empty()) paths.v_features = v_features;
    if (paths.edges.empty() || paths.u_features.empty() || paths.v_features.empty())
      throw wbt::ValidationError("dataset not specified: pass --data or all of --edges/--u-features/--v-features");
    return wbt::load_graph(paths.edges.string(), paths.u_features.string(), paths.v_features.string());
  }
};

/// One string option per VariantConfig field, plus --config.
struct VariantOptions {
  std::string config_file;
  std::map<std::string, std::string> values;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_file, "Typed key-value config file");
    for (const wbt::ConfigField& f : wbt::config_fields()) {
      std::string& slot = values[f.name];
      if (f.type == "bool")
        app.add_flag("--" + f.name, slot, "bool (--" + f.name + " or --" + f.name + "=false)");
      else
        app.add_option("--" + f.name, slot, f.type);
    }
  }

  /// defaults < `base` < config file < flags.
  wbt::VariantConfig resolve(wbt::VariantConfig base = {}) const {
    if (!config_file.empty()) wbt::apply_config_file(base, config_file);
    for (const auto& [name, value] : values)
      if (!value.empty()) wbt::set_config_value(base, name, value);
    base.validate();
    return base;
  }
};

struct SeedOptions {
  std::vector<std::uint64_t> seeds{42, 43, 44, 45, 46};
  std::uint64_t seed = 0;
  bool single = false;

  void add_to(CLI::App& app) {
    app.add_option("--seeds", seeds, "Comma-separated seed list")->delimiter(',');
    app.add_option("--seed", seed, "Single root seed (overrides --seeds)")->each([this](const std::string&) {
      single = true;
    });
  }

  std::vector<std::uint64_t> list() const {
    if (single) return {seed};
    if (seeds.empty()) throw wbt::ValidationError("seed list is empty");
    return seeds;
  }
};

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw wbt::ValidationError("output directory not writable: " + dir.string());
}

std::map<std::string, double> checkpoint_meta_for(const wbt::VariantConfig& cfg, std::uint64_t seed) {
  return {{"seed", static_cast<double>(seed)},
          {"wp", cfg.wp ? 1.0 : 0.0},
          {"wb", cfg.wb ? 1.0 : 0.0},
          {"relu_on_output", cfg.relu_on_output ? 1.0 : 0.0}};
}

/// Writes the per-seed directories and the variant report; returns the report.
nlohmann::json write_variant_outputs(const fs::path& dir, const wbt::VariantConfig& cfg, const std::string& hash,
                                     const std::vector<wbt::SeedOutcome>& outcomes) {
  prepare_out_dir(dir);
  wbt::write_text(dir / "config.txt", wbt::config_to_text(cfg));
  for (const wbt::SeedOutcome& o : outcomes) {
    const fs::path seed_dir = dir / ("seed_" + std::to_string(o.seed));
    prepare_out_dir(seed_dir);
    wbt::write_text(seed_dir / "manifest.json", wbt::manifest_json(cfg, hash, o).dump(2) + "\n");
    if (o.result)
      wbt::save_checkpoint(wbt::to_checkpoint(o.result->state, &o.result->decoder.params, checkpoint_meta_for(cfg, o.seed)),
                           (seed_dir / "checkpoint.txt").string());
  }
  nlohmann::json report = wbt::report_json(cfg, hash, outcomes);
  wbt::write_text(dir / "report.json", report.dump(2) + "\n");
  return report;
}

int outcome_exit_code(const std::vector<wbt::SeedOutcome>& outcomes) {
  int code = kExitOk;
  for (const wbt::SeedOutcome& o : outcomes) {
    if (o.result) continue;
    std::cerr << "seed " << o.seed << " failed (" << o.error_kind << "): " << o.error << "\n";
    code = std::max(code, o.error_kind == "validation" ? kExitValidation : kExitRuntime);
  }
  return code;
}

void print_summary(const std::string& label, const nlohmann::json& report) {
  std::cout << label;
  if (report["aggregate"].is_null()) {
    for (const auto& s : report["per_seed"])
      if (s.contains("metrics")) std::cout << "  seed " << s["seed"] << " roc_auc=" << s["metrics"]["roc_auc"];
  } else {
    for (const auto& [k, v] : report["aggregate"].items())
      std::cout << "  " << k << "=" << wbt::format_mean_std({v["mean"].get<double>(), v["std"].get<double>()});
  }
  std::cout << "\n";
}

int cmd_gen_synth(const wbt::SyntheticParams& p, const std::string& out) {
  const wbt::SyntheticDataset ds = wbt::generate_synthetic(p);
  const wbt::DatasetPaths paths = wbt::write_dataset(ds.graph, out);
  double max_w = 0.0;
  for (const wbt::Edge& e : ds.graph.edges) max_w = std::max(max_w, e.weight);
  std::cout << "wrote " << ds.graph.edges.size() << " edges (max weight " << max_w << ") to " << paths.edges.string()
            << "\n";
  return kExitOk;
}

int cmd_run(const DataOptions& data, const VariantOptions& vopt, const SeedOptions& sopt, unsigned workers,
            const std::string& out) {
  const wbt::VariantConfig cfg = vopt.resolve();
  const auto seeds = sopt.list();
  const wbt::BipartiteGraph graph = data.load();
  prepare_out_dir(out);
  const std::string hash = wbt::dataset_hash(graph);
  const auto outcomes = wbt::run_seeds(graph, cfg, seeds, workers);
  const nlohmann::json report = write_variant_outputs(out, cfg, hash, outcomes);
  const auto agg = wbt::aggregate_outcomes(outcomes);
  wbt::write_text(fs::path(out) / "table.csv", wbt::results_table_csv({{cfg, agg}}, cfg.hits_k));
  print_summary(cfg.variant_name(), report);
  return outcome_exit_code(outcomes);
}

int cmd_ablate(const DataOptions& data, const VariantOptions& vopt, const SeedOptions& sopt, unsigned workers,
               const std::string& out) {
  const wbt::VariantConfig base = vopt.resolve();
  const auto seeds = sopt.list();
  const wbt::BipartiteGraph graph = data.load();
  prepare_out_dir(out);
  const std::string hash = wbt::dataset_hash(graph);
  const auto variants = wbt::variant_grid(base);

  std::vector<wbt::GridJob> jobs;
  for (const wbt::VariantConfig& v : variants)
    for (std::uint64_t s : seeds) jobs.push_back({v, s});
  const auto all = wbt::run_jobs(graph, jobs, workers);

  std::vector<std::pair<wbt::VariantConfig, std::optional<wbt::AggregateMap>>> rows;
  nlohmann::json summary;
  summary["dataset_hash"] = hash;
  summary["seeds"] = seeds;
  summary["variants"] = nlohmann::json::object();
  std::vector<double> mean_auc;
  int code = kExitOk;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const std::vector<wbt::SeedOutcome> outcomes(all.begin() + static_cast<std::ptrdiff_t>(i * seeds.size()),
                                                 all.begin() + static_cast<std::ptrdiff_t>((i + 1) * seeds.size()));
    const nlohmann::json report =
        write_variant_outputs(fs::path(out) / variants[i].variant_name(), variants[i], hash, outcomes);
    const auto agg = wbt::aggregate_outcomes(outcomes);
    rows.emplace_back(variants[i], agg);
    summary["variants"][variants[i].variant_name()] = report["aggregate"];
    if (agg && agg->contains("roc_auc")) mean_auc.push_back(agg->at("roc_auc").mean);
    print_summary(variants[i].variant_name(), report);
    code = std::max(code, outcome_exit_code(outcomes));
  }
  double gap = 0.0;
  for (double a : mean_auc)
    for (double b : mean_auc) gap = std::max(gap, a - b);
  summary["max_pairwise_roc_auc_gap"] = mean_auc.size() == variants.size() ? nlohmann::json(gap) : nlohmann::json(nullptr);
  wbt::write_text(fs::path(out) / "ablation.csv", wbt::results_table_csv(rows, base.hits_k));
  wbt::write_text(fs::path(out) / "ablation.json", summary.dump(2) + "\n");
  std::cout << "max pairwise ROC-AUC gap: " << summary["max_pairwise_roc_auc_gap"] << "\n";
  return code;
}

int cmd_eval_only(const DataOptions& data, const VariantOptions& vopt, const SeedOptions& sopt,
                  const std::string& checkpoint, const std::string& out) {
  const wbt::Checkpoint ckpt = wbt::load_checkpoint(checkpoint);
  wbt::VariantConfig base;
  base.wp = wbt::checkpoint_meta(ckpt, "wp").value_or(0.0) != 0.0;
  base.wb = wbt::checkpoint_meta(ckpt, "wb").value_or(0.0) != 0.0;
  base.relu_on_output = wbt::checkpoint_meta(ckpt, "relu_on_output").value_or(0.0) != 0.0;
  const wbt::VariantConfig cfg = vopt.resolve(base);
  std::uint64_t seed = sopt.single ? sopt.seed
                                   : static_cast<std::uint64_t>(wbt::checkpoint_meta(ckpt, "seed").value_or(42.0));
  const wbt::ModelState state = wbt::state_from_checkpoint(ckpt);
  const wbt::DecoderParams dec = wbt::decoder_from_checkpoint(ckpt);
  const wbt::BipartiteGraph graph = data.load();
  const wbt::TemporalSplit split = wbt::chronological_split(graph, cfg.fractions);
  const wbt::EvalEntry eval = wbt::evaluate_final(state, split, dec, cfg, seed);
  nlohmann::json j;
  j["seed"] = seed;
  j["variant"] = cfg.variant_name();
  j["dataset_hash"] = wbt::dataset_hash(graph);
  j["metrics"] = wbt::metrics_json(eval.metrics);
  j["flags"] = eval.flags;
  j["test_positives"] = eval.test_positives;
  j["test_negatives"] = eval.test_negatives;
  if (!out.empty()) {
    prepare_out_dir(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
    wbt::write_text(out, j.dump(2) + "\n");
  }
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const wbt::Checkpoint ckpt = wbt::load_checkpoint(path);
  std::size_t scalars = 0;
  for (const auto& [name, m] : ckpt) {
    std::cout << name << "  " << m.rows() << "x" << m.cols();
    if (name.rfind("meta.", 0) == 0) std::cout << "  = " << wbt::detail::format_double(m(0, 0));
    std::cout << "\n";
    scalars += static_cast<std::size_t>(m.size());
  }
  std::cout << "entries " << ckpt.size() << ", scalars " << scalars << "\n";
  const wbt::ModelState state = wbt::state_from_checkpoint(ckpt);
  std::cout << "state checksum " << wbt::hex64(wbt::checksum(state)) << "\n";
  if (ckpt.contains("decoder.layers.0.weight"))
    std::cout << "decoder checksum " << wbt::hex64(wbt::checksum(wbt::decoder_from_checkpoint(ckpt))) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WBT-BGRL: weighted bipartite self-supervised pretraining and link prediction"};
  app.require_subcommand(1);

  wbt::SyntheticParams synth;
  std::string synth_out;
  CLI::App* gen = app.add_subcommand("gen-synth", "Generate a planted-block synthetic dataset");
  gen->add_option("--out", synth_out, "Output directory")->required();
  gen->add_option("--n_u", synth.n_u);
  gen->add_option("--n_v", synth.n_v);
  gen->add_option("--n_edges", synth.n_edges);
  gen->add_option("--weight_skew", synth.weight_skew, "Weight cap (1 = unweighted)");
  gen->add_option("--weight_exponent", synth.weight_exponent);
  gen->add_option("--blocks", synth.blocks, "Number of planted blocks (0 = no structure)");
  gen->add_option("--intra_prob", synth.intra_prob);
  gen->add_option("--time_span", synth.time_span);
  gen->add_option("--feature_dim", synth.feature_dim);
  gen->add_option("--feature_signal", synth.feature_signal);
  gen->add_option("--seed", synth.seed);

  DataOptions run_data, ablate_data, eval_data;
  VariantOptions run_variant, ablate_variant, eval_variant;
  SeedOptions run_seeds, ablate_seeds, eval_seeds;
  unsigned run_workers = 1, ablate_workers = 1;
  std::string run_out, ablate_out, eval_out, eval_ckpt, inspect_path;

  CLI::App* run = app.add_subcommand("run", "Run the pipeline for every seed");
  run_data.add_to(*run);
  run_variant.add_to(*run);
  run_seeds.add_to(*run);
  run->add_option("--workers", run_workers, "Parallel seed workers")->check(CLI::PositiveNumber);
  run->add_option("--out", run_out, "Output directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "Run all four (wp, wb) variants over the seeds");
  ablate_data.add_to(*ablate);
  ablate_variant.add_to(*ablate);
  ablate_seeds.add_to(*ablate);
  ablate->add_option("--workers", ablate_workers, "Parallel workers")->check(CLI::PositiveNumber);
  ablate->add_option("--out", ablate_out, "Output directory")->required();

  CLI::App* eval = app.add_subcommand("eval-only", "Evaluate a saved checkpoint on the test era");
  eval_data.add_to(*eval);
  eval_variant.add_to(*eval);
  eval_seeds.add_to(*eval);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--out", eval_out, "Write the metric JSON here");

  CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "List checkpoint tensors and checksums");
  inspect->add_option("checkpoint", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen_synth(synth, synth_out);
    if (*run) return cmd_run(run_data, run_variant, run_seeds, run_workers, run_out);
    if (*ablate) return cmd_ablate(ablate_data, ablate_variant, ablate_seeds, ablate_workers, ablate_out);
    if (*eval) return cmd_eval_only(eval_data, eval_variant, eval_seeds, eval_ckpt, eval_out);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const wbt::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
