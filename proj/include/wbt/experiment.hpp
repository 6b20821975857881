#pragma once

// Seed grids, variant ablations and their JSON / CSV reports.

#include "wbt/checkpoint.hpp"
#include "wbt/config.hpp"
#include "wbt/metrics.hpp"
#include "wbt/trainer.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace wbt {

/// FNV-1a over partition sizes, IDs, features and events, as 16 hex digits.
inline std::string dataset_hash(const BipartiteGraph& g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) { detail::fnv1a(h, p, n); };
  const std::uint64_t sizes[2] = {g.n_u, g.n_v};
  mix(sizes, sizeof sizes);
  for (const IdMap* ids : {&g.u_ids, &g.v_ids})
    for (const std::string& id : ids->ids()) mix(id.data(), id.size() + 1);
  for (const Matrix* x : {&g.x_u, &g.x_v}) {
    const std::int64_t shape[2] = {x->rows(), x->cols()};
    mix(shape, sizeof shape);
    mix(x->data(), sizeof(double) * static_cast<std::size_t>(x->size()));
  }
  for (const Edge& e : g.edges) {
    const std::uint64_t ends[2] = {e.u, e.v};
    mix(ends, sizeof ends);
    mix(&e.weight, sizeof e.weight);
    mix(&e.timestamp, sizeof e.timestamp);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

/// Outcome of one seed: a result, or the error that aborted it.
struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<RunResult> result;
  std::string error;
  std::string error_kind;  // "validation" or "runtime"
  double wall_seconds = 0.0;
};

struct GridJob {
  VariantConfig cfg;
  std::uint64_t seed = 0;
};

/// Runs every job, `workers` at a time. A failing job records its error and
/// does not stop the others. Output order matches `jobs`.
inline std::vector<SeedOutcome> run_jobs(const BipartiteGraph& graph, const std::vector<GridJob>& jobs,
                                         unsigned workers = 1) {
  std::vector<SeedOutcome> out(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      SeedOutcome& o = out[i];
      o.seed = jobs[i].seed;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        o.result = run_pipeline(graph, jobs[i].cfg, jobs[i].seed);
      } catch (const ValidationError& e) {
        o.error = e.what();
        o.error_kind = "validation";
      } catch (const std::exception& e) {
        o.error = e.what();
        o.error_kind = "runtime";
      }
      o.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size()))));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

inline std::vector<SeedOutcome> run_seeds(const BipartiteGraph& graph, const VariantConfig& cfg,
                                          const std::vector<std::uint64_t>& seeds, unsigned workers = 1) {
  std::vector<GridJob> jobs;
  for (std::uint64_t s : seeds) jobs.push_back({cfg, s});
  return run_jobs(graph, jobs, workers);
}

/// Aggregate over the successful seeds, or nullopt with fewer than two.
inline std::optional<AggregateMap> aggregate_outcomes(const std::vector<SeedOutcome>& outcomes) {
  std::vector<MetricMap> ok;
  for (const SeedOutcome& o : outcomes)
    if (o.result) ok.push_back(o.result->eval.metrics);
  if (ok.size() < 2) return std::nullopt;
  return aggregate(ok);
}

inline nlohmann::json metrics_json(const MetricMap& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

inline nlohmann::json aggregate_json(const AggregateMap& a) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : a) j[k] = {{"mean", v.mean}, {"std", v.std}};
  return j;
}

/// Deterministic metric report for one variant: no wall-clock fields.
inline nlohmann::json report_json(const VariantConfig& cfg, const std::string& data_hash,
                                  const std::vector<SeedOutcome>& outcomes) {
  nlohmann::json j;
  j["variant"] = cfg.variant_name();
  j["dataset_hash"] = data_hash;
  j["config"] = config_to_json(cfg);
  j["seeds"] = nlohmann::json::array();
  j["per_seed"] = nlohmann::json::array();
  for (const SeedOutcome& o : outcomes) {
    j["seeds"].push_back(o.seed);
    nlohmann::json s;
    s["seed"] = o.seed;
    if (o.result) {
      const RunResult& r = *o.result;
      s["metrics"] = metrics_json(r.eval.metrics);
      s["flags"] = r.eval.flags;
      s["best_epoch"] = r.decoder.best_epoch;
      s["final_pretrain_loss"] = r.pretrain_losses.empty() ? 0.0 : r.pretrain_losses.back();
      s["test_positives"] = r.eval.test_positives;
      s["test_negatives"] = r.eval.test_negatives;
      s["encoder_frozen"] = r.state_checksum_before_decoder == r.state_checksum_after_decoder;
    } else {
      s["error"] = o.error;
      s["error_kind"] = o.error_kind;
    }
    j["per_seed"].push_back(std::move(s));
  }
  const auto agg = aggregate_outcomes(outcomes);
  j["aggregate"] = agg ? aggregate_json(*agg) : nlohmann::json(nullptr);
  j["aggregate_seed_count"] = agg ? std::count_if(outcomes.begin(), outcomes.end(),
                                                  [](const SeedOutcome& o) { return o.result.has_value(); })
                                  : 0;
  return j;
}

/// Everything needed to reproduce one seed, plus its traces and timing.
inline nlohmann::json manifest_json(const VariantConfig& cfg, const std::string& data_hash, const SeedOutcome& o) {
  nlohmann::json j;
  j["config"] = config_to_json(cfg);
  j["seed"] = o.seed;
  j["dataset_hash"] = data_hash;
  if (o.result) {
    const RunResult& r = *o.result;
    j["split_warnings"] = r.split_warnings;
    j["pretrain_losses"] = r.pretrain_losses;
    j["decoder"] = {{"train_losses", r.decoder.train_losses},
                    {"monitor_hits", r.decoder.monitor_hits},
                    {"best_epoch", r.decoder.best_epoch},
                    {"epochs_run", r.decoder.epochs_run},
                    {"best_monitor_hits", r.decoder.best_monitor_hits}};
    j["metrics"] = metrics_json(r.eval.metrics);
    j["flags"] = r.eval.flags;
    j["checksums"] = {{"state_before_decoder", hex64(r.state_checksum_before_decoder)},
                      {"state_after_decoder", hex64(r.state_checksum_after_decoder)},
                      {"decoder", hex64(checksum(r.decoder.params))}};
  } else {
    j["error"] = o.error;
    j["error_kind"] = o.error_kind;
  }
  j["timing"] = {{"wall_seconds", o.wall_seconds}};
  return j;
}

inline std::string format_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", m.mean, m.std);
  return buf;
}

inline std::string table_label(const VariantConfig& cfg) {
  return std::string("WBT-BGRL (") + (cfg.wp ? "WP" : "NWP") + ", " + (cfg.wb ? "WB" : "NWB") + ")";
}

/// One CSV row per variant: model label then "mean ± std" per metric.
inline std::string results_table_csv(const std::vector<std::pair<VariantConfig, std::optional<AggregateMap>>>& rows,
                                     std::size_t hits_k) {
  std::string out = "model";
  const auto cols = metric_columns(hits_k);
  for (const std::string& c : cols) out += "," + c;
  out += "\n";
  for (const auto& [cfg, agg] : rows) {
    out += table_label(cfg);
    for (const std::string& c : cols) out += "," + (agg && agg->contains(c) ? format_mean_std(agg->at(c)) : "n/a");
    out += "\n";
  }
  return out;
}

/// The four (wp, wb) combinations in table order.
inline std::vector<VariantConfig> variant_grid(const VariantConfig& base) {
  std::vector<VariantConfig> out;
  for (bool wp : {true, false})
    for (bool wb : {true, false}) {
      VariantConfig c = base;
      c.wp = wp;
      c.wb = wb;
      out.push_back(c);
    }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace wbt
