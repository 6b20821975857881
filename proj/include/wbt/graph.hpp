#pragma once

#include "wbt/error.hpp"
#include "wbt/random.hpp"
#include "wbt/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace wbt {

/// One timestamped interaction event between a U node and a V node.
struct Edge {
  Index u = 0;
  Index v = 0;
  double weight = 1.0;
  std::int64_t timestamp = 0;
};

/// A (u, v) pair with its modeling weight after duplicate events are merged.
struct WeightedPair {
  Index u = 0;
  Index v = 0;
  double weight = 1.0;
};

/// Dense mapping from opaque external IDs to 0-based indices. The index one past
/// the last assigned ID is reserved for the partition's UNK token.
class IdMap {
 public:
  Index add(const std::string& id) {
    auto [it, inserted] = index_.try_emplace(id, ids_.size());
    if (inserted) ids_.push_back(id);
    return it->second;
  }

  std::optional<Index> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Index lookup_or_unk(const std::string& id) const { return find(id).value_or(unk()); }

  Index unk() const noexcept { return ids_.size(); }
  Index size() const noexcept { return ids_.size(); }
  const std::string& id(Index i) const { return ids_.at(i); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> index_;
};

/// Two node partitions with features and a timestamped weighted event list.
struct BipartiteGraph {
  Index n_u = 0;
  Index n_v = 0;
  Matrix x_u;
  Matrix x_v;
  std::vector<Edge> edges;
  IdMap u_ids;
  IdMap v_ids;

  void validate() const {
    if (static_cast<Index>(x_u.rows()) != n_u || static_cast<Index>(x_v.rows()) != n_v)
      throw ValidationError("feature matrix row count does not match partition size");
    if (!x_u.allFinite() || !x_v.allFinite())
      throw ValidationError("feature matrices contain non-finite values");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const Edge& e = edges[i];
      if (e.u >= n_u || e.v >= n_v)
        throw ValidationError("edge " + std::to_string(i) + " has an endpoint out of range");
      if (!(e.weight > 0.0) || !std::isfinite(e.weight))
        throw ValidationError("edge " + std::to_string(i) + " has non-positive weight");
    }
  }

  /// Unique (u, v) pairs in first-seen order. With use_weights the pair weight
  /// is the sum of its event weights (the interaction frequency for unit
  /// events); otherwise every pair has weight 1.
  std::vector<WeightedPair> weighted_pairs(bool use_weights) const {
    return merge_events(edges, use_weights);
  }

  static std::vector<WeightedPair> merge_events(const std::vector<Edge>& events, bool use_weights) {
    std::vector<WeightedPair> out;
    std::unordered_map<std::uint64_t, std::size_t> slot;
    slot.reserve(events.size() * 2);
    for (const Edge& e : events) {
      auto [it, inserted] = slot.try_emplace(pair_key(e.u, e.v), out.size());
      if (inserted) {
        out.push_back({e.u, e.v, use_weights ? e.weight : 1.0});
      } else if (use_weights) {
        out[it->second].weight += e.weight;
      }
    }
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

struct FeatureTable {
  std::unordered_map<std::string, std::vector<double>> rows;
  std::vector<std::string> order;
  std::size_t dim = 0;
};

inline FeatureTable read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open feature file: " + path);
  FeatureTable table;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cols = split_csv(line);
    if (header) {
      header = false;
      if (cols.empty() || cols[0] != "id") throw ParseError(path, lineno, "expected header 'id,f1,...,fd'");
      table.dim = cols.size() - 1;
      continue;
    }
    if (cols.size() != table.dim + 1)
      throw ParseError(path, lineno, "expected " + std::to_string(table.dim + 1) + " columns, got " +
                                         std::to_string(cols.size()));
    if (cols[0].empty()) throw ParseError(path, lineno, "empty id");
    std::vector<double> values(table.dim);
    for (std::size_t j = 0; j < table.dim; ++j) {
      if (!parse_number(cols[j + 1], values[j]) || !std::isfinite(values[j]))
        throw ParseError(path, lineno, "invalid feature value '" + std::string(cols[j + 1]) + "'");
    }
    std::string id(cols[0]);
    if (!table.rows.emplace(id, std::move(values)).second)
      throw ParseError(path, lineno, "duplicate feature id '" + id + "'");
    table.order.push_back(std::move(id));
  }
  if (header) throw ValidationError("feature file is empty: " + path);
  return table;
}

inline Matrix assemble_features(const FeatureTable& table, IdMap& ids, const std::string& path) {
  for (const std::string& id : table.order) ids.add(id);
  Matrix x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(table.dim));
  for (Index i = 0; i < ids.size(); ++i) {
    auto it = table.rows.find(ids.id(i));
    if (it == table.rows.end())
      throw ValidationError("node '" + ids.id(i) + "' has no row in " + path);
    for (std::size_t j = 0; j < table.dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->second[j];
  }
  return x;
}

}  // namespace detail

/// Reads an edge CSV (`u_id,v_id,weight,timestamp`) and two feature CSVs
/// (`id,f1,...,fd`). Indices follow first appearance in the edge file; nodes
/// that only appear in a feature file are appended as isolated nodes.
inline BipartiteGraph load_graph(const std::string& edge_file, const std::string& u_feature_file,
                                 const std::string& v_feature_file) {
  std::ifstream in(edge_file);
  if (!in) throw ValidationError("cannot open edge file: " + edge_file);

  BipartiteGraph g;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cols = detail::split_csv(line);
    if (header) {
      header = false;
      if (cols.size() != 4 || cols[0] != "u_id" || cols[1] != "v_id" || cols[2] != "weight" || cols[3] != "timestamp")
        throw ParseError(edge_file, lineno, "expected header 'u_id,v_id,weight,timestamp'");
      continue;
    }
    if (cols.size() != 4)
      throw ParseError(edge_file, lineno, "expected 4 columns, got " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty()) throw ParseError(edge_file, lineno, "empty node id");
    Edge e;
    if (!detail::parse_number(cols[2], e.weight) || !std::isfinite(e.weight))
      throw ParseError(edge_file, lineno, "invalid weight '" + std::string(cols[2]) + "'");
    if (!detail::parse_number(cols[3], e.timestamp))
      throw ParseError(edge_file, lineno, "invalid timestamp '" + std::string(cols[3]) + "'");
    if (e.weight <= 0.0)
      throw ValidationError(edge_file + ":" + std::to_string(lineno) + ": weight must be positive");
    e.u = g.u_ids.add(std::string(cols[0]));
    e.v = g.v_ids.add(std::string(cols[1]));
    g.edges.push_back(e);
  }
  if (g.edges.empty()) throw ValidationError("no edges in " + edge_file);

  g.x_u = detail::assemble_features(detail::read_features(u_feature_file), g.u_ids, u_feature_file);
  g.x_v = detail::assemble_features(detail::read_features(v_feature_file), g.v_ids, v_feature_file);
  g.n_u = g.u_ids.size();
  g.n_v = g.v_ids.size();
  g.validate();
  return g;
}

/// Marks which nodes of each partition touch at least one of the given events.
inline std::pair<std::vector<bool>, std::vector<bool>> seen_nodes(const std::vector<Edge>& events, Index n_u,
                                                                  Index n_v) {
  std::vector<bool> su(n_u, false);
  std::vector<bool> sv(n_v, false);
  for (const Edge& e : events) {
    su[e.u] = true;
    sv[e.v] = true;
  }
  return {std::move(su), std::move(sv)};
}

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Chronological train/val/test partition of the event list.
///
/// `train` keeps every node and feature row of the source graph but only the
/// train-era events, so an encoder can be applied to it directly. Nodes with
/// no train-era event are "unseen" and are served by the UNK embedding.
struct TemporalSplit {
  BipartiteGraph train;
  std::vector<Edge> val_edges;
  std::vector<Edge> test_edges;
  std::vector<bool> train_known_u;
  std::vector<bool> train_known_v;
  std::vector<std::string> warnings;

  const IdMap& u_ids() const noexcept { return train.u_ids; }
  const IdMap& v_ids() const noexcept { return train.v_ids; }

  /// Graph over train events, optionally extended with the val era.
  BipartiteGraph history(bool include_val) const {
    BipartiteGraph g = train;
    if (include_val) g.edges.insert(g.edges.end(), val_edges.begin(), val_edges.end());
    return g;
  }
};

inline TemporalSplit chronological_split(const BipartiteGraph& g, SplitFractions fractions = {}) {
  g.validate();
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9 || fractions.train <= 0 || fractions.val <= 0 || fractions.test <= 0)
    throw ValidationError("split fractions must be positive and sum to 1");
  const std::size_t n = g.edges.size();
  if (n < 3) throw ValidationError("need at least 3 edges to form train/val/test splits, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return g.edges[a].timestamp < g.edges[b].timestamp; });

  const auto dn = static_cast<double>(n);
  std::size_t b1 = static_cast<std::size_t>(std::llround(fractions.train * dn));
  b1 = std::clamp<std::size_t>(b1, 1, n - 2);
  std::size_t b2 = static_cast<std::size_t>(std::llround((fractions.train + fractions.val) * dn));
  b2 = std::clamp<std::size_t>(b2, b1 + 1, n - 1);

  TemporalSplit split;
  split.train.n_u = g.n_u;
  split.train.n_v = g.n_v;
  split.train.x_u = g.x_u;
  split.train.x_v = g.x_v;
  split.train.u_ids = g.u_ids;
  split.train.v_ids = g.v_ids;
  for (std::size_t i = 0; i < n; ++i) {
    const Edge& e = g.edges[order[i]];
    if (i < b1)
      split.train.edges.push_back(e);
    else if (i < b2)
      split.val_edges.push_back(e);
    else
      split.test_edges.push_back(e);
  }
  auto tied = [&](std::size_t boundary) {
    return g.edges[order[boundary - 1]].timestamp == g.edges[order[boundary]].timestamp;
  };
  if (tied(b1)) split.warnings.push_back("timestamp tie across the train/val boundary; split by input order");
  if (tied(b2)) split.warnings.push_back("timestamp tie across the val/test boundary; split by input order");
  std::tie(split.train_known_u, split.train_known_v) = seen_nodes(split.train.edges, g.n_u, g.n_v);
  return split;
}

/// Sampled non-edges. `provenance` names the eras whose pairs were excluded.
struct NegativeSet {
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<std::string> provenance;
};

/// Set of (u, v) keys over every era of a split.
inline std::unordered_set<std::uint64_t> all_era_pairs(const TemporalSplit& split) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(2 * (split.train.edges.size() + split.val_edges.size() + split.test_edges.size()));
  for (const auto* era : {&split.train.edges, &split.val_edges, &split.test_edges})
    for (const Edge& e : *era) seen.insert(pair_key(e.u, e.v));
  return seen;
}

/// Draws `count` distinct pairs uniformly from the U x V complement of
/// `excluded`. Dense complements are enumerated; sparse ones use rejection.
inline std::vector<std::pair<Index, Index>> sample_complement(Index n_u, Index n_v,
                                                              const std::unordered_set<std::uint64_t>& excluded,
                                                              std::size_t count, std::uint64_t seed) {
  const std::uint64_t total = static_cast<std::uint64_t>(n_u) * n_v;
  const std::uint64_t free = total - excluded.size();
  if (count > free)
    throw ValidationError("bipartite complement too small: requested " + std::to_string(count) +
                          " negatives, maximum achievable is " + std::to_string(free));
  Rng rng(seed);
  std::vector<std::pair<Index, Index>> out;
  out.reserve(count);
  if (count == 0) return out;

  if (free <= 4 * static_cast<std::uint64_t>(count) || total <= 4096) {
    std::vector<std::pair<Index, Index>> pool;
    pool.reserve(free);
    for (Index u = 0; u < n_u; ++u)
      for (Index v = 0; v < n_v; ++v)
        if (!excluded.contains(pair_key(u, v))) pool.emplace_back(u, v);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::unordered_set<std::uint64_t> taken;
  taken.reserve(2 * count);
  while (out.size() < count) {
    const Index u = static_cast<Index>(rng.below(n_u));
    const Index v = static_cast<Index>(rng.below(n_v));
    const std::uint64_t k = pair_key(u, v);
    if (excluded.contains(k) || !taken.insert(k).second) continue;
    out.emplace_back(u, v);
  }
  return out;
}

/// Negatives uniform over the complement of train, val and test pairs.
inline NegativeSet sample_negatives(const TemporalSplit& split, std::size_t count, std::uint64_t rng_seed) {
  if (count == 0) throw ValidationError("negative count must be positive");
  NegativeSet out;
  out.pairs = sample_complement(split.train.n_u, split.train.n_v, all_era_pairs(split), count, rng_seed);
  out.provenance = {"train", "val", "test"};
  return out;
}

/// Symmetrically normalized adjacency D^{-1/2}(A + I)D^{-1/2} over the stacked
/// index space [U; V], with A = [0, W; W^T, 0]. Duplicate pairs are merged
/// (weights summed when use_weights, otherwise collapsed to 1).
inline SparseMatrix build_weighted_adjacency(Index n_u, Index n_v, const std::vector<WeightedPair>& pairs,
                                             bool use_weights) {
  std::vector<WeightedPair> merged;
  {
    std::unordered_map<std::uint64_t, std::size_t> slot;
    slot.reserve(pairs.size() * 2);
    for (const WeightedPair& p : pairs) {
      if (p.u >= n_u || p.v >= n_v) throw ValidationError("adjacency pair out of range");
      const double w = use_weights ? p.weight : 1.0;
      if (!(w > 0.0)) throw ValidationError("adjacency weight must be positive");
      auto [it, inserted] = slot.try_emplace(pair_key(p.u, p.v), merged.size());
      if (inserted)
        merged.push_back({p.u, p.v, w});
      else if (use_weights)
        merged[it->second].weight += w;
    }
  }

  const Index n = n_u + n_v;
  std::vector<double> degree(n, 1.0);
  for (const WeightedPair& p : merged) {
    degree[p.u] += p.weight;
    degree[n_u + p.v] += p.weight;
  }
  std::vector<double> inv_sqrt(n);
  for (Index i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);

  using Triplet = Eigen::Triplet<double, std::int64_t>;
  std::vector<Triplet> triplets;
  triplets.reserve(n + 2 * merged.size());
  for (Index i = 0; i < n; ++i)
    triplets.emplace_back(static_cast<std::int64_t>(i), static_cast<std::int64_t>(i), inv_sqrt[i] * inv_sqrt[i]);
  for (const WeightedPair& p : merged) {
    const Index a = p.u;
    const Index b = n_u + p.v;
    const double value = p.weight * inv_sqrt[a] * inv_sqrt[b];
    triplets.emplace_back(static_cast<std::int64_t>(a), static_cast<std::int64_t>(b), value);
    triplets.emplace_back(static_cast<std::int64_t>(b), static_cast<std::int64_t>(a), value);
  }
  SparseMatrix adj(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  adj.setFromTriplets(triplets.begin(), triplets.end());
  return adj;
}

inline SparseMatrix build_weighted_adjacency(const BipartiteGraph& g, bool use_weights) {
  g.validate();
  return build_weighted_adjacency(g.n_u, g.n_v, g.weighted_pairs(use_weights), use_weights);
}

}  // namespace wbt
