#pragma once

// Planted-block bipartite graph generator with heavy-tailed integer weights,
// used as a stand-in for interaction datasets with community structure.

#include "wbt/error.hpp"
#include "wbt/graph.hpp"
#include "wbt/random.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace wbt {

struct SyntheticParams {
  Index n_u = 200;
  Index n_v = 300;
  Index n_edges = 4000;
  double weight_skew = 1.0;   // weight cap; 1 gives an unweighted graph
  double weight_exponent = 2.0;  // Pareto tail exponent of the weight draw
  Index blocks = 10;          // 0 disables the planted structure
  double intra_prob = 0.95;   // share of edges placed inside a block
  std::int64_t time_span = 1000;
  Index feature_dim = 16;
  double feature_signal = 1.0;  // scale of the per-block feature centroid
  std::uint64_t seed = 42;
};

struct SyntheticDataset {
  BipartiteGraph graph;
  std::vector<Index> block_u;  // empty when blocks == 0
  std::vector<Index> block_v;
};

/// Integer weight min(cap, floor(X)) with X ~ Pareto(x_min = 1, exponent).
inline double draw_skewed_weight(double cap, double exponent, Rng& rng) {
  if (cap <= 1.0) return 1.0;
  const double u = rng.uniform();
  const double x = std::pow(1.0 - u, -1.0 / (exponent - 1.0));
  return std::min(cap, std::floor(x));
}

inline SyntheticDataset generate_synthetic(const SyntheticParams& p) {
  if (p.n_u == 0 || p.n_v == 0 || p.n_edges == 0 || p.feature_dim == 0 || p.time_span <= 0)
    throw ValidationError("synthetic sizes must be positive");
  if (p.weight_skew < 1.0) throw ValidationError("weight_skew must be >= 1");
  if (!(p.weight_exponent > 1.0)) throw ValidationError("weight_exponent must be > 1");
  if (!(p.intra_prob >= 0.0 && p.intra_prob <= 1.0)) throw ValidationError("intra_prob must be in [0, 1]");
  const std::uint64_t capacity = static_cast<std::uint64_t>(p.n_u) * p.n_v;
  if (p.n_edges > capacity)
    throw ValidationError("infeasible edge count: " + std::to_string(p.n_edges) + " > " + std::to_string(capacity) +
                          " possible pairs");
  const bool planted = p.blocks > 0;
  if (planted && (p.blocks > p.n_u || p.blocks > p.n_v))
    throw ValidationError("more blocks than nodes in a partition");

  Rng rng(p.seed);
  SyntheticDataset ds;
  BipartiteGraph& g = ds.graph;
  g.n_u = p.n_u;
  g.n_v = p.n_v;
  for (Index i = 0; i < p.n_u; ++i) g.u_ids.add("u" + std::to_string(i));
  for (Index i = 0; i < p.n_v; ++i) g.v_ids.add("v" + std::to_string(i));

  std::vector<std::vector<Index>> members_u, members_v;
  std::uint64_t intra_capacity = 0;
  if (planted) {
    members_u.resize(p.blocks);
    members_v.resize(p.blocks);
    for (Index i = 0; i < p.n_u; ++i) {
      ds.block_u.push_back(i * p.blocks / p.n_u);
      members_u[ds.block_u.back()].push_back(i);
    }
    for (Index i = 0; i < p.n_v; ++i) {
      ds.block_v.push_back(i * p.blocks / p.n_v);
      members_v[ds.block_v.back()].push_back(i);
    }
    for (Index b = 0; b < p.blocks; ++b) intra_capacity += static_cast<std::uint64_t>(members_u[b].size()) * members_v[b].size();
    const double expected_intra = p.intra_prob * static_cast<double>(p.n_edges);
    const double expected_inter = static_cast<double>(p.n_edges) - expected_intra;
    if (expected_intra > 0.9 * static_cast<double>(intra_capacity) ||
        expected_inter > 0.9 * static_cast<double>(capacity - intra_capacity))
      throw ValidationError("infeasible edge count for the requested block structure");
  }

  // Features: block centroid plus unit Gaussian noise; pure noise without blocks.
  Matrix centroids_u, centroids_v;
  const auto d = static_cast<Eigen::Index>(p.feature_dim);
  if (planted) {
    centroids_u.resize(static_cast<Eigen::Index>(p.blocks), d);
    centroids_v.resize(static_cast<Eigen::Index>(p.blocks), d);
    for (Eigen::Index i = 0; i < centroids_u.size(); ++i) centroids_u.data()[i] = p.feature_signal * rng.normal();
    for (Eigen::Index i = 0; i < centroids_v.size(); ++i) centroids_v.data()[i] = p.feature_signal * rng.normal();
  }
  g.x_u.resize(static_cast<Eigen::Index>(p.n_u), d);
  g.x_v.resize(static_cast<Eigen::Index>(p.n_v), d);
  for (Eigen::Index i = 0; i < g.x_u.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      g.x_u(i, j) = rng.normal() + (planted ? centroids_u(static_cast<Eigen::Index>(ds.block_u[static_cast<std::size_t>(i)]), j) : 0.0);
  for (Eigen::Index i = 0; i < g.x_v.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      g.x_v(i, j) = rng.normal() + (planted ? centroids_v(static_cast<Eigen::Index>(ds.block_v[static_cast<std::size_t>(i)]), j) : 0.0);

  std::unordered_set<std::uint64_t> used;
  used.reserve(2 * p.n_edges);
  const std::uint64_t max_attempts = 200 * static_cast<std::uint64_t>(p.n_edges) + 100000;
  std::uint64_t attempts = 0;
  while (g.edges.size() < p.n_edges) {
    if (++attempts > max_attempts) throw ValidationError("infeasible edge count: could not place distinct pairs");
    Index u = 0, v = 0;
    if (!planted) {
      u = static_cast<Index>(rng.below(p.n_u));
      v = static_cast<Index>(rng.below(p.n_v));
    } else if (rng.bernoulli(p.intra_prob) || p.blocks == 1) {
      const auto b = static_cast<Index>(rng.below(p.blocks));
      u = members_u[b][rng.below(members_u[b].size())];
      v = members_v[b][rng.below(members_v[b].size())];
    } else {
      u = static_cast<Index>(rng.below(p.n_u));
      v = static_cast<Index>(rng.below(p.n_v));
      if (ds.block_u[u] == ds.block_v[v]) continue;
    }
    if (!used.insert(pair_key(u, v)).second) continue;
    Edge e;
    e.u = u;
    e.v = v;
    e.weight = draw_skewed_weight(p.weight_skew, p.weight_exponent, rng);
    e.timestamp = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(p.time_span)));
    g.edges.push_back(e);
  }
  g.validate();
  return ds;
}

struct DatasetPaths {
  std::filesystem::path edges;
  std::filesystem::path u_features;
  std::filesystem::path v_features;

  static DatasetPaths in(const std::filesystem::path& dir) {
    return {dir / "edges.csv", dir / "u_features.csv", dir / "v_features.csv"};
  }
};

/// Writes the edge and feature CSVs (shortest round-trip decimal values).
inline DatasetPaths write_dataset(const BipartiteGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DatasetPaths paths = DatasetPaths::in(dir);
  {
    std::ofstream out(paths.edges);
    if (!out) throw std::runtime_error("cannot write " + paths.edges.string());
    out << "u_id,v_id,weight,timestamp\n";
    for (const Edge& e : g.edges)
      out << g.u_ids.id(e.u) << ',' << g.v_ids.id(e.v) << ',' << detail::format_double(e.weight) << ','
          << e.timestamp << '\n';
  }
  auto write_features = [](const std::filesystem::path& path, const Matrix& x, const IdMap& ids) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "id";
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << ",f" << (j + 1);
    out << '\n';
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out << ids.id(static_cast<Index>(i));
      for (Eigen::Index j = 0; j < x.cols(); ++j) out << ',' << detail::format_double(x(i, j));
      out << '\n';
    }
  };
  write_features(paths.u_features, g.x_u, g.u_ids);
  write_features(paths.v_features, g.x_v, g.v_ids);
  return paths;
}

}  // namespace wbt
