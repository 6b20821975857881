#pragma once

#include "wbt/graph.hpp"
#include "wbt/random.hpp"
#include "wbt/types.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace wbt {

enum class ViewKind { Augmented1, Augmented2, Corrupted };

/// A perturbed copy of a bipartite graph used for one side of the pretraining
/// objective. Edges index into x_u / x_v rows and never connect a partition to
/// itself.
struct GraphView {
  Matrix x_u;
  Matrix x_v;
  std::vector<WeightedPair> edges;
  ViewKind kind = ViewKind::Augmented1;
};

/// Lower clamp on the weight-aware keep probability.
inline constexpr double kMinKeepProbability = 0.05;

/// Zeroes each entry independently with probability p.
inline Matrix drop_features(const Matrix& x, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("drop_features: p must be in [0, 1)");
  Matrix out = x;
  if (p == 0.0) return out;
  Rng rng(seed);
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (rng.uniform() < p) out.data()[i] = 0.0;
  return out;
}

/// clamp(base_keep * w / mean_w, kMinKeepProbability, 1).
inline double keep_probability(double weight, double mean_weight, double base_keep) {
  return std::clamp(base_keep * weight / mean_weight, kMinKeepProbability, 1.0);
}

/// Keeps each edge independently with probability proportional to its weight
/// normalized by the mean weight. Retained edges keep their original weight.
inline std::vector<WeightedPair> drop_edges_weight_aware(const std::vector<WeightedPair>& edges, double base_keep,
                                                         std::uint64_t seed) {
  if (!(base_keep > 0.0 && base_keep <= 1.0))
    throw std::invalid_argument("drop_edges_weight_aware: base_keep must be in (0, 1]");
  std::vector<WeightedPair> out;
  if (edges.empty()) return out;
  double total = 0.0;
  for (const WeightedPair& e : edges) {
    if (!(e.weight > 0.0)) throw std::invalid_argument("drop_edges_weight_aware: weights must be positive");
    total += e.weight;
  }
  const double mean = total / static_cast<double>(edges.size());
  Rng rng(seed);
  out.reserve(edges.size());
  for (const WeightedPair& e : edges)
    if (rng.uniform() < keep_probability(e.weight, mean, base_keep)) out.push_back(e);
  return out;
}

struct AugmentConfig {
  double feature_drop_p = 0.1;
  double edge_base_keep = 0.8;
};

/// Feature dropping on both partitions plus weight-aware edge dropping.
/// `edges` carries the modeling weights the caller wants dropping to see
/// (all 1.0 for the non-weighted variants).
inline GraphView augment_view(const Matrix& x_u, const Matrix& x_v, const std::vector<WeightedPair>& edges,
                              const AugmentConfig& cfg, std::uint64_t seed, ViewKind kind) {
  GraphView view;
  view.kind = kind;
  view.x_u = drop_features(x_u, cfg.feature_drop_p, derive_seed(seed, {1}));
  view.x_v = drop_features(x_v, cfg.feature_drop_p, derive_seed(seed, {2}));
  view.edges = drop_edges_weight_aware(edges, cfg.edge_base_keep, derive_seed(seed, {3}));
  return view;
}

/// Row-permuted features (independent uniform permutation per partition) and
/// `n_random_edges` uniform U x V pairs of weight 1.0. Duplicate pairs may
/// occur.
inline GraphView corrupt_view(const Matrix& x_u, const Matrix& x_v, std::size_t n_random_edges, std::uint64_t seed) {
  if (n_random_edges == 0) throw std::invalid_argument("corrupt_view: need at least one random edge");
  const auto n_u = static_cast<Index>(x_u.rows());
  const auto n_v = static_cast<Index>(x_v.rows());
  if (n_u == 0 || n_v == 0) throw std::invalid_argument("corrupt_view: empty partition");
  Rng rng(seed);
  GraphView view;
  view.kind = ViewKind::Corrupted;
  const auto perm_u = rng.permutation(n_u);
  const auto perm_v = rng.permutation(n_v);
  view.x_u.resize(x_u.rows(), x_u.cols());
  view.x_v.resize(x_v.rows(), x_v.cols());
  for (Index i = 0; i < n_u; ++i)
    view.x_u.row(static_cast<Eigen::Index>(i)) = x_u.row(static_cast<Eigen::Index>(perm_u[i]));
  for (Index i = 0; i < n_v; ++i)
    view.x_v.row(static_cast<Eigen::Index>(i)) = x_v.row(static_cast<Eigen::Index>(perm_v[i]));
  view.edges.reserve(n_random_edges);
  for (std::size_t k = 0; k < n_random_edges; ++k) {
    const Index u = static_cast<Index>(rng.below(n_u));
    const Index v = static_cast<Index>(rng.below(n_v));
    view.edges.push_back({u, v, 1.0});
  }
  return view;
}

inline GraphView corrupt_view(const BipartiteGraph& g, std::size_t n_random_edges, std::uint64_t seed) {
  return corrupt_view(g.x_u, g.x_v, n_random_edges, seed);
}

}  // namespace wbt
