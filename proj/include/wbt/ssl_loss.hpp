#pragma once

#include "wbt/autodiff.hpp"
#include "wbt/error.hpp"
#include "wbt/graph.hpp"

#include <algorithm>
#include <vector>

namespace wbt {

struct PretrainLossConfig {
  double lambda = 0.5;   // weight of the repulsive term
  bool weighted = false; // use real edge weights (WP) or 1.0 (NWP)
};

namespace detail {

/// Weighted mean over edges of cos(online[u], target[v]).
inline ad::Tensor edge_cosine_mean(ad::Tensor online_u, ad::Tensor target_v, const std::vector<WeightedPair>& edges,
                                   bool weighted, const char* what) {
  if (edges.empty()) throw ValidationError(std::string(what) + ": empty edge set");
  // All-equal weights reduce to the unweighted mean.
  if (weighted && std::all_of(edges.begin(), edges.end(),
                              [&](const WeightedPair& e) { return e.weight == edges.front().weight; }))
    weighted = false;
  std::vector<Index> us, vs;
  std::vector<double> w;
  us.reserve(edges.size());
  vs.reserve(edges.size());
  w.reserve(edges.size());
  for (const WeightedPair& e : edges) {
    us.push_back(e.u);
    vs.push_back(e.v);
    w.push_back(weighted ? e.weight : 1.0);
  }
  ad::Tensor cos = ad::row_cosine(ad::gather_rows(online_u, std::move(us)), ad::gather_rows(target_v, std::move(vs)));
  return ad::weighted_mean(cos, std::move(w));
}

}  // namespace detail

/// -(sum_w w * cos(pred_u, target_v)) / (sum_w w) over the first augmented
/// view's edges. Range [-1, 1]; -1 when every prediction matches its target.
inline ad::Tensor attractive_loss(ad::Tensor pred_online, ad::Tensor target_view2,
                                  const std::vector<WeightedPair>& edges_view1, bool weighted) {
  return ad::scale(detail::edge_cosine_mean(pred_online, target_view2, edges_view1, weighted, "attractive_loss"), -1.0);
}

/// +(sum_w w * cos(pred_u, corrupted_v)) / (sum_w w) over the corrupted view's
/// edges. Corrupted edges all have weight 1, so the flag rarely matters here.
inline ad::Tensor repulsive_loss(ad::Tensor pred_online, ad::Tensor target_corrupted,
                                 const std::vector<WeightedPair>& edges_corrupted, bool weighted) {
  return detail::edge_cosine_mean(pred_online, target_corrupted, edges_corrupted, weighted, "repulsive_loss");
}

/// lambda * repulsive + (1 - lambda) * attractive.
inline ad::Tensor total_pretrain_loss(ad::Tensor attractive, ad::Tensor repulsive, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("total_pretrain_loss: lambda must be in [0, 1]");
  return ad::add(ad::scale(repulsive, lambda), ad::scale(attractive, 1.0 - lambda));
}

}  // namespace wbt
