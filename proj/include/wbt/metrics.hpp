#pragma once

// Ranking and threshold metrics for scored link pairs, and mean/std
// aggregation across runs.

#include "wbt/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace wbt {

struct ScoredPairs {
  std::vector<double> scores;
  std::vector<int> labels;      // 1 = positive link, 0 = negative
  std::vector<double> weights;  // optional, unused by the ranking metrics

  void validate() const {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    if (!weights.empty() && weights.size() != scores.size())
      throw ValidationError("weights and scores differ in length");
    for (int y : labels)
      if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
  }

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  std::size_t negatives() const { return labels.size() - positives(); }
};

namespace detail {

/// Indices sorted by descending score; equal scores keep input order.
inline std::vector<std::size_t> rank_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(score_pos == score_neg).
inline double roc_auc(const ScoredPairs& sp) {
  sp.validate();
  const std::size_t p = sp.positives();
  const std::size_t n = sp.negatives();
  if (p == 0 || n == 0) throw ValidationError("roc_auc needs at least one positive and one negative");

  std::vector<std::size_t> order(sp.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sp.scores[a] < sp.scores[b]; });

  // Walk tie groups in ascending order; every positive beats all negatives in
  // earlier groups and ties half of those in its own group. Counts stay in
  // half-integers, so the sum is exact.
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_here = 0, neg_here = 0;
    while (j < order.size() && sp.scores[order[j]] == sp.scores[order[i]]) {
      (sp.labels[order[j]] == 1 ? pos_here : neg_here) += 1;
      ++j;
    }
    wins += static_cast<double>(pos_here) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
    neg_below += neg_here;
    i = j;
  }
  return wins / (static_cast<double>(p) * static_cast<double>(n));
}

/// Mean over positives of precision at the positive's rank, ranking by
/// descending score with ties in input order.
inline double average_precision(const ScoredPairs& sp) {
  sp.validate();
  const std::size_t p = sp.positives();
  if (p == 0) throw ValidationError("average_precision needs at least one positive");
  const auto order = detail::rank_order(sp.scores);
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (sp.labels[order[r]] != 1) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return acc / static_cast<double>(p);
}

enum class HitsMode {
  NegativePool,  // fraction of positives scoring above the k-th best negative
  TopKOfAll,     // fraction of positives among the k best-scored pairs
};

inline double hits_at_k(const ScoredPairs& sp, std::size_t k = 50, HitsMode mode = HitsMode::NegativePool) {
  sp.validate();
  if (k == 0) throw ValidationError("hits_at_k: k must be at least 1");
  const std::size_t p = sp.positives();
  const std::size_t n = sp.negatives();
  if (mode == HitsMode::TopKOfAll) {
    if (sp.scores.empty()) throw ValidationError("hits_at_k: no scored pairs");
    const auto order = detail::rank_order(sp.scores);
    const std::size_t top = std::min(k, order.size());
    std::size_t pos = 0;
    for (std::size_t r = 0; r < top; ++r) pos += sp.labels[order[r]] == 1 ? 1 : 0;
    return static_cast<double>(pos) / static_cast<double>(top);
  }
  if (n == 0) throw ValidationError("hits_at_k needs at least one negative");
  if (p == 0) throw ValidationError("hits_at_k needs at least one positive");
  if (n < k) return 1.0;
  std::vector<double> neg;
  neg.reserve(n);
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    if (sp.labels[i] == 0) neg.push_back(sp.scores[i]);
  std::nth_element(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(k - 1), neg.end(), std::greater<>());
  const double kth = neg[k - 1];
  std::size_t above = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    if (sp.labels[i] == 1 && sp.scores[i] > kth) ++above;
  return static_cast<double>(above) / static_cast<double>(p);
}

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the corresponding ratio had a zero denominator and was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

/// Predicts positive when score >= t.
inline PrfResult threshold_prf(const ScoredPairs& sp, double t = 0.5) {
  sp.validate();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i) {
    const bool pred = sp.scores[i] >= t;
    const bool pos = sp.labels[i] == 1;
    if (pred && pos) ++tp;
    if (pred && !pos) ++fp;
    if (!pred && pos) ++fn;
  }
  PrfResult r;
  if (tp + fp == 0)
    r.precision_undefined = true;
  else
    r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn == 0)
    r.recall_undefined = true;
  else
    r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (r.precision + r.recall == 0.0)
    r.f1_undefined = true;
  else
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

using MetricMap = std::map<std::string, double>;

inline std::string hits_key(std::size_t k) { return "hits@" + std::to_string(k); }

/// Column order used for tables.
inline std::vector<std::string> metric_columns(std::size_t k = 50) {
  return {"roc_auc", "ap", "f1", "recall", "precision", hits_key(k)};
}

struct MetricOptions {
  std::size_t hits_k = 50;
  HitsMode hits_mode = HitsMode::NegativePool;
  double threshold = 0.5;
};

/// All six metrics for one scored test set. Zero-denominator P/R/F1 cases are
/// listed in `flags`.
inline MetricMap evaluate_metrics(const ScoredPairs& sp, const MetricOptions& opt,
                                  std::vector<std::string>* flags = nullptr) {
  MetricMap m;
  m["roc_auc"] = roc_auc(sp);
  m["ap"] = average_precision(sp);
  m[hits_key(opt.hits_k)] = hits_at_k(sp, opt.hits_k, opt.hits_mode);
  const PrfResult prf = threshold_prf(sp, opt.threshold);
  m["precision"] = prf.precision;
  m["recall"] = prf.recall;
  m["f1"] = prf.f1;
  if (flags != nullptr) {
    if (prf.precision_undefined) flags->push_back("precision_undefined");
    if (prf.recall_undefined) flags->push_back("recall_undefined");
    if (prf.f1_undefined) flags->push_back("f1_undefined");
  }
  return m;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation
};

using AggregateMap = std::map<std::string, MeanStd>;

/// Per-metric mean and sample standard deviation (Welford) over >= 2 runs
/// that all report the same metric names.
inline AggregateMap aggregate(const std::vector<MetricMap>& runs) {
  if (runs.size() < 2) throw ValidationError("aggregate needs at least two runs");
  for (const MetricMap& r : runs) {
    if (r.size() != runs.front().size())
      throw ValidationError("aggregate: runs report different metric sets");
    for (const auto& [name, value] : r)
      if (!runs.front().contains(name)) throw ValidationError("aggregate: metric '" + name + "' missing from run 0");
  }
  AggregateMap out;
  for (const auto& [name, unused] : runs.front()) {
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const MetricMap& r : runs) {
      const double x = r.at(name);
      ++n;
      const double delta = x - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (x - mean);
    }
    out[name] = {mean, std::sqrt(std::max(0.0, m2) / static_cast<double>(n - 1))};
  }
  return out;
}

}  // namespace wbt
