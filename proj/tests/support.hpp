#pragma once

// Independent oracles, random instance generators and a finite-difference
// gradient checker shared by the unit tests and the acceptance binary.

#include "wbt/wbt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace wbt::oracle {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Random weighted pairs, duplicates allowed, integer weights in [1, max_w].
inline std::vector<WeightedPair> random_pairs(Index n_u, Index n_v, Index count, Rng& rng, int max_w = 5) {
  std::vector<WeightedPair> out;
  for (Index i = 0; i < count; ++i)
    out.push_back({static_cast<Index>(rng.below(n_u)), static_cast<Index>(rng.below(n_v)),
                   static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(max_w)))});
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t shrunk = 0;  // stencils shrunk across an activation kink
};

/// Relative error with a floor on the denominator so near-zero gradients are
/// compared absolutely.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

using ScalarFn = std::function<ad::Tensor(ad::Tape&, const std::vector<ad::Tensor>&)>;

/// Central differences of `f` against reverse-mode gradients for every entry
/// of every input.
inline GradCheckResult grad_check(const ScalarFn& f, std::vector<Matrix> inputs, double eps = 1e-5) {
  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Tensor> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m, true));
    const ad::Tensor loss = f(tape, leaves);
    tape.backward(loss);
    for (const ad::Tensor& t : leaves) analytic.push_back(t.grad());
  }
  auto eval = [&] {
    ad::Tape tape;
    std::vector<ad::Tensor> leaves;
    for (const Matrix& m : inputs) leaves.push_back(tape.leaf(m, false));
    return f(tape, leaves).value()(0, 0);
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      double& x = inputs[k].data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = eval();
      x = saved - eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[k].data()[i], numeric));
      ++r.checked;
    }
  }
  return r;
}

/// Reduces any matrix to a scalar with non-uniform weights: l^T Y r.
inline ad::Tensor weighted_reduce(ad::Tape& tape, ad::Tensor y, Rng& rng) {
  const Matrix l = random_matrix(1, static_cast<Index>(y.rows()), rng);
  const Matrix r = random_matrix(static_cast<Index>(y.cols()), 1, rng);
  return ad::matmul(ad::matmul(tape.leaf(l), y), tape.leaf(r));
}

// ---------------------------------------------------------------------------
// Linear-algebra oracles

/// Dense D^-1/2 (A + I) D^-1/2 over the stacked [U; V] index.
inline Matrix dense_adjacency_oracle(Index n_u, Index n_v, const std::vector<WeightedPair>& pairs, bool use_weights) {
  const Index n = n_u + n_v;
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::set<std::pair<Index, Index>> seen;
  for (const WeightedPair& p : pairs) {
    const Index i = p.u, j = n_u + p.v;
    const double w = use_weights ? p.weight : 1.0;
    if (use_weights) {
      a[i][j] += w;
      a[j][i] += w;
    } else if (seen.insert({i, j}).second) {
      a[i][j] = 1.0;
      a[j][i] = 1.0;
    }
  }
  for (Index i = 0; i < n; ++i) a[i][i] += 1.0;
  std::vector<double> deg(n, 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) deg[i] += a[i][j];
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j] / std::sqrt(deg[i] * deg[j]);
  return out;
}

inline Network ema_oracle(const Network& target, const Network& online, double tau) {
  Network out = target;
  std::vector<const Matrix*> on;
  visit_params(online, "", [&](const std::string&, const Matrix& m) { on.push_back(&m); });
  std::size_t k = 0;
  visit_params(out, "", [&](const std::string&, Matrix& m) {
    const Matrix& o = *on[k++];
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = tau * m(r, c) + (1.0 - tau) * o(r, c);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Loss oracle

/// Scalar-loop weighted mean of cos(a_u, b_v) over the pairs.
inline double cosine_mean_oracle(const Matrix& a, const Matrix& b, const std::vector<WeightedPair>& pairs,
                                 bool weighted) {
  double num = 0.0, den = 0.0;
  for (const WeightedPair& p : pairs) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double x = a(static_cast<Eigen::Index>(p.u), c);
      const double y = b(static_cast<Eigen::Index>(p.v), c);
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    const double cos = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
    const double w = weighted ? p.weight : 1.0;
    num += w * cos;
    den += w;
  }
  return num / den;
}

inline double attractive_oracle(const Matrix& pred, const Matrix& target, const std::vector<WeightedPair>& pairs,
                                bool weighted) {
  return -cosine_mean_oracle(pred, target, pairs, weighted);
}

inline double repulsive_oracle(const Matrix& pred, const Matrix& target, const std::vector<WeightedPair>& pairs,
                               bool weighted) {
  return cosine_mean_oracle(pred, target, pairs, weighted);
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Random scored set; `tie_levels` > 0 quantises scores to force ties.
inline ScoredPairs random_scored(Rng& rng, std::size_t max_pairs = 200, int tie_levels = 0) {
  ScoredPairs sp;
  const std::size_t n = 2 + rng.below(max_pairs - 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = rng.uniform();
    if (tie_levels > 0) s = std::floor(s * tie_levels) / tie_levels;
    sp.scores.push_back(s);
    sp.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
  }
  sp.labels[0] = 1;
  sp.labels[1] = 0;
  return sp;
}

inline double auc_oracle(const ScoredPairs& sp) {
  double wins = 0.0;
  std::size_t p = 0, n = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i) {
    if (sp.labels[i] != 1) continue;
    ++p;
    for (std::size_t j = 0; j < sp.scores.size(); ++j) {
      if (sp.labels[j] != 0) continue;
      if (sp.scores[i] > sp.scores[j]) wins += 1.0;
      if (sp.scores[i] == sp.scores[j]) wins += 0.5;
    }
  }
  for (int y : sp.labels) n += y == 0 ? 1 : 0;
  return wins / (static_cast<double>(p) * static_cast<double>(n));
}

/// Rank of item i: 1 + items with a higher score or an equal score earlier.
inline std::size_t stable_rank(const ScoredPairs& sp, std::size_t i) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < sp.scores.size(); ++j)
    if (sp.scores[j] > sp.scores[i] || (sp.scores[j] == sp.scores[i] && j < i)) ++r;
  return r;
}

inline double ap_oracle(const ScoredPairs& sp) {
  std::vector<std::pair<std::size_t, std::size_t>> ranked;  // (rank, index)
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    if (sp.labels[i] == 1) ranked.emplace_back(stable_rank(sp, i), i);
  std::sort(ranked.begin(), ranked.end());
  double acc = 0.0;
  for (std::size_t k = 0; k < ranked.size(); ++k) acc += static_cast<double>(k + 1) / static_cast<double>(ranked[k].first);
  return acc / static_cast<double>(ranked.size());
}

inline double hits_oracle(const ScoredPairs& sp, std::size_t k) {
  std::vector<double> neg;
  std::size_t p = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i) {
    if (sp.labels[i] == 0) neg.push_back(sp.scores[i]);
    else ++p;
  }
  if (neg.size() < k) return 1.0;
  std::sort(neg.begin(), neg.end());
  std::reverse(neg.begin(), neg.end());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i)
    if (sp.labels[i] == 1 && sp.scores[i] > neg[k - 1]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(p);
}

struct PrfOracle {
  double precision, recall, f1;
};

inline PrfOracle prf_oracle(const ScoredPairs& sp, double t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < sp.scores.size(); ++i) {
    const bool pred = !(sp.scores[i] < t);
    tp += pred && sp.labels[i] == 1;
    fp += pred && sp.labels[i] == 0;
    fn += !pred && sp.labels[i] == 1;
  }
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return {p, r, p + r > 0 ? 2 * p * r / (p + r) : 0.0};
}

inline MeanStd two_pass_oracle(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

/// Empirical keep frequency of each edge over `trials` independent drops.
inline std::vector<double> retention_frequencies(const std::vector<WeightedPair>& edges, double base_keep,
                                                 std::size_t trials, std::uint64_t seed) {
  std::vector<double> kept(edges.size(), 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    for (const WeightedPair& e : drop_edges_weight_aware(edges, base_keep, derive_seed(seed, {t})))
      for (std::size_t i = 0; i < edges.size(); ++i)
        if (edges[i].u == e.u && edges[i].v == e.v) kept[i] += 1.0;
  }
  for (double& k : kept) k /= static_cast<double>(trials);
  return kept;
}

// ---------------------------------------------------------------------------
// Small fixtures

/// Tiny model dimensions for fast forward/backward tests.
inline ModelDims tiny_dims(Index d_u = 3, Index d_v = 4) {
  ModelDims d;
  d.d_u = d_u;
  d.d_v = d_v;
  d.input_dim = 4;
  d.hidden_dim = 5;
  d.output_dim = 3;
  d.num_layers = 2;
  d.head_hidden_dim = 4;
  d.decoder_hidden = {5, 3};
  return d;
}

/// Small, fast pipeline configuration.
inline VariantConfig quick_config() {
  VariantConfig c;
  c.input_dim = 8;
  c.hidden_dim = 16;
  c.output_dim = 8;
  c.head_hidden_dim = 16;
  c.decoder_hidden = {16, 8};
  c.pretrain_epochs = 5;
  c.decoder_epochs = 5;
  c.patience = 3;
  c.batch_size = 64;
  c.hits_k = 10;
  return c;
}

inline BipartiteGraph small_graph(std::uint64_t seed = 7, double skew = 1.0, Index blocks = 3) {
  SyntheticParams p;
  p.n_u = 30;
  p.n_v = 40;
  p.n_edges = 250;
  p.blocks = blocks;
  p.weight_skew = skew;
  p.feature_dim = 4;
  p.seed = seed;
  return generate_synthetic(p).graph;
}

}  // namespace wbt::oracle
