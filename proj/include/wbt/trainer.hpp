#pragma once

// Two-phase training: self-supervised pretraining of the encoder and heads,
// then a link decoder trained on frozen embeddings with Hits@K early stopping.

#include "wbt/augment.hpp"
#include "wbt/autodiff.hpp"
#include "wbt/error.hpp"
#include "wbt/graph.hpp"
#include "wbt/metrics.hpp"
#include "wbt/model.hpp"
#include "wbt/optim.hpp"
#include "wbt/random.hpp"
#include "wbt/ssl_loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace wbt {

/// The WP/NWP x WB/NWB switch pair plus every shared hyperparameter.
struct VariantConfig {
  bool wp = false;  // weighted pretraining: real weights in message passing, edge dropping and the SSL loss
  bool wb = false;  // weighted BCE: positive links weighted by their frequency

  double lambda = 0.5;
  double tau = 0.99;
  Index input_dim = 64;
  Index hidden_dim = 256;
  Index output_dim = 128;
  Index num_layers = 2;
  Index head_hidden_dim = 256;
  std::vector<Index> decoder_hidden{256, 64};
  double dropout = 0.2;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  Index batch_size = 512;
  Index pretrain_epochs = 200;
  Index decoder_epochs = 100;
  Index patience = 10;
  double feature_drop_p = 0.1;
  double edge_base_keep = 0.8;

  double unk_rate = 0.01;          // fraction of nodes swapped for UNK per pretraining epoch
  double monitor_fraction = 0.1;   // validation positives held back for early stopping
  Index monitor_negative_factor = 4;  // monitor negatives = max(#monitor positives, factor * hits_k)
  double test_negative_ratio = 1.0;

  Index hits_k = 50;
  HitsMode hits_mode = HitsMode::NegativePool;
  double threshold = 0.5;

  bool relu_on_output = false;         // literal ReLU after the last GCN layer
  bool loss_on_raw_embeddings = false; // cos(pred(h_u), h_v) on encoder outputs, skipping projectors
  bool symmetrize = false;             // also score V->U and average both directions

  SplitFractions fractions{};

  std::string variant_name() const {
    return std::string(wp ? "WP" : "NWP") + "_" + (wb ? "WB" : "NWB");
  }

  ModelDims dims(Index d_u, Index d_v) const {
    ModelDims d;
    d.d_u = d_u;
    d.d_v = d_v;
    d.input_dim = input_dim;
    d.hidden_dim = hidden_dim;
    d.output_dim = output_dim;
    d.num_layers = num_layers;
    d.head_hidden_dim = head_hidden_dim;
    d.decoder_hidden = decoder_hidden;
    return d;
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.weight_decay = weight_decay;
    return a;
  }

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must be in [0, 1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("tau must be in [0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must be in [0, 1)");
    if (!(feature_drop_p >= 0.0 && feature_drop_p < 1.0)) throw ValidationError("feature_drop_p must be in [0, 1)");
    if (!(edge_base_keep > 0.0 && edge_base_keep <= 1.0)) throw ValidationError("edge_base_keep must be in (0, 1]");
    if (!(monitor_fraction > 0.0 && monitor_fraction < 1.0))
      throw ValidationError("monitor_fraction must be in (0, 1)");
    if (!(unk_rate >= 0.0 && unk_rate < 1.0)) throw ValidationError("unk_rate must be in [0, 1)");
    if (!(test_negative_ratio > 0.0)) throw ValidationError("test_negative_ratio must be positive");
    if (num_layers < 1 || input_dim == 0 || hidden_dim == 0 || output_dim == 0 || head_hidden_dim == 0)
      throw ValidationError("layer sizes must be positive");
    if (batch_size == 0 || hits_k == 0) throw ValidationError("batch_size and hits_k must be positive");
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw ValidationError("lr must be positive, weight_decay >= 0");
  }
};

// Stream labels for derive_seed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kPretrain = 2;
inline constexpr std::uint64_t kDecoderInit = 3;
inline constexpr std::uint64_t kDecoder = 4;
inline constexpr std::uint64_t kEval = 5;
}  // namespace stream

struct PretrainResult {
  ModelState state;
  std::vector<double> losses;  // one total loss per epoch
};

namespace detail {

inline std::vector<Index> choose_unk_rows(Index n, double rate, Rng& rng) {
  if (rate <= 0.0 || n == 0) return {};
  const auto count = std::max<Index>(1, static_cast<Index>(std::llround(rate * static_cast<double>(n))));
  auto perm = rng.permutation(n);
  perm.resize(std::min(count, n));
  return perm;
}

}  // namespace detail

/// Self-supervised pretraining on the train-era graph.
///
/// Each epoch draws two augmented views and one corrupted view, runs the online
/// network on view 1 and the target network on view 2 and the corrupted view,
/// takes one Adam step on the triplet loss and one EMA update of the target.
inline PretrainResult pretrain(const TemporalSplit& split, const VariantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const BipartiteGraph& g = split.train;
  if (g.edges.empty()) throw ValidationError("pretrain: train graph has no edges");

  Rng init_rng(derive_seed(seed, {stream::kInit}));
  PretrainResult result;
  ModelState& state =
      (result.state = init_model_state(cfg.dims(static_cast<Index>(g.x_u.cols()), static_cast<Index>(g.x_v.cols())),
                                       cfg.tau, init_rng));
  AdamState adam;
  const AdamConfig adam_cfg = cfg.adam();
  const AugmentConfig aug{cfg.feature_drop_p, cfg.edge_base_keep};
  const std::vector<WeightedPair> pairs = g.weighted_pairs(cfg.wp);
  const PretrainLossConfig loss_cfg{cfg.lambda, cfg.wp};

  for (Index epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const std::uint64_t es = derive_seed(seed, {stream::kPretrain, epoch});
    GraphView view1 = augment_view(g.x_u, g.x_v, pairs, aug, derive_seed(es, {1}), ViewKind::Augmented1);
    GraphView view2 = augment_view(g.x_u, g.x_v, pairs, aug, derive_seed(es, {2}), ViewKind::Augmented2);
    // A view that lost every edge would leave the attractive term undefined.
    if (view1.edges.empty()) view1.edges = pairs;
    if (view2.edges.empty()) view2.edges = pairs;
    const GraphView corrupted = corrupt_view(g.x_u, g.x_v, view1.edges.size(), derive_seed(es, {3}));

    auto adj1 = std::make_shared<const SparseMatrix>(build_weighted_adjacency(g.n_u, g.n_v, view1.edges, cfg.wp));
    auto adj2 = std::make_shared<const SparseMatrix>(build_weighted_adjacency(g.n_u, g.n_v, view2.edges, cfg.wp));
    // Random pairs carry no frequency; repeated draws collapse to one edge.
    auto adjc =
        std::make_shared<const SparseMatrix>(build_weighted_adjacency(g.n_u, g.n_v, corrupted.edges, false));

    ad::Tape tape;
    Binding online(tape, true);
    Binding target(tape, false);
    Rng step_rng(derive_seed(es, {4}));

    EncodeOptions online_opt;
    online_opt.dropout = cfg.dropout;
    online_opt.rng = &step_rng;
    online_opt.relu_on_output = cfg.relu_on_output;
    EncodeOptions target_opt;
    target_opt.relu_on_output = cfg.relu_on_output;

    Embeddings h1 = encode(online, state.online.encoder, adj1, tape.leaf(view1.x_u), tape.leaf(view1.x_v), online_opt);
    auto unk_u = detail::choose_unk_rows(g.n_u, cfg.unk_rate, step_rng);
    auto unk_v = detail::choose_unk_rows(g.n_v, cfg.unk_rate, step_rng);
    if (!unk_u.empty()) h1.u = ad::substitute_rows(h1.u, online(state.online.encoder.unk_u), std::move(unk_u));
    if (!unk_v.empty()) h1.v = ad::substitute_rows(h1.v, online(state.online.encoder.unk_v), std::move(unk_v));

    const Embeddings h2 = encode(target, state.target.encoder, adj2, tape.leaf(view2.x_u), tape.leaf(view2.x_v), target_opt);
    const Embeddings hc =
        encode(target, state.target.encoder, adjc, tape.leaf(corrupted.x_u), tape.leaf(corrupted.x_v), target_opt);

    const Heads& oh = state.online.heads;
    const Heads& th = state.target.heads;
    auto online_pred = [&](const Mlp& projector, const Mlp& predictor, ad::Tensor h) {
      return cfg.loss_on_raw_embeddings ? apply_mlp(online, predictor, h)
                                        : apply_mlp(online, predictor, apply_mlp(online, projector, h));
    };
    auto target_rep = [&](const Mlp& projector, ad::Tensor h) {
      return cfg.loss_on_raw_embeddings ? h : apply_mlp(target, projector, h);
    };

    const ad::Tensor p_u = online_pred(oh.projector_u, oh.predictor_u, h1.u);
    ad::Tensor attr = attractive_loss(p_u, target_rep(th.projector_v, h2.v), view1.edges, loss_cfg.weighted);
    ad::Tensor rep = repulsive_loss(p_u, target_rep(th.projector_v, hc.v), corrupted.edges, loss_cfg.weighted);
    if (cfg.symmetrize) {
      auto flipped = [](const std::vector<WeightedPair>& edges) {
        std::vector<WeightedPair> out;
        out.reserve(edges.size());
        for (const WeightedPair& e : edges) out.push_back({e.v, e.u, e.weight});
        return out;
      };
      const ad::Tensor p_v = online_pred(oh.projector_v, oh.predictor_v, h1.v);
      const ad::Tensor attr_vu =
          attractive_loss(p_v, target_rep(th.projector_u, h2.u), flipped(view1.edges), loss_cfg.weighted);
      const ad::Tensor rep_vu =
          repulsive_loss(p_v, target_rep(th.projector_u, hc.u), flipped(corrupted.edges), loss_cfg.weighted);
      attr = ad::scale(ad::add(attr, attr_vu), 0.5);
      rep = ad::scale(ad::add(rep, rep_vu), 0.5);
    }
    const ad::Tensor loss = total_pretrain_loss(attr, rep, loss_cfg.lambda);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
    tape.backward(loss);

    auto params = param_refs(state.online);
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (const ParamRef& p : params) grads.push_back(online.grad(*p.value));
    std::vector<const Matrix*> grad_ptrs;
    for (const Matrix& gm : grads) grad_ptrs.push_back(&gm);
    adam_step(params, grad_ptrs, adam, adam_cfg);
    ema_update(state);
    result.losses.push_back(value);
  }
  return result;
}

/// Embeddings of a frozen online encoder. Both tables have one extra trailing
/// row holding the learned UNK embedding, so `unk_u()` / `unk_v()` are valid
/// row indices; nodes without an event in the provenance graph are also
/// served the UNK row.
struct FrozenEmbeddings {
  Matrix emb_u;
  Matrix emb_v;
  std::vector<bool> known_u;
  std::vector<bool> known_v;
  std::string provenance;

  Index n_u() const { return known_u.size(); }
  Index n_v() const { return known_v.size(); }
  Index unk_u() const { return n_u(); }
  Index unk_v() const { return n_v(); }

  /// Row index for an external ID: its dense index, or UNK when absent.
  Index row_u(const IdMap& ids, const std::string& id) const { return ids.find(id).value_or(unk_u()); }
  Index row_v(const IdMap& ids, const std::string& id) const { return ids.find(id).value_or(unk_v()); }
};

/// Runs the online encoder (no dropout, no gradients) over `graph`.
inline FrozenEmbeddings extract_embeddings(const ModelState& state, const BipartiteGraph& graph, bool use_weights,
                                           bool relu_on_output, std::string provenance) {
  graph.validate();
  auto adj = std::make_shared<const SparseMatrix>(build_weighted_adjacency(graph, use_weights));
  ad::Tape tape;
  Binding frozen(tape, false);
  EncodeOptions opt;
  opt.relu_on_output = relu_on_output;
  const Embeddings h = encode(frozen, state.online.encoder, adj, tape.leaf(graph.x_u), tape.leaf(graph.x_v), opt);

  FrozenEmbeddings out;
  out.provenance = std::move(provenance);
  std::tie(out.known_u, out.known_v) = seen_nodes(graph.edges, graph.n_u, graph.n_v);
  auto fill = [](const Matrix& h, const Matrix& unk, const std::vector<bool>& known) {
    Matrix table(h.rows() + 1, h.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      table.row(i) = known[static_cast<std::size_t>(i)] ? Matrix(h.row(i)) : unk;
    table.row(h.rows()) = unk;
    return table;
  };
  out.emb_u = fill(h.u.value(), state.online.encoder.unk_u, out.known_u);
  out.emb_v = fill(h.v.value(), state.online.encoder.unk_v, out.known_v);
  return out;
}

/// Logits for `pairs` from a decoder over frozen embedding tables.
inline std::vector<double> score_logits(const DecoderParams& dec, const FrozenEmbeddings& emb,
                                        const std::vector<std::pair<Index, Index>>& pairs) {
  ad::Tape tape;
  Binding b(tape, false);
  const ad::Tensor logits = decode_logits(b, dec, tape.leaf(emb.emb_u), tape.leaf(emb.emb_v), pairs);
  return {logits.value().data(), logits.value().data() + logits.value().size()};
}

struct DecoderResult {
  DecoderParams params;             // best-epoch checkpoint
  Index best_epoch = 0;             // 1-based
  Index epochs_run = 0;
  double best_monitor_hits = 0.0;
  std::vector<double> train_losses;  // mean batch loss per epoch
  std::vector<double> monitor_hits;  // Hits@K on the monitor slice per epoch
};

/// Supervised decoder training on frozen embeddings.
///
/// `positives` are the validation-era pairs with their frequency weights. A
/// `monitor_fraction` slice is held back for early stopping on Hits@K; the rest
/// trains against fresh 1:1 negatives each epoch. Negatives are drawn from the
/// complement of every era of `split`.
inline DecoderResult train_decoder(const FrozenEmbeddings& emb, const std::vector<WeightedPair>& positives,
                                   const TemporalSplit& split, const VariantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (positives.size() < 2) throw ValidationError("train_decoder: need at least two positive pairs");
  const auto exclude = all_era_pairs(split);
  const Index n_u = split.train.n_u;
  const Index n_v = split.train.n_v;

  Rng rng(derive_seed(seed, {stream::kDecoder, 0}));
  std::vector<WeightedPair> pos = positives;
  rng.shuffle(pos);
  const std::size_t n_monitor = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.monitor_fraction * static_cast<double>(pos.size()))), 1,
      pos.size() - 1);
  const std::vector<WeightedPair> monitor_pos(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_monitor));
  const std::vector<WeightedPair> train_pos(pos.begin() + static_cast<std::ptrdiff_t>(n_monitor), pos.end());

  const std::uint64_t free_pairs = static_cast<std::uint64_t>(n_u) * n_v - exclude.size();
  const std::size_t n_monitor_neg = static_cast<std::size_t>(std::min<std::uint64_t>(
      free_pairs, std::max<std::uint64_t>(n_monitor, cfg.monitor_negative_factor * cfg.hits_k)));
  const auto monitor_neg =
      sample_complement(n_u, n_v, exclude, n_monitor_neg, derive_seed(seed, {stream::kDecoder, 1}));

  std::vector<std::pair<Index, Index>> monitor_pairs;
  ScoredPairs monitor;
  for (const WeightedPair& p : monitor_pos) {
    monitor_pairs.emplace_back(p.u, p.v);
    monitor.labels.push_back(1);
  }
  for (const auto& p : monitor_neg) {
    monitor_pairs.push_back(p);
    monitor.labels.push_back(0);
  }

  Rng init_rng(derive_seed(seed, {stream::kDecoderInit}));
  DecoderResult result;
  DecoderParams dec = init_decoder(static_cast<Index>(emb.emb_u.cols()), cfg.decoder_hidden, init_rng);
  result.params = dec;
  AdamState adam;
  const AdamConfig adam_cfg = cfg.adam();
  double best_hits = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();

  for (Index epoch = 1; epoch <= cfg.decoder_epochs; ++epoch) {
    const auto negatives =
        sample_complement(n_u, n_v, exclude, train_pos.size(), derive_seed(seed, {stream::kDecoder, 2, epoch}));
    struct Example {
      Index u, v;
      double label, weight;
    };
    std::vector<Example> examples;
    examples.reserve(train_pos.size() + negatives.size());
    for (const WeightedPair& p : train_pos) examples.push_back({p.u, p.v, 1.0, cfg.wb ? p.weight : 1.0});
    for (const auto& [u, v] : negatives) examples.push_back({u, v, 0.0, 1.0});
    Rng epoch_rng(derive_seed(seed, {stream::kDecoder, 3, epoch}));
    epoch_rng.shuffle(examples);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(examples.size(), start + cfg.batch_size);
      std::vector<std::pair<Index, Index>> batch;
      std::vector<double> labels, weights;
      for (std::size_t i = start; i < end; ++i) {
        batch.emplace_back(examples[i].u, examples[i].v);
        labels.push_back(examples[i].label);
        weights.push_back(examples[i].weight);
      }
      ad::Tape tape;
      Binding b(tape, true);
      const ad::Tensor logits = decode_logits(b, dec, tape.leaf(emb.emb_u), tape.leaf(emb.emb_v), batch);
      const ad::Tensor loss = ad::bce_with_logits(logits, std::move(labels), std::move(weights));
      tape.backward(loss);
      auto params = param_refs(dec);
      std::vector<Matrix> grads;
      for (const ParamRef& p : params) grads.push_back(b.grad(*p.value));
      std::vector<const Matrix*> grad_ptrs;
      for (const Matrix& gm : grads) grad_ptrs.push_back(&gm);
      adam_step(params, grad_ptrs, adam, adam_cfg);
      loss_sum += loss.value()(0, 0);
      ++batches;
    }
    result.train_losses.push_back(loss_sum / static_cast<double>(batches));

    const std::vector<double> logits = score_logits(dec, emb, monitor_pairs);
    monitor.scores.resize(logits.size());
    double monitor_loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      monitor.scores[i] = ad::sigmoid_scalar(logits[i]);
      const double z = logits[i];
      monitor_loss += std::max(z, 0.0) - z * monitor.labels[i] + std::log1p(std::exp(-std::abs(z)));
    }
    monitor_loss /= static_cast<double>(logits.size());
    const double hits = hits_at_k(monitor, cfg.hits_k, cfg.hits_mode);
    result.monitor_hits.push_back(hits);
    result.epochs_run = epoch;
    // Equal Hits@K is common on small monitor sets; the monitor loss breaks ties.
    if (hits > best_hits || (hits == best_hits && monitor_loss < best_loss)) {
      best_hits = hits;
      best_loss = monitor_loss;
      result.best_epoch = epoch;
      result.params = dec;
    }
    if (epoch - result.best_epoch >= cfg.patience) break;
  }
  result.best_monitor_hits = best_hits;
  return result;
}

struct EvalEntry {
  MetricMap metrics;
  std::vector<std::string> flags;
  std::size_t test_positives = 0;
  std::size_t test_negatives = 0;
};

/// Scores test-era pairs against fresh negatives using embeddings recomputed
/// over the train+val history with the frozen encoder.
inline EvalEntry evaluate_final(const ModelState& state, const TemporalSplit& split, const DecoderParams& decoder,
                                const VariantConfig& cfg, std::uint64_t seed) {
  const FrozenEmbeddings emb = extract_embeddings(state, split.history(true), cfg.wp, cfg.relu_on_output, "train+val");
  const std::vector<WeightedPair> test_pos = BipartiteGraph::merge_events(split.test_edges, true);
  const auto n_neg = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.test_negative_ratio * static_cast<double>(test_pos.size()))));
  const NegativeSet neg = sample_negatives(split, n_neg, derive_seed(seed, {stream::kEval}));

  std::vector<std::pair<Index, Index>> pairs;
  ScoredPairs sp;
  for (const WeightedPair& p : test_pos) {
    pairs.emplace_back(p.u, p.v);
    sp.labels.push_back(1);
  }
  for (const auto& p : neg.pairs) {
    pairs.push_back(p);
    sp.labels.push_back(0);
  }
  for (double z : score_logits(decoder, emb, pairs)) sp.scores.push_back(ad::sigmoid_scalar(z));

  EvalEntry out;
  out.test_positives = test_pos.size();
  out.test_negatives = neg.pairs.size();
  MetricOptions mopt;
  mopt.hits_k = cfg.hits_k;
  mopt.hits_mode = cfg.hits_mode;
  mopt.threshold = cfg.threshold;
  out.metrics = evaluate_metrics(sp, mopt, &out.flags);
  return out;
}

/// Everything one (dataset, variant, seed) run produces.
struct RunResult {
  std::uint64_t seed = 0;
  std::vector<std::string> split_warnings;
  std::vector<double> pretrain_losses;
  DecoderResult decoder;
  EvalEntry eval;
  std::uint64_t state_checksum_before_decoder = 0;
  std::uint64_t state_checksum_after_decoder = 0;
  ModelState state;
};

/// split -> pretrain -> extract (train graph) -> train_decoder (val era) ->
/// evaluate_final (test era).
inline RunResult run_pipeline(const BipartiteGraph& graph, const VariantConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const TemporalSplit split = chronological_split(graph, cfg.fractions);
  RunResult r;
  r.seed = seed;
  r.split_warnings = split.warnings;
  PretrainResult pre = pretrain(split, cfg, seed);
  r.pretrain_losses = std::move(pre.losses);
  r.state = std::move(pre.state);

  r.state_checksum_before_decoder = checksum(r.state);
  const FrozenEmbeddings emb = extract_embeddings(r.state, split.train, cfg.wp, cfg.relu_on_output, "train");
  const std::vector<WeightedPair> val_pos = BipartiteGraph::merge_events(split.val_edges, true);
  r.decoder = train_decoder(emb, val_pos, split, cfg, seed);
  r.state_checksum_after_decoder = checksum(r.state);

  r.eval = evaluate_final(r.state, split, r.decoder.params, cfg, seed);
  return r;
}

}  // namespace wbt
