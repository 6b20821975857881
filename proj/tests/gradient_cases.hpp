#pragma once

// Random finite-difference instances for every differentiable operation and
// for the composed pretraining and decoder losses.

#include "support.hpp"

#include <string>
#include <utility>

namespace wbt::oracle {

/// Fixed l^T Y r reduction, drawn once per instance.
struct Reducer {
  Matrix l, r;
  Reducer(Index rows, Index cols, Rng& rng) : l(random_matrix(1, rows, rng)), r(random_matrix(cols, 1, rng)) {}
  ad::Tensor operator()(ad::Tape& t, ad::Tensor y) const { return ad::matmul(ad::matmul(t.leaf(l), y), t.leaf(r)); }
};

/// Normal entries pushed away from zero so kinks stay outside the stencil.
inline Matrix away_from_zero(Index rows, Index cols, Rng& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += m.data()[i] >= 0 ? 0.1 : -0.1;
  return m;
}

inline Index dim(Rng& rng, Index lo = 1, Index hi = 6) { return lo + static_cast<Index>(rng.below(hi - lo + 1)); }

/// Checks d(loss)/d(param) for every entry of `params` by perturbing them in place.
///
/// Hidden ReLU/PReLU units can switch inside the stencil. When the one-sided
/// slopes disagree, the stencil is shrunk (down to eps / 1000) until they agree.
inline GradCheckResult grad_check_params(const std::vector<Matrix*>& params,
                                         const std::function<std::vector<Matrix>()>& analytic,
                                         const std::function<double()>& value, double eps = 1e-5) {
  const std::vector<Matrix> grads = analytic();
  const double f0 = value();
  GradCheckResult r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k]->size(); ++i) {
      double& x = params[k]->data()[i];
      const double saved = x;
      double fd = 0.0;
      for (double h = eps; h >= eps * 1e-3; h /= 10.0) {
        x = saved + h;
        const double up = value();
        x = saved - h;
        const double down = value();
        x = saved;
        fd = (up - down) / (2.0 * h);
        const double fwd = (up - f0) / h, bwd = (f0 - down) / h;
        if (std::abs(fwd - bwd) <= 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-2})) break;
        ++r.shrunk;
      }
      r.max_rel_error = std::max(r.max_rel_error, rel_error(grads[k].data()[i], fd));
      ++r.checked;
    }
  }
  return r;
}

/// Online-side pretraining loss on fixed views of a tiny random graph.
struct PretrainLossInstance {
  ModelState state;
  Matrix x1_u, x1_v, x2_u, x2_v, xc_u, xc_v;
  std::shared_ptr<const SparseMatrix> adj1, adj2, adjc;
  std::vector<WeightedPair> edges1, edges_c;
  std::vector<Index> unk_rows;
  double lambda = 0.5;
  bool weighted = false;

  explicit PretrainLossInstance(Rng& rng) {
    const Index n_u = dim(rng, 2, 6), n_v = dim(rng, 2, 6);
    const ModelDims dims = tiny_dims(dim(rng, 1, 4), dim(rng, 1, 4));
    state = init_model_state(dims, 0.9, rng);
    visit_params(state.target, "", [&](const std::string&, Matrix& m) { m += 0.1 * random_matrix(m.rows(), m.cols(), rng); });
    visit_params(state.online, "", [&](const std::string&, Matrix& m) { m += 0.1 * random_matrix(m.rows(), m.cols(), rng); });
    auto feats = [&](Index n, Index d) { return random_matrix(n, d, rng); };
    x1_u = feats(n_u, dims.d_u), x1_v = feats(n_v, dims.d_v);
    x2_u = feats(n_u, dims.d_u), x2_v = feats(n_v, dims.d_v);
    xc_u = feats(n_u, dims.d_u), xc_v = feats(n_v, dims.d_v);
    weighted = rng.bernoulli(0.5);
    lambda = rng.uniform();
    edges1 = random_pairs(n_u, n_v, dim(rng, 1, 10), rng, 377);
    const auto edges2 = random_pairs(n_u, n_v, dim(rng, 1, 10), rng, 377);
    edges_c = random_pairs(n_u, n_v, edges1.size(), rng, 1);
    adj1 = std::make_shared<const SparseMatrix>(build_weighted_adjacency(n_u, n_v, edges1, weighted));
    adj2 = std::make_shared<const SparseMatrix>(build_weighted_adjacency(n_u, n_v, edges2, weighted));
    adjc = std::make_shared<const SparseMatrix>(build_weighted_adjacency(n_u, n_v, edges_c, weighted));
    unk_rows = {static_cast<Index>(rng.below(n_u))};
  }

  ad::Tensor loss(ad::Tape& tape, Binding& online, Binding& target) const {
    Embeddings h1 = encode(online, state.online.encoder, adj1, tape.leaf(x1_u), tape.leaf(x1_v));
    h1.u = ad::substitute_rows(h1.u, online(state.online.encoder.unk_u), unk_rows);
    const Embeddings h2 = encode(target, state.target.encoder, adj2, tape.leaf(x2_u), tape.leaf(x2_v));
    const Embeddings hc = encode(target, state.target.encoder, adjc, tape.leaf(xc_u), tape.leaf(xc_v));
    const Heads& oh = state.online.heads;
    const ad::Tensor p = apply_mlp(online, oh.predictor_u, apply_mlp(online, oh.projector_u, h1.u));
    const ad::Tensor attr = attractive_loss(p, apply_mlp(target, state.target.heads.projector_v, h2.v), edges1, weighted);
    const ad::Tensor rep = repulsive_loss(p, apply_mlp(target, state.target.heads.projector_v, hc.v), edges_c, weighted);
    return total_pretrain_loss(attr, rep, lambda);
  }

  GradCheckResult check() {
    std::vector<Matrix*> params;
    visit_params(state.online, "", [&](const std::string&, Matrix& m) { params.push_back(&m); });
    auto analytic = [&] {
      ad::Tape tape;
      Binding online(tape, true), target(tape, false);
      tape.backward(loss(tape, online, target));
      std::vector<Matrix> g;
      for (Matrix* m : params) g.push_back(online.grad(*m));
      return g;
    };
    auto value = [&] {
      ad::Tape tape;
      Binding online(tape, false), target(tape, false);
      return loss(tape, online, target).value()(0, 0);
    };
    return grad_check_params(params, analytic, value);
  }
};

/// Weighted BCE of the link decoder on random frozen embeddings.
inline GradCheckResult decoder_loss_check(Rng& rng) {
  const Index n_u = dim(rng, 2, 6), n_v = dim(rng, 2, 6), d = dim(rng, 1, 4);
  DecoderParams dec = init_decoder(d, {dim(rng, 2, 5), dim(rng, 2, 4)}, rng);
  visit_decoder(dec, "", [&](const std::string&, Matrix& m) { m += 0.1 * random_matrix(m.rows(), m.cols(), rng); });
  const Matrix eu = random_matrix(n_u, d, rng), ev = random_matrix(n_v, d, rng);
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<double> labels, weights;
  const Index m = dim(rng, 1, 8);
  for (Index j = 0; j < m; ++j) {
    pairs.emplace_back(rng.below(n_u), rng.below(n_v));
    labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    weights.push_back(labels.back() == 1.0 ? static_cast<double>(1 + rng.below(20)) : 1.0);
  }
  std::vector<Matrix*> params;
  visit_decoder(dec, "", [&](const std::string&, Matrix& x) { params.push_back(&x); });
  auto loss = [&](ad::Tape& tape, Binding& b) {
    return ad::bce_with_logits(decode_logits(b, dec, tape.leaf(eu), tape.leaf(ev), pairs), labels, weights);
  };
  auto analytic = [&] {
    ad::Tape tape;
    Binding b(tape, true);
    tape.backward(loss(tape, b));
    std::vector<Matrix> g;
    for (Matrix* x : params) g.push_back(b.grad(*x));
    return g;
  };
  auto value = [&] {
    ad::Tape tape;
    Binding b(tape, false);
    return loss(tape, b).value()(0, 0);
  };
  return grad_check_params(params, analytic, value);
}

using GradientCase = std::pair<std::string, std::function<GradCheckResult(Rng&)>>;

/// One entry per differentiable operation plus the two composed losses.
inline std::vector<GradientCase> gradient_cases() {
  std::vector<GradientCase> cases;
  cases.emplace_back("matmul", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng), c = dim(rng);
    const Reducer red(a, c, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::matmul(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(b, c, rng)});
  });
  cases.emplace_back("add", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::add(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(a, b, rng)});
  });
  cases.emplace_back("add_row", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::add_row(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(1, b, rng)});
  });
  cases.emplace_back("scale", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    const double c = rng.normal();
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::scale(x[0], c)); }, {random_matrix(a, b, rng)});
  });
  cases.emplace_back("relu", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::relu(x[0])); }, {away_from_zero(a, b, rng)});
  });
  cases.emplace_back("prelu", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::prelu(x[0], x[1])); },
                      {away_from_zero(a, b, rng), random_matrix(1, 1, rng)});
  });
  cases.emplace_back("sigmoid", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::sigmoid(x[0])); },
                      {random_matrix(a, b, rng, 3.0)});
  });
  cases.emplace_back("dropout", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const Reducer red(a, b, rng);
    const std::uint64_t seed = rng.next();
    const double p = 0.5 * rng.uniform();
    return grad_check(
        [&](ad::Tape& t, const auto& x) {
          Rng mask(seed);
          return red(t, ad::dropout(x[0], p, mask));
        },
        {random_matrix(a, b, rng)});
  });
  cases.emplace_back("row_cosine", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng, 2, 6);
    const Reducer red(a, 1, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::row_cosine(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(a, b, rng)});
  });
  cases.emplace_back("spmm", [](Rng& rng) {
    const Index n_u = dim(rng), n_v = dim(rng), c = dim(rng);
    auto adj = std::make_shared<const SparseMatrix>(
        build_weighted_adjacency(n_u, n_v, random_pairs(n_u, n_v, dim(rng, 1, 12), rng, 9), true));
    const Reducer red(n_u + n_v, c, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::spmm(adj, x[0])); },
                      {random_matrix(n_u + n_v, c, rng)});
  });
  cases.emplace_back("gather_rows", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng), m = dim(rng, 1, 10);
    std::vector<Index> idx;
    for (Index i = 0; i < m; ++i) idx.push_back(rng.below(a));
    const Reducer red(m, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::gather_rows(x[0], idx)); },
                      {random_matrix(a, b, rng)});
  });
  cases.emplace_back("slice_rows", [](Rng& rng) {
    const Index a = dim(rng, 2, 6), b = dim(rng);
    const auto start = static_cast<Eigen::Index>(rng.below(a));
    const auto count = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(a) - start));
    const Reducer red(static_cast<Index>(count), b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::slice_rows(x[0], start, count)); },
                      {random_matrix(a, b, rng)});
  });
  cases.emplace_back("concat_rows", [](Rng& rng) {
    const Index a = dim(rng), c = dim(rng), b = dim(rng);
    const Reducer red(a + c, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::concat_rows(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(c, b, rng)});
  });
  cases.emplace_back("concat_cols", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng), c = dim(rng);
    const Reducer red(a, b + c, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::concat_cols(x[0], x[1])); },
                      {random_matrix(a, b, rng), random_matrix(a, c, rng)});
  });
  cases.emplace_back("substitute_rows", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    std::vector<Index> idx;
    for (Index i = 0; i < a; ++i)
      if (rng.bernoulli(0.4)) idx.push_back(i);
    const Reducer red(a, b, rng);
    return grad_check([&](ad::Tape& t, const auto& x) { return red(t, ad::substitute_rows(x[0], x[1], idx)); },
                      {random_matrix(a, b, rng), random_matrix(1, b, rng)});
  });
  cases.emplace_back("sum", [](Rng& rng) {
    const Index a = dim(rng), b = dim(rng);
    const double c = rng.normal();
    return grad_check([&](ad::Tape&, const auto& x) { return ad::scale(ad::sum(x[0]), c); }, {random_matrix(a, b, rng)});
  });
  cases.emplace_back("weighted_mean", [](Rng& rng) {
    const Index a = dim(rng);
    std::vector<double> w;
    for (Index i = 0; i < a; ++i) w.push_back(0.1 + 10.0 * rng.uniform());
    return grad_check([&](ad::Tape&, const auto& x) { return ad::weighted_mean(x[0], w); }, {random_matrix(a, 1, rng)});
  });
  cases.emplace_back("bce_with_logits", [](Rng& rng) {
    const Index a = dim(rng);
    std::vector<double> y, w;
    for (Index i = 0; i < a; ++i) {
      y.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
      w.push_back(1.0 + static_cast<double>(rng.below(5)));
    }
    return grad_check([&](ad::Tape&, const auto& x) { return ad::bce_with_logits(x[0], y, w); },
                      {random_matrix(a, 1, rng, 3.0)});
  });
  cases.emplace_back("pretrain_loss", [](Rng& rng) { return PretrainLossInstance(rng).check(); });
  cases.emplace_back("decoder_bce", [](Rng& rng) { return decoder_loss_check(rng); });
  return cases;
}

}  // namespace wbt::oracle
