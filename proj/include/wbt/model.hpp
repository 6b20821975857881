#pragma once

// Weighted bipartite GCN encoder, projector/predictor heads, EMA target network
// and the link decoder. Parameters live in plain structs of Eigen matrices;
// a forward pass binds them onto an autodiff tape through a Binding.

#include "wbt/autodiff.hpp"
#include "wbt/optim.hpp"
#include "wbt/random.hpp"
#include "wbt/types.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace wbt {

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

/// Two-layer MLP head: second(PReLU(first(h))).
struct Mlp {
  Linear first;
  Matrix slope;  // 1 x 1 PReLU slope
  Linear second;
};

struct EncoderParams {
  Linear input_u;               // d_u -> input_dim
  Linear input_v;               // d_v -> input_dim
  std::vector<Linear> layers;   // graph convolutions, input_dim -> ... -> output_dim
  Matrix unk_u;                 // 1 x output_dim
  Matrix unk_v;                 // 1 x output_dim
};

struct Heads {
  Mlp projector_u;
  Mlp projector_v;
  Mlp predictor_u;
  Mlp predictor_v;
};

struct Network {
  EncoderParams encoder;
  Heads heads;
};

/// Online network, its EMA target copy, and the EMA coefficient.
struct ModelState {
  Network online;
  Network target;
  double tau = 0.99;
};

/// Link decoder MLP over [h_u || h_v]; ReLU between layers, final layer
/// emits one logit.
struct DecoderParams {
  std::vector<Linear> layers;
};

struct ModelDims {
  Index d_u = 0;
  Index d_v = 0;
  Index input_dim = 64;
  Index hidden_dim = 256;
  Index output_dim = 128;
  Index num_layers = 2;
  Index head_hidden_dim = 256;
  std::vector<Index> decoder_hidden{256, 64};
};

// ---------------------------------------------------------------------------
// Parameter traversal. Works for const and non-const structs alike; visiting
// order is fixed so flattened views line up across copies.

template <class L, class F>
void visit_linear(L& l, const std::string& prefix, F& f) {
  f(prefix + ".weight", l.weight);
  f(prefix + ".bias", l.bias);
}

template <class M, class F>
void visit_mlp(M& m, const std::string& prefix, F& f) {
  visit_linear(m.first, prefix + ".first", f);
  f(prefix + ".slope", m.slope);
  visit_linear(m.second, prefix + ".second", f);
}

template <class N, class F>
void visit_params(N& net, const std::string& prefix, F&& f) {
  visit_linear(net.encoder.input_u, prefix + "encoder.input_u", f);
  visit_linear(net.encoder.input_v, prefix + "encoder.input_v", f);
  for (std::size_t l = 0; l < net.encoder.layers.size(); ++l)
    visit_linear(net.encoder.layers[l], prefix + "encoder.layers." + std::to_string(l), f);
  f(prefix + "encoder.unk_u", net.encoder.unk_u);
  f(prefix + "encoder.unk_v", net.encoder.unk_v);
  visit_mlp(net.heads.projector_u, prefix + "heads.projector_u", f);
  visit_mlp(net.heads.projector_v, prefix + "heads.projector_v", f);
  visit_mlp(net.heads.predictor_u, prefix + "heads.predictor_u", f);
  visit_mlp(net.heads.predictor_v, prefix + "heads.predictor_v", f);
}

template <class D, class F>
void visit_decoder(D& dec, const std::string& prefix, F&& f) {
  for (std::size_t l = 0; l < dec.layers.size(); ++l) visit_linear(dec.layers[l], prefix + "layers." + std::to_string(l), f);
}

// ---------------------------------------------------------------------------
// Initialization

inline Matrix glorot_uniform(Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

inline Linear init_linear(Index in, Index out, Rng& rng) {
  return Linear{glorot_uniform(in, out, rng), Matrix::Zero(1, static_cast<Eigen::Index>(out))};
}

inline Mlp init_mlp(Index in, Index hidden, Index out, Rng& rng) {
  Mlp m;
  m.first = init_linear(in, hidden, rng);
  m.slope = Matrix::Constant(1, 1, 0.25);
  m.second = init_linear(hidden, out, rng);
  return m;
}

inline Network init_network(const ModelDims& dims, Rng& rng) {
  if (dims.num_layers < 1) throw std::invalid_argument("encoder needs at least one layer");
  Network net;
  net.encoder.input_u = init_linear(dims.d_u, dims.input_dim, rng);
  net.encoder.input_v = init_linear(dims.d_v, dims.input_dim, rng);
  Index in = dims.input_dim;
  for (Index l = 0; l < dims.num_layers; ++l) {
    const Index out = (l + 1 == dims.num_layers) ? dims.output_dim : dims.hidden_dim;
    net.encoder.layers.push_back(init_linear(in, out, rng));
    in = out;
  }
  const auto d = static_cast<Eigen::Index>(dims.output_dim);
  net.encoder.unk_u.resize(1, d);
  net.encoder.unk_v.resize(1, d);
  for (Eigen::Index j = 0; j < d; ++j) net.encoder.unk_u(0, j) = 0.01 * rng.normal();
  for (Eigen::Index j = 0; j < d; ++j) net.encoder.unk_v(0, j) = 0.01 * rng.normal();
  net.heads.projector_u = init_mlp(dims.output_dim, dims.head_hidden_dim, dims.output_dim, rng);
  net.heads.projector_v = init_mlp(dims.output_dim, dims.head_hidden_dim, dims.output_dim, rng);
  net.heads.predictor_u = init_mlp(dims.output_dim, dims.head_hidden_dim, dims.output_dim, rng);
  net.heads.predictor_v = init_mlp(dims.output_dim, dims.head_hidden_dim, dims.output_dim, rng);
  return net;
}

/// Target starts as an exact copy of the online network.
inline ModelState init_model_state(const ModelDims& dims, double tau, Rng& rng) {
  ModelState s;
  s.online = init_network(dims, rng);
  s.target = s.online;
  s.tau = tau;
  return s;
}

inline DecoderParams init_decoder(Index embedding_dim, const std::vector<Index>& hidden, Rng& rng) {
  DecoderParams dec;
  Index in = 2 * embedding_dim;
  for (Index h : hidden) {
    dec.layers.push_back(init_linear(in, h, rng));
    in = h;
  }
  dec.layers.push_back(init_linear(in, 1, rng));
  return dec;
}

// ---------------------------------------------------------------------------
// Binding parameters onto a tape

/// Lazily turns parameter matrices into tape leaves, one leaf per matrix.
/// Target-network passes use requires_grad = false so no gradient can ever
/// reach them.
class Binding {
 public:
  Binding(ad::Tape& tape, bool requires_grad) : tape_(&tape), requires_grad_(requires_grad) {}

  ad::Tensor operator()(const Matrix& param) {
    auto it = leaves_.find(&param);
    if (it != leaves_.end()) return it->second;
    ad::Tensor t = tape_->leaf(param, requires_grad_);
    leaves_.emplace(&param, t);
    return t;
  }

  /// Gradient of a bound parameter, or a zero matrix when it was never used.
  Matrix grad(const Matrix& param) const {
    auto it = leaves_.find(&param);
    if (it == leaves_.end()) return Matrix::Zero(param.rows(), param.cols());
    return it->second.grad();
  }

  bool contains(const Matrix& param) const { return leaves_.contains(&param); }
  ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  bool requires_grad_;
  std::unordered_map<const Matrix*, ad::Tensor> leaves_;
};

inline ad::Tensor apply_linear(Binding& b, const Linear& l, ad::Tensor x) {
  return ad::add_row(ad::matmul(x, b(l.weight)), b(l.bias));
}

inline ad::Tensor apply_mlp(Binding& b, const Mlp& m, ad::Tensor x) {
  return apply_linear(b, m.second, ad::prelu(apply_linear(b, m.first, x), b(m.slope)));
}

struct EncodeOptions {
  double dropout = 0.0;       // applied between graph convolutions only
  Rng* rng = nullptr;         // required when dropout > 0
  bool relu_on_output = false;  // literal form: ReLU after every layer
};

struct Embeddings {
  ad::Tensor u;
  ad::Tensor v;
};

/// H^(l+1) = act(A_hat H^(l) W^(l) + b^(l)) over the stacked [U; V] node set,
/// where H^(0) stacks the per-partition input projections of x_u and x_v.
/// The last layer is linear unless relu_on_output is set.
inline Embeddings encode(Binding& b, const EncoderParams& p, const std::shared_ptr<const SparseMatrix>& adj,
                         ad::Tensor x_u, ad::Tensor x_v, const EncodeOptions& opt = {}) {
  const Eigen::Index n_u = x_u.rows();
  const Eigen::Index n_v = x_v.rows();
  if (adj->rows() != n_u + n_v || adj->cols() != n_u + n_v)
    throw std::invalid_argument("encode: adjacency is " + std::to_string(adj->rows()) + "x" +
                                std::to_string(adj->cols()) + " but features have " + std::to_string(n_u) + "+" +
                                std::to_string(n_v) + " rows");
  if (x_u.cols() != p.input_u.weight.rows() || x_v.cols() != p.input_v.weight.rows())
    throw std::invalid_argument("encode: feature dimension does not match the input projections");
  ad::Tensor h = ad::concat_rows(apply_linear(b, p.input_u, x_u), apply_linear(b, p.input_v, x_v));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const bool last = l + 1 == p.layers.size();
    h = ad::add_row(ad::spmm(adj, ad::matmul(h, b(p.layers[l].weight))), b(p.layers[l].bias));
    if (!last || opt.relu_on_output) h = ad::relu(h);
    if (!last && opt.dropout > 0.0) {
      if (opt.rng == nullptr) throw std::invalid_argument("encode: dropout requires an rng");
      h = ad::dropout(h, opt.dropout, *opt.rng);
    }
  }
  return {ad::slice_rows(h, 0, n_u), ad::slice_rows(h, n_u, n_v)};
}

/// Z_U = projector_u(H_U), Z_V = projector_v(H_V).
inline Embeddings project(Binding& b, const Heads& heads, ad::Tensor h_u, ad::Tensor h_v) {
  return {apply_mlp(b, heads.projector_u, h_u), apply_mlp(b, heads.projector_v, h_v)};
}

/// P_U = predictor_u(Z_U), P_V = predictor_v(Z_V).
inline Embeddings predict_heads(Binding& b, const Heads& heads, ad::Tensor z_u, ad::Tensor z_v) {
  return {apply_mlp(b, heads.predictor_u, z_u), apply_mlp(b, heads.predictor_v, z_v)};
}

/// One logit per (u, v) pair: MLP([emb_u[u] || emb_v[v]]).
inline ad::Tensor decode_logits(Binding& b, const DecoderParams& dec, ad::Tensor emb_u, ad::Tensor emb_v,
                                const std::vector<std::pair<Index, Index>>& pairs) {
  std::vector<Index> us, vs;
  us.reserve(pairs.size());
  vs.reserve(pairs.size());
  for (const auto& [u, v] : pairs) {
    if (u >= static_cast<Index>(emb_u.rows()) || v >= static_cast<Index>(emb_v.rows()))
      throw std::out_of_range("decode_logits: pair (" + std::to_string(u) + ", " + std::to_string(v) +
                              ") out of range");
    us.push_back(u);
    vs.push_back(v);
  }
  ad::Tensor h = ad::concat_cols(ad::gather_rows(emb_u, std::move(us)), ad::gather_rows(emb_v, std::move(vs)));
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    h = apply_linear(b, dec.layers[l], h);
    if (l + 1 < dec.layers.size()) h = ad::relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// EMA and flattening helpers

inline std::vector<ParamRef> param_refs(Network& net, const std::string& prefix = "") {
  std::vector<ParamRef> out;
  visit_params(net, prefix, [&](const std::string& name, Matrix& m) { out.push_back({name, &m}); });
  return out;
}

inline std::vector<ParamRef> param_refs(DecoderParams& dec, const std::string& prefix = "decoder.") {
  std::vector<ParamRef> out;
  visit_decoder(dec, prefix, [&](const std::string& name, Matrix& m) { out.push_back({name, &m}); });
  return out;
}

/// target <- tau * target + (1 - tau) * online over every encoder and head
/// parameter, including the UNK rows.
inline void ema_update(ModelState& state) {
  auto target = param_refs(state.target);
  auto online = param_refs(state.online);
  if (target.size() != online.size()) throw std::logic_error("ema_update: online/target layouts differ");
  const double tau = state.tau;
  for (std::size_t i = 0; i < target.size(); ++i) {
    Matrix& t = *target[i].value;
    const Matrix& o = *online[i].value;
    if (t.rows() != o.rows() || t.cols() != o.cols())
      throw std::logic_error("ema_update: shape mismatch at '" + target[i].name + "'");
    t = tau * t + (1.0 - tau) * o;
  }
}

namespace detail {

inline void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace detail

/// FNV-1a over parameter names, shapes and raw value bytes.
template <class Visit>
std::uint64_t checksum_with(Visit&& visit) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  visit([&](const std::string& name, const Matrix& m) {
    detail::fnv1a(h, name.data(), name.size());
    const std::int64_t shape[2] = {m.rows(), m.cols()};
    detail::fnv1a(h, shape, sizeof shape);
    detail::fnv1a(h, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  });
  return h;
}

inline std::uint64_t checksum(const Network& net) {
  return checksum_with([&](auto&& f) { visit_params(net, "", f); });
}

inline std::uint64_t checksum(const ModelState& s) {
  return checksum_with([&](auto&& f) {
    visit_params(s.online, "online.", f);
    visit_params(s.target, "target.", f);
  });
}

inline std::uint64_t checksum(const DecoderParams& d) {
  return checksum_with([&](auto&& f) { visit_decoder(d, "decoder.", f); });
}

}  // namespace wbt
