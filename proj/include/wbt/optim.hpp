#pragma once

#include "wbt/error.hpp"
#include "wbt/types.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace wbt {

/// A named, mutable view of one parameter matrix.
struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One Adam step with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// `state` is lazily sized on first use.
inline void adam_step(const std::vector<ParamRef>& params, const std::vector<const Matrix*>& grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const ParamRef& p : params) {
      state.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      state.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = *grads[i];
    const Matrix& p = *params[i].value;
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[i].rows() != p.rows() ||
        state.m[i].cols() != p.cols())
      throw std::invalid_argument("adam_step: shape mismatch for parameter '" + params[i].name + "'");
    if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i].value;
    const Matrix& g = *grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const auto m_hat = state.m[i].array() / c1;
    const auto v_hat = state.v[i].array() / c2;
    p.array() -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.array());
  }
}

}  // namespace wbt
