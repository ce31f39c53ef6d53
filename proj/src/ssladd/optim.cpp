// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/optim.hpp"

#include <cmath>

namespace ssladd {

void AdamConfig::Validate() const {
  Require(lr > 0.0 && std::isfinite(lr), "learning rate must be positive");
  Require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  Require(eps > 0.0, "Adam eps must be positive");
  Require(weight_decay >= 0.0, "weight decay must be non-negative");
}

GradientSet EmptyGradients(const ParameterStore& store) { return GradientSet(store.size()); }

void AccumulateGradients(GradientSet& dst, const std::vector<std::pair<std::size_t, Tensor>>& grads, double scale) {
  for (const auto& [id, g] : grads) {
    Tensor& d = dst.at(id);
    if (d.empty()) d = Tensor(g.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += scale * g[i];
  }
}

double GlobalNorm(const GradientSet& grads) {
  double s = 0.0;
  for (const Tensor& g : grads)
    for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

double ClipGradNorm(GradientSet& grads, double max_norm) {
  const double norm = GlobalNorm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Tensor& g : grads)
      for (double& v : g.values()) v *= scale;
  }
  return norm;
}

void Adam::Step(ParameterStore& store, const GradientSet& grads) {
  Require(grads.size() == store.size(), "gradient set does not match the parameter store");
  if (m_.size() != store.size()) {
    m_.resize(store.size());
    v_.resize(store.size());
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t id = 0; id < store.size(); ++id) {
    Parameter& p = store.at(id);
    const Tensor& g = grads[id];
    if (p.frozen || g.empty()) continue;
    Require(g.shape() == p.value.shape(), "gradient shape mismatch for '" + p.name + "'");
    if (m_[id].empty()) {
      m_[id] = Tensor(p.value.shape(), 0.0);
      v_[id] = Tensor(p.value.shape(), 0.0);
    }
    Tensor& m = m_[id];
    Tensor& v = v_[id];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (cfg_.weight_decay != 0.0) p.value[i] *= decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace ssladd
