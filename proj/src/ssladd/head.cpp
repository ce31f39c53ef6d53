// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/head.hpp"

#include <algorithm>
#include <cmath>

namespace ssladd {

void HeadConfig::Validate() const {
  Require(hidden >= 1, "head hidden size must be positive");
  Require(bonafide_weight > 0.0 && spoof_weight > 0.0 && std::isfinite(bonafide_weight) && std::isfinite(spoof_weight),
          "class weights must be positive and finite");
}

void InitHead(ParameterStore& store, std::size_t feature_dim, const HeadConfig& cfg, Rng& rng) {
  cfg.Validate();
  const double b0 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  store.Add("head.pool.attention", UniformTensor({feature_dim}, b0, rng), ParamGroup::kHead);
  // MLP weights use the He bound sqrt(6/fan_in), biases 1/sqrt(fan_in).
  const double b1 = 1.0 / std::sqrt(static_cast<double>(2 * feature_dim));
  const double he = std::sqrt(6.0);
  store.Add("head.fc1.weight", UniformTensor({cfg.hidden, 2 * feature_dim}, he * b1, rng), ParamGroup::kHead);
  store.Add("head.fc1.bias", UniformTensor({cfg.hidden}, b1, rng), ParamGroup::kHead);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  store.Add("head.fc2.weight", UniformTensor({2, cfg.hidden}, he * b2, rng), ParamGroup::kHead);
  store.Add("head.fc2.bias", UniformTensor({2}, b2, rng), ParamGroup::kHead);
}

ag::Var PoolUtterance(ForwardContext& ctx, ag::Var frames) {
  return ag::AspPool(frames, ctx.P("head.pool.attention"));
}

ag::Var Classify(ForwardContext& ctx, ag::Var embedding) {
  ag::Var row = ag::Reshape(embedding, {1, embedding.value().size()});
  ag::Var h = ag::Relu(ag::Linear(row, ctx.P("head.fc1.weight"), ctx.P("head.fc1.bias")));
  return ag::Linear(h, ctx.P("head.fc2.weight"), ctx.P("head.fc2.bias"));
}

double ScoreFromLogits(const Tensor& logits) {
  Require(logits.size() == 2, "expected two logits");
  return logits[1] - logits[0];
}

namespace {

double LogSoftmaxAt(const double* l, std::size_t idx) {
  const double m = std::max(l[0], l[1]);
  return l[idx] - (m + std::log(std::exp(l[0] - m) + std::exp(l[1] - m)));
}

}  // namespace

ag::Var CrossEntropy(ag::Var logits, Label label) {
  const Tensor& z = logits.value();
  Require(z.size() == 2, "cross-entropy expects two logits");
  const auto idx = static_cast<std::size_t>(label);
  const double loss = -LogSoftmaxAt(z.data(), idx);
  return logits.tape->Record(Tensor({1}, loss), {logits}, [logits, idx](ag::Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    const Tensor& z = logits.value();
    const double m = std::max(z[0], z[1]);
    const double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    const double p[2] = {e0 / (e0 + e1), e1 / (e0 + e1)};
    Tensor& dz = t.grad(logits.id);
    for (std::size_t i = 0; i < 2; ++i) dz[i] += g * (p[i] - (i == idx ? 1.0 : 0.0));
  });
}

double WeightedCrossEntropy(std::span<const Tensor> logits, std::span<const Label> labels, const HeadConfig& cfg) {
  Require(!logits.empty(), "empty batch");
  Require(logits.size() == labels.size(), "one label per logit row required");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Require(logits[i].size() == 2, "expected two logits per utterance");
    const double w = cfg.WeightOf(labels[i]);
    num += -w * LogSoftmaxAt(logits[i].data(), static_cast<std::size_t>(labels[i]));
    den += w;
  }
  return num / den;
}

}  // namespace ssladd
