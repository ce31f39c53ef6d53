// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/hamoe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssladd {

void HamoeConfig::Validate() const {
  Require(compress_dim >= 1, "compress_dim must be positive");
  Require(num_experts >= 1, "num_experts must be positive");
  Require(top_k >= 1 && top_k <= num_experts, "top_k must lie in [1, num_experts]");
  Require(expert_hidden >= 1, "expert_hidden must be positive");
}

namespace {

void RequireEvenLayers(std::size_t num_layers) {
  if (num_layers == 0 || num_layers % 2 != 0)
    Fail(ErrorCategory::kInvalidArgument,
         "L must be even for the excitation bottleneck, got L=" + std::to_string(num_layers));
}

// Default bound 1/sqrt(fan_in); layers of the ReLU experts use the He bound
// sqrt(6/fan_in) for their weights.
void AddLinear(ParameterStore& store, const std::string& prefix, std::size_t out, std::size_t in, bool bias,
               Rng& rng, bool he = false) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.Add(prefix + ".weight", UniformTensor({out, in}, he ? std::sqrt(6.0) * bound : bound, rng),
            ParamGroup::kHamoe);
  if (bias) store.Add(prefix + ".bias", UniformTensor({out}, bound, rng), ParamGroup::kHamoe);
}

}  // namespace

void InitHamoe(ParameterStore& store, std::size_t num_layers, std::size_t hidden_dim, const HamoeConfig& cfg,
               Rng& rng) {
  cfg.Validate();
  RequireEvenLayers(num_layers);
  const std::size_t flat = num_layers * hidden_dim, e = num_layers / 2;
  AddLinear(store, "hamoe.compress", cfg.compress_dim, hidden_dim, true, rng);
  store.Add("hamoe.pool.attention", UniformTensor({cfg.compress_dim}, 1.0 / std::sqrt(static_cast<double>(cfg.compress_dim)), rng),
            ParamGroup::kHamoe);
  AddLinear(store, "hamoe.score", 1, 2 * cfg.compress_dim, true, rng);
  store.Add("hamoe.excite.w1", UniformTensor({e, num_layers}, 1.0 / std::sqrt(static_cast<double>(num_layers)), rng),
            ParamGroup::kHamoe);
  store.Add("hamoe.excite.w2", UniformTensor({num_layers, e}, 1.0 / std::sqrt(static_cast<double>(e)), rng),
            ParamGroup::kHamoe);
  AddLinear(store, "hamoe.gate", cfg.num_experts, flat, true, rng);
  for (std::size_t i = 0; i < cfg.num_experts; ++i) {
    const std::string pre = "hamoe.expert" + std::to_string(i);
    AddLinear(store, pre + ".fc1", cfg.expert_hidden, flat, true, rng, true);
    AddLinear(store, pre + ".fc2", hidden_dim, cfg.expert_hidden, true, rng, true);
  }
}

GateDecision SelectExperts(const Tensor& probs, std::size_t top_k) {
  Require(probs.rank() == 2, "gate probabilities must be [T x N]");
  const std::size_t t = probs.dim(0), n = probs.dim(1);
  Require(top_k >= 1 && top_k <= n, "top_k must lie in [1, num_experts]");
  GateDecision d{probs, std::vector<std::vector<std::size_t>>(t), Tensor({t, n}, 0.0)};
  std::vector<std::size_t> order(n);
  for (std::size_t r = 0; r < t; ++r) {
    const double* p = probs.data() + r * n;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    double s = 0.0;
    for (std::size_t k = 0; k < top_k; ++k) s += p[order[k]];
    if (!(s > 0.0)) Fail(ErrorCategory::kNumeric, "gate assigns zero mass to the selected experts");
    for (std::size_t k = 0; k < top_k; ++k) {
      d.selected[r].push_back(order[k]);
      d.weights[r * n + order[k]] = p[order[k]] / s;
    }
  }
  return d;
}

ag::Var MoeMix(ag::Var probs, std::span<const ag::Var> expert_outputs, std::size_t top_k, GateDecision* decision) {
  const Tensor& P = probs.value();
  Require(P.rank() == 2 && P.dim(1) == expert_outputs.size(),
          "moe: gate " + ShapeString(P.shape()) + " does not match " + std::to_string(expert_outputs.size()) +
              " experts");
  const std::size_t t = P.dim(0), n = P.dim(1);
  Require(n >= 1, "moe: no experts");
  const Tensor& e0 = expert_outputs[0].value();
  Require(e0.rank() == 2 && e0.dim(0) == t, "moe: expert output must be [T x D]");
  const std::size_t d = e0.dim(1);
  for (const ag::Var& e : expert_outputs) Require(e.value().shape() == e0.shape(), "moe: expert output shapes differ");

  GateDecision g = SelectExperts(P, top_k);
  Tensor y({t, d}, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t k = 0; k < top_k; ++k) {
      const double w = g.weights[r * n + g.selected[r][k]];
      const double* ev = expert_outputs[g.selected[r][k]].value().data() + r * d;
      for (std::size_t j = 0; j < d; ++j) y[r * d + j] += w * ev[j];
    }

  std::vector<ag::Var> parents{probs};
  parents.insert(parents.end(), expert_outputs.begin(), expert_outputs.end());
  std::vector<ag::Var> experts(expert_outputs.begin(), expert_outputs.end());
  ag::Var out = probs.tape->Record(
      std::move(y), std::span<const ag::Var>(parents),
      [probs, experts, sel = g.selected, wts = g.weights, t, n, d, top_k](ag::Tape& tp, std::uint32_t self) {
        const Tensor& gy = tp.grad(self);
        const Tensor& P = probs.value();
        std::vector<double> dw(top_k);
        for (std::size_t r = 0; r < t; ++r) {
          const double* gr = gy.data() + r * d;
          double s = 0.0;
          for (std::size_t k = 0; k < top_k; ++k) s += P[r * n + sel[r][k]];
          double mean_dw = 0.0;
          for (std::size_t k = 0; k < top_k; ++k) {
            const ag::Var& e = experts[sel[r][k]];
            const double* ev = e.value().data() + r * d;
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += gr[j] * ev[j];
            dw[k] = acc;
            mean_dw += acc * wts[r * n + sel[r][k]];
            if (e.requires_grad()) {
              double* de = tp.grad(e.id).data() + r * d;
              for (std::size_t j = 0; j < d; ++j) de[j] += wts[r * n + sel[r][k]] * gr[j];
            }
          }
          if (probs.requires_grad()) {
            Tensor& dp = tp.grad(probs.id);
            for (std::size_t k = 0; k < top_k; ++k) dp[r * n + sel[r][k]] += (dw[k] - mean_dw) / s;
          }
        }
      });
  if (decision) *decision = std::move(g);
  return out;
}

ag::Var LayerContribution(ForwardContext& ctx, ag::Var hidden) {
  ag::Var c = ag::Linear(hidden, ctx.P("hamoe.compress.weight"), ctx.P("hamoe.compress.bias"));
  ag::Var pooled = ag::AspPool(c, ctx.P("hamoe.pool.attention"));
  ag::Var row = ag::Reshape(pooled, {1, pooled.value().size()});
  return ag::Reshape(ag::Linear(row, ctx.P("hamoe.score.weight"), ctx.P("hamoe.score.bias")), {1});
}

ag::Var Excite(ForwardContext& ctx, ag::Var layer_scores) {
  const std::size_t l = layer_scores.value().size();
  RequireEvenLayers(l);
  ag::Var row = ag::Reshape(layer_scores, {1, l});
  ag::Var h = ag::Linear(ag::Linear(row, ctx.P("hamoe.excite.w1")), ctx.P("hamoe.excite.w2"));
  return ag::Reshape(ag::Sigmoid(h), {l});
}

ag::Var ExpertForward(ForwardContext& ctx, ag::Var flat, std::size_t expert) {
  const std::string pre = "hamoe.expert" + std::to_string(expert);
  ag::Var h = ag::Relu(ag::Linear(flat, ctx.P(pre + ".fc1.weight"), ctx.P(pre + ".fc1.bias")));
  return ag::Linear(h, ctx.P(pre + ".fc2.weight"), ctx.P(pre + ".fc2.bias"));
}

HamoeOutput HamoeForward(ForwardContext& ctx, const HamoeConfig& cfg, std::span<const ag::Var> hidden) {
  RequireEvenLayers(hidden.size());
  std::vector<ag::Var> scores;
  scores.reserve(hidden.size());
  for (const ag::Var& h : hidden) scores.push_back(LayerContribution(ctx, h));
  ag::Var vl = ag::Stack(scores);
  ag::Var vh = Excite(ctx, vl);
  ag::Var flat = ag::WeightedFlatten(hidden, vh);
  ag::Var probs = ag::RowSoftmax(ag::Linear(flat, ctx.P("hamoe.gate.weight"), ctx.P("hamoe.gate.bias")));
  std::vector<ag::Var> experts;
  experts.reserve(cfg.num_experts);
  for (std::size_t i = 0; i < cfg.num_experts; ++i) experts.push_back(ExpertForward(ctx, flat, i));
  HamoeOutput out{{}, vl, vh, {}};
  out.mixed = MoeMix(probs, experts, cfg.top_k, &out.gate);
  return out;
}

Tensor Excitation(const Tensor& layer_scores, const Tensor& w1, const Tensor& w2) {
  const std::size_t l = layer_scores.size();
  RequireEvenLayers(l);
  Require(w1.rank() == 2 && w1.dim(1) == l && w2.rank() == 2 && w2.dim(0) == l && w2.dim(1) == w1.dim(0),
          "excitation weights do not match " + std::to_string(l) + " layers");
  ag::Tape tape(false);
  ag::Var row = tape.Constant(layer_scores.Reshaped({1, l}));
  ag::Var h = ag::Linear(ag::Linear(row, tape.Constant(w1)), tape.Constant(w2));
  return ag::Sigmoid(h).value().Reshaped({l});
}

Tensor WeightAndFlatten(std::span<const Tensor> hidden, const Tensor& excitation) {
  ag::Tape tape(false);
  std::vector<ag::Var> layers;
  for (const Tensor& h : hidden) layers.push_back(tape.Constant(h));
  return ag::WeightedFlatten(layers, tape.Constant(excitation)).value();
}

std::vector<double> ExpertUsage(const GateDecision& gate, std::size_t num_experts) {
  std::vector<double> use(num_experts, 0.0);
  if (gate.selected.empty()) return use;
  for (const auto& s : gate.selected)
    for (std::size_t k : s) use.at(k) += 1.0;
  for (double& u : use) u /= static_cast<double>(gate.selected.size());
  return use;
}

}  // namespace ssladd
