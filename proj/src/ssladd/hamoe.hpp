// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical layer-weighted mixture of experts over the stack of
// transformer block outputs.
//
//  1. Each block output H_l [T x D] is compressed by a shared linear map,
//     pooled with attentive statistics pooling and scored by a shared linear
//     map, giving one contribution scalar per layer (vector V_l [L]).
//  2. Squeeze-excitation: V_h = sigmoid(W2 (W1 V_l)), bottleneck L/2.
//  3. Each H_l is scaled by V_h[l]; layers are concatenated per frame into
//     F [T x L*D].
//  4. A softmax gate over N experts is computed per frame; the top-K experts
//     (ties broken towards the lower index) are evaluated and mixed with the
//     gate weights renormalized over the selected set.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssladd/context.hpp"

namespace ssladd {

struct HamoeConfig {
  std::size_t compress_dim = 32;
  std::size_t num_experts = 4;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 16;

  void Validate() const;
  friend bool operator==(const HamoeConfig&, const HamoeConfig&) = default;
};

// Adds the HA-MoE parameters for L layers of width D. L must be even.
void InitHamoe(ParameterStore& store, std::size_t num_layers, std::size_t hidden_dim, const HamoeConfig& cfg,
               Rng& rng);

struct GateDecision {
  Tensor probs;                                    // [T x N] softmax gate
  std::vector<std::vector<std::size_t>> selected;  // per frame, descending gate order
  Tensor weights;                                  // [T x N] renormalized, zero outside selected
};

// Top-K indices of each row of probs [T x N], descending; ties go to the
// lower expert index. Weights are renormalized over the chosen set.
GateDecision SelectExperts(const Tensor& probs, std::size_t top_k);

// Y_t = sum_{k in selected_t} w_tk * E_k(t) where each expert output is
// [T x D]. Gradient flows to the gate probabilities of the selected experts
// (through the renormalization) and to the rows of selected experts only.
ag::Var MoeMix(ag::Var probs, std::span<const ag::Var> expert_outputs, std::size_t top_k,
               GateDecision* decision = nullptr);

// Graph pieces, reading parameters "hamoe.*" from the context.
ag::Var LayerContribution(ForwardContext& ctx, ag::Var hidden);        // scalar [1]
ag::Var Excite(ForwardContext& ctx, ag::Var layer_scores);            // [L]
ag::Var ExpertForward(ForwardContext& ctx, ag::Var flat, std::size_t expert);  // [T x D]

struct HamoeOutput {
  ag::Var mixed;        // Y [T x D]
  ag::Var layer_scores; // V_l
  ag::Var excitation;   // V_h
  GateDecision gate;
};
HamoeOutput HamoeForward(ForwardContext& ctx, const HamoeConfig& cfg, std::span<const ag::Var> hidden);

// Tensor-level conveniences for inspection and tests.
Tensor Excitation(const Tensor& layer_scores, const Tensor& w1, const Tensor& w2);
Tensor WeightAndFlatten(std::span<const Tensor> hidden, const Tensor& excitation);

// Fraction of frames on which each expert was selected.
std::vector<double> ExpertUsage(const GateDecision& gate, std::size_t num_experts);

}  // namespace ssladd
