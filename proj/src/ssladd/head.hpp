// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Utterance classifier on top of the mixed frame features and the
// class-weighted cross-entropy used to train it.

#pragma once

#include <cstddef>
#include <span>

#include "ssladd/context.hpp"

namespace ssladd {

enum class Label : int { kSpoof = 0, kBonafide = 1 };

struct HeadConfig {
  std::size_t hidden = 32;
  double bonafide_weight = 0.9;
  double spoof_weight = 0.1;

  void Validate() const;
  double WeightOf(Label l) const { return l == Label::kBonafide ? bonafide_weight : spoof_weight; }
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

void InitHead(ParameterStore& store, std::size_t feature_dim, const HeadConfig& cfg, Rng& rng);

// Attentive statistics pooling of Y [T x D] into the utterance embedding [2D].
ag::Var PoolUtterance(ForwardContext& ctx, ag::Var frames);
// Two logits [1 x 2], index 0 = spoof, 1 = bona fide.
ag::Var Classify(ForwardContext& ctx, ag::Var embedding);

// Detection score: higher means more likely bona fide.
double ScoreFromLogits(const Tensor& logits);

// -log softmax(logits)[label] for one utterance, logits [1 x 2].
ag::Var CrossEntropy(ag::Var logits, Label label);

// sum_i w(label_i) * CE_i / sum_i w(label_i) over a batch of logit rows.
double WeightedCrossEntropy(std::span<const Tensor> logits, std::span<const Label> labels, const HeadConfig& cfg);

}  // namespace ssladd
