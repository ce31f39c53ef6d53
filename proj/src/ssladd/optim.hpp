// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "ssladd/params.hpp"

namespace ssladd {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  void Validate() const;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Per-parameter gradient slots aligned with ParameterStore ids. An empty
// tensor means "no gradient this step".
using GradientSet = std::vector<Tensor>;

GradientSet EmptyGradients(const ParameterStore& store);
void AccumulateGradients(GradientSet& dst, const std::vector<std::pair<std::size_t, Tensor>>& grads, double scale = 1.0);

double GlobalNorm(const GradientSet& grads);
// Rescales all gradients so the global L2 norm is at most max_norm. Returns
// the norm before clipping. max_norm <= 0 disables clipping.
double ClipGradNorm(GradientSet& grads, double max_norm);

// Adam with bias correction and decoupled weight decay applied as
// p <- p * (1 - lr * wd) before the moment update. Frozen parameters and
// parameters without a gradient are left untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) { cfg_.Validate(); }

  void Step(ParameterStore& store, const GradientSet& grads);
  std::uint64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace ssladd
