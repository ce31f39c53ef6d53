// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "ssladd/autograd.hpp"
#include "ssladd/tensor.hpp"

namespace ssladd {

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;  // one per parameter tensor, same shapes
};

using DifferentiableFn = std::function<LossAndGrad(const std::vector<Tensor>& params)>;

// Maximum over all parameter entries of
//   |analytic - central difference| / max(|analytic|, |central difference|, 1e-8).
// eps must lie in [1e-7, 1e-3]. Throws "non-finite loss" if any evaluation
// is not finite.
double GradCheck(const DifferentiableFn& fn, const std::vector<Tensor>& params, double eps = 1e-5);

// Wraps a graph builder as a DifferentiableFn: each call records a fresh tape
// with one gradient-requiring leaf per parameter and runs Backward on the
// scalar returned by `build`.
using GraphBuilder = std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>& leaves)>;
DifferentiableFn FromGraph(GraphBuilder build);

}  // namespace ssladd
