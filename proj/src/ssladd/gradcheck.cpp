// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ssladd {

double GradCheck(const DifferentiableFn& fn, const std::vector<Tensor>& params, double eps) {
  Require(eps >= 1e-7 && eps <= 1e-3, "grad_check eps must lie in [1e-7, 1e-3]");
  LossAndGrad base = fn(params);
  if (!std::isfinite(base.loss)) Fail(ErrorCategory::kNumeric, "non-finite loss");
  Require(base.grads.size() == params.size(), "grad_check: gradient count does not match parameter count");

  std::vector<Tensor> probe = params;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Require(base.grads[p].size() == params[p].size(), "grad_check: gradient shape mismatch");
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      probe[p][i] = orig + eps;
      const double up = fn(probe).loss;
      probe[p][i] = orig - eps;
      const double down = fn(probe).loss;
      probe[p][i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) Fail(ErrorCategory::kNumeric, "non-finite loss");
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = base.grads[p][i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

DifferentiableFn FromGraph(GraphBuilder build) {
  return [build = std::move(build)](const std::vector<Tensor>& params) {
    ag::Tape tape(true);
    std::vector<ag::Var> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.Leaf(p, true));
    ag::Var loss = build(tape, leaves);
    LossAndGrad out;
    out.loss = loss.value()[0];
    tape.Backward(loss);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const Tensor* g = tape.grad_or_null(leaves[i]);
      out.grads.push_back(g ? *g : Tensor(params[i].shape(), 0.0));
    }
    return out;
  };
}

}  // namespace ssladd
