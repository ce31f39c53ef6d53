// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "ssladd/autograd.hpp"

namespace ssladd {

std::vector<double> Softmax(std::span<const double> logits) {
  if (logits.empty()) Fail(ErrorCategory::kInvalidArgument, "empty input");
  for (double v : logits)
    if (!std::isfinite(v)) Fail(ErrorCategory::kNumeric, "non-finite");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - mx));
  for (double& v : out) v /= z;
  return out;
}

Tensor AspPool(const Tensor& x, const Tensor& attention) {
  if (x.empty()) Fail(ErrorCategory::kInvalidArgument, "empty sequence");
  if (x.rank() != 2) Fail(ErrorCategory::kInvalidArgument, "AspPool expects a [t x d] matrix");
  ag::Tape tape(false);
  return ag::AspPool(tape.Constant(x), tape.Constant(attention)).value();
}

Tensor Conv2dSame(const Tensor& x, const Tensor& kernels) {
  ag::Tape tape(false);
  return ag::Conv2dSame(tape.Constant(x), tape.Constant(kernels)).value();
}

double CosineSim(std::span<const double> a, std::span<const double> b) {
  Require(a.size() == b.size(), "cosine similarity needs equal-length vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) Fail(ErrorCategory::kInvalidArgument, "zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double Sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace ssladd
