// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "ssladd/tensor.hpp"

namespace ssladd {

/// Numerically stable softmax (max-subtracted). Throws on empty or
/// non-finite input.
std::vector<double> Softmax(std::span<const double> logits);

/// Attentive statistics pooling of frames x [t x d]: frame scores x_t . w,
/// softmax over t, then weighted mean || weighted std. The variance is
/// floored at 1e-9 before the square root.
Tensor AspPool(const Tensor& x, const Tensor& attention);

/// Zero-padded, stride-1 3x3 convolution of x [c_in x h x w] with
/// kernels [c_out x c_in x 3 x 3].
Tensor Conv2dSame(const Tensor& x, const Tensor& kernels);

double CosineSim(std::span<const double> a, std::span<const double> b);

double Sigmoid(double x);

}  // namespace ssladd
