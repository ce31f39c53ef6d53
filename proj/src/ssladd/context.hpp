// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssladd/autograd.hpp"
#include "ssladd/params.hpp"

namespace ssladd {

// Everything one forward pass needs besides its inputs. Parameters are read
// through `store`; nothing in the store is modified during a forward pass.
// Batch-norm statistics observed in training mode are appended to
// `bn_updates` (keyed by the batch-norm prefix) so the caller can fold them
// into the running buffers in a fixed order.
struct ForwardContext {
  ag::Tape& tape;
  const ParameterStore& store;
  bool adapters_training = false;
  std::vector<std::pair<std::string, ag::BatchNormStats>>* bn_updates = nullptr;
  std::vector<Tensor>* attention_probs = nullptr;

  ag::Var P(const std::string& name) const { return store.Use(tape, name); }
};

}  // namespace ssladd
