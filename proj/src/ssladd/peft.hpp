// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter-efficient modules for the transformer blocks:
//  * LoRA on the query/key/value projections: h = W0 x + B A x + b, with no
//    extra scaling factor. B starts at zero.
//  * Bottleneck convolutional adapter after MHA and after FFN:
//      x' = BN(Conv2d(relu(x W_down)))
//      h  = relu(flatten_channels(Conv2d(x')) W_up) + x
//    The [T x s] bottleneck is a one-channel T-by-s image; the first 3x3
//    conv expands it to C channels, the second keeps C. W_up starts at zero.

#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "ssladd/context.hpp"
#include "ssladd/encoder.hpp"

namespace ssladd {

struct PeftConfig {
  std::size_t lora_rank = 0;    // 0 disables LoRA
  std::size_t adapter_dim = 0;  // bottleneck width s; 0 disables adapters
  std::size_t adapter_channels = 8;
  bool lora_query = true;
  bool lora_key = true;
  bool lora_value = true;
  bool adapter_after_mha = true;
  bool adapter_after_ffn = true;
  bool freeze_base = true;

  bool enabled() const { return lora_rank > 0 || adapter_dim > 0; }
  void Validate(const EncoderConfig& enc) const;
  friend bool operator==(const PeftConfig&, const PeftConfig&) = default;
};

struct LinearParams {
  Tensor weight;  // W0 [d_out x d_in]
  Tensor bias;    // b [d_out]
};

struct LoraParams {
  Tensor a;  // [r x d_in]
  Tensor b;  // [d_out x r]
};

// h = W0 x + B (A x) + b for a single input vector.
Tensor LoraForward(std::span<const double> x, const LinearParams& base, const LoraParams& lora);

struct AdapterParams {
  Tensor down;     // [s x F]
  Tensor conv1;    // [C x 1 x 3 x 3]
  Tensor bn_gamma; // [C]
  Tensor bn_beta;  // [C]
  Tensor running_mean;
  Tensor running_var;
  Tensor conv2;    // [C x C x 3 x 3]
  Tensor up;       // [F x C*s]
};

AdapterParams MakeAdapterParams(std::size_t features, std::size_t bottleneck, std::size_t channels, Rng& rng);

enum class Mode { kTrain, kEval };

// Applies the adapter to x [T x F]. In training mode the running batch-norm
// statistics in `p` are updated (momentum 0.1).
Tensor AdapterForward(const Tensor& x, AdapterParams& p, Mode mode);

struct AdapterVars {
  ag::Var down, conv1, bn_gamma, bn_beta, conv2, up;
};
ag::Var AdapterGraph(ag::Var x, const AdapterVars& v, bool training, const Tensor& running_mean,
                     const Tensor& running_var, ag::BatchNormStats* stats);

inline constexpr double kBatchNormMomentum = 0.1;
void UpdateRunningStats(Tensor& running_mean, Tensor& running_var, const ag::BatchNormStats& stats);

// Parameter naming inside the transformer.
std::string BlockPrefix(std::size_t layer);
std::string LoraPrefix(std::size_t layer, char target);          // target in {q,k,v}
std::string AdapterPrefix(std::size_t layer, const char* where);  // where in {"mha","ffn"}

// Attaches LoRA pairs to the selected projections and adapters at the
// selected insertion points of every block, then applies the freeze policy.
// Throws on a config with neither r nor s, and on a second injection.
void InjectPeft(ParameterStore& store, const EncoderConfig& enc, const PeftConfig& cfg, Rng& rng);
bool HasPeft(const ParameterStore& store);

struct PeftInventory {
  std::size_t lora_pairs = 0;
  std::size_t adapters = 0;
};
PeftInventory InventoryPeft(const ParameterStore& store, const EncoderConfig& enc);

// Graph-level helpers used by the transformer blocks. When the store has no
// LoRA pair under `lora_prefix`, this is the plain linear projection.
ag::Var ProjectWithLora(ForwardContext& ctx, ag::Var x, const std::string& base_prefix,
                        const std::string& lora_prefix);
// Identity when the store has no adapter under `prefix`.
ag::Var MaybeAdapter(ForwardContext& ctx, ag::Var x, const std::string& prefix);

}  // namespace ssladd
