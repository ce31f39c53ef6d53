// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full detector: encoder (+ optional PEFT modules), HA-MoE fusion and
// classifier head, all parameters in one store.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/encoder.hpp"
#include "ssladd/hamoe.hpp"
#include "ssladd/head.hpp"
#include "ssladd/peft.hpp"

namespace ssladd {

struct ModelConfig {
  EncoderConfig encoder;
  PeftConfig peft{.lora_rank = 8, .adapter_dim = 8};
  HamoeConfig hamoe;
  HeadConfig head;

  void Validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class FreezeMode { kFull, kFrozenSsl, kAdapterOnly };
std::string_view FreezeModeName(FreezeMode m);
FreezeMode FreezeModeFromName(std::string_view name);

// Which parameters are trainable in each training phase.
enum class Phase { kPretrain, kFinetune };

class Model {
 public:
  Model() = default;
  // Builds encoder, HA-MoE and head from `seed`; PEFT modules are injected
  // when cfg.peft is enabled.
  static Model Create(const ModelConfig& cfg, std::uint64_t seed);
  // Reassembles a model from stored parameters; the store must have exactly
  // the parameters and buffers (names, groups, shapes) `cfg` describes.
  static Model FromStore(const ModelConfig& cfg, ParameterStore store);

  // Adds PEFT modules to a model built without them and records `cfg` in
  // the model config. Errors when PEFT is already present.
  void InjectPeft(const PeftConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  bool has_peft() const { return HasPeft(store_); }

  // Pretraining trains PEFT modules only. Fine-tuning trains HA-MoE and head
  // plus, per mode, nothing else (frozen_ssl), the PEFT modules
  // (adapter_only) or everything (full).
  void SetTrainable(Phase phase, FreezeMode mode = FreezeMode::kFull);
  void FreezeAll();
  // True when some adapter parameter is trainable; batch norm then runs in
  // training mode.
  bool AdaptersTrainable() const;

  ParamCounts CountTrainable() const { return store_.Count(); }

  friend bool operator==(const Model&, const Model&) = default;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
};

struct PretrainOutput {
  ag::Var loss;
  std::size_t num_masked = 0;
};
// Masked contrastive objective on one waveform. Masks and distractors come
// from `rng`.
PretrainOutput PretrainForward(ForwardContext& ctx, const ModelConfig& cfg, std::span<const float> samples, Rng& rng);

struct ClassifierOutput {
  std::vector<ag::Var> hidden;  // all L block outputs
  HamoeOutput fusion;
  ag::Var embedding;  // pooled utterance embedding [2D]
  ag::Var logits;     // [1 x 2]
};
ClassifierOutput ClassifierForward(ForwardContext& ctx, const ModelConfig& cfg, std::span<const float> samples);

// Evaluation-mode conveniences (no gradients, batch norm uses running stats).
double Score(const Model& model, std::span<const float> samples);
Tensor Logits(const Model& model, std::span<const float> samples);
Tensor Embedding(const Model& model, std::span<const float> samples);

}  // namespace ssladd
