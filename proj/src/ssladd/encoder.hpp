// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small wav2vec2-style encoder: strided convolutional feature encoder, span
// masking, a frozen nearest-neighbour quantizer, a post-norm transformer
// context network that exposes every block output, and the masked-frame
// contrastive objective.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssladd/context.hpp"
#include "ssladd/params.hpp"
#include "ssladd/tensor.hpp"

namespace ssladd {

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 128;
  // Kernel == stride for every conv layer, so the frame rate is exactly
  // 1 / product(conv_strides) and N = floor(samples / product).
  std::vector<std::size_t> conv_strides{2, 2, 2};
  std::size_t conv_channels = 32;  // latent width D_z
  std::size_t quant_dim = 16;      // D_q
  std::size_t codebook_size = 64;
  double mask_prob = 0.065;
  std::size_t mask_span = 10;
  double temperature = 0.1;
  std::size_t num_distractors = 10;

  std::size_t SamplesPerFrame() const;
  void Validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Adds encoder parameters (group kEncoder) and quantizer buffers.
void InitEncoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);

std::size_t NumFrames(std::size_t num_samples, const EncoderConfig& cfg);

// Latent frames Z [N x D_z] of a waveform.
ag::Var FeatureEncode(ForwardContext& ctx, const EncoderConfig& cfg, std::span<const float> samples);

// Sorted set of masked frame indices. Spans of cfg.mask_span frames start at
// round(mask_prob * n) distinct positions (at least one when mask_prob > 0);
// spans may overlap and are clipped to the sequence.
std::vector<std::size_t> SampleMask(std::size_t n, double mask_prob, std::size_t mask_span, Rng& rng);

struct Quantized {
  Tensor values;                     // [N x D_q], rows are codebook rows
  std::vector<std::size_t> indices;  // chosen codebook row per frame
};
// Nearest codebook row (squared Euclidean, lowest index on ties) of each
// projected frame z . proj^T, with proj [D_q x D_z] and codebook [V x D_q].
Quantized Quantize(const Tensor& z, const Tensor& codebook, const Tensor& proj);

// Frame embedding fed to the first block: layer-norm(z W^T + b + positions).
ag::Var EmbedFrames(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var z);
// Runs every transformer block; returns all L block outputs [N x D].
std::vector<ag::Var> RunBlocks(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var x);
std::vector<ag::Var> TransformerForward(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var z);

// Sinusoidal position table [n x d].
Tensor PositionTable(std::size_t n, std::size_t d);

// For each masked frame, `count` distractor frame indices drawn uniformly
// from the other masked frames (without replacement when enough exist, with
// replacement otherwise). Falls back to unmasked frames when only one frame
// is masked.
std::vector<std::vector<std::size_t>> SampleDistractors(std::span<const std::size_t> masked, std::size_t n,
                                                        std::size_t count, Rng& rng);

// Mean over masked t of -log softmax_j(cos(c_t, cand_j) / k)[0] where the
// candidates are q_t followed by the distractors of t. c is the projected
// context [N x D_q], q the quantized targets [N x D_q] (treated as constant).
// Distractors quantized to the same row as the target are skipped.
ag::Var ContrastiveLoss(ag::Var c, const Tensor& q, std::span<const std::size_t> masked,
                        const std::vector<std::vector<std::size_t>>& distractors, double temperature);
double ContrastiveLossValue(const Tensor& c, const Tensor& q, std::span<const std::size_t> masked,
                            const std::vector<std::vector<std::size_t>>& distractors, double temperature);

}  // namespace ssladd
