// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic stand-in corpus. Bona fide utterances are harmonic carriers with
// slow amplitude/frequency modulation and a low noise floor; spoofed ones
// are the same carrier (same seed) with one signal-processing artifact
// injected, so the artifact is the only systematic class difference.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/head.hpp"
#include "ssladd/tensor.hpp"

namespace ssladd {

struct Waveform {
  std::vector<float> samples;
  std::uint32_t sample_rate = 0;

  friend bool operator==(const Waveform&, const Waveform&) = default;
};

enum class Artifact { kPhaseJump, kSpectralNotch, kQuantize8bit, kFrameRepeat };
inline constexpr Artifact kAllArtifacts[] = {Artifact::kPhaseJump, Artifact::kSpectralNotch, Artifact::kQuantize8bit,
                                            Artifact::kFrameRepeat};
std::string_view ArtifactName(Artifact a);
Artifact ArtifactFromName(std::string_view name);

inline constexpr double kPeak = 0.9;

Waveform GenBonafide(std::uint64_t seed, double duration_s, std::uint32_t sample_rate);
Waveform GenSpoof(std::uint64_t seed, double duration_s, std::uint32_t sample_rate, Artifact artifact);

// Fixed-length view: longer inputs are cropped at an offset drawn from
// `offset_seed`, shorter ones are tiled (abc -> abcabca).
Waveform CropOrPad(const Waveform& w, std::size_t target_len, std::uint64_t offset_seed);

// Additive colored noise plus a short random FIR filter. Every random draw
// is made before `strength` is applied, so for a fixed rng state the
// distortion scales linearly with strength; strength 0 returns the input.
Waveform Augment(const Waveform& w, Rng& rng, double strength);

double Rms(std::span<const float> x);

// ---- recipes -----------------------------------------------------------------

// Inline generation recipe stored in manifests, e.g.
//   synth:kind=spoof;artifact=phase_jump;seed=17;dur=0.5;sr=4000
struct Recipe {
  Label label = Label::kBonafide;
  std::optional<Artifact> artifact;
  std::uint64_t seed = 0;
  double duration_s = 0.5;
  std::uint32_t sample_rate = 4000;

  friend bool operator==(const Recipe&, const Recipe&) = default;
};

bool IsRecipe(std::string_view s);
Recipe ParseRecipe(std::string_view s);
std::string FormatRecipe(const Recipe& r);
Waveform Synthesize(const Recipe& r);

// ---- corpus ------------------------------------------------------------------

enum class Split { kPretrain, kTrain, kDev, kEval };
std::string_view SplitName(Split s);
Split SplitFromName(std::string_view name);

struct CorpusConfig {
  std::size_t pretrain = 2000;
  std::size_t train = 1600;
  std::size_t dev = 400;
  std::size_t eval = 500;
  std::uint32_t sample_rate = 4000;
  double duration_s = 0.5;
  double duration_jitter_s = 0.1;  // durations drawn uniformly in +-jitter

  void Validate() const;
  friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

}  // namespace ssladd
