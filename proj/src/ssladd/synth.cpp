// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

namespace ssladd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum StreamTag : std::uint64_t { kCarrierStream = 0xC0, kArtifactStream = 0xA0 };

struct Carrier {
  std::vector<double> x;
  double f0 = 0.0;
};

Carrier MakeCarrier(std::uint64_t seed, double duration_s, std::uint32_t sr) {
  Require(duration_s > 0.0 && std::isfinite(duration_s), "duration must be positive");
  Require(sr > 0, "sample rate must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sr));
  Require(n >= 1, "duration too short for the sample rate");
  Rng rng = Rng::Derive(seed, {kCarrierStream});
  Carrier c;
  c.f0 = rng.Uniform(100.0, 300.0);
  const std::size_t harmonics = 3 + static_cast<std::size_t>(rng.Index(3));
  std::vector<double> amp(harmonics), phase(harmonics);
  for (std::size_t k = 0; k < harmonics; ++k) {
    amp[k] = rng.Uniform(0.7, 1.3) / static_cast<double>(k + 1);
    phase[k] = rng.Uniform(0.0, kTwoPi);
  }
  const double am_depth = rng.Uniform(0.2, 0.5), am_rate = rng.Uniform(1.0, 4.0), am_phase = rng.Uniform(0.0, kTwoPi);
  const double fm_depth = rng.Uniform(0.01, 0.03), fm_rate = rng.Uniform(2.0, 6.0), fm_phase = rng.Uniform(0.0, kTwoPi);
  const double noise = 0.02;

  c.x.resize(n);
  double phi = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / sr;
    double s = 0.0;
    for (std::size_t k = 0; k < harmonics; ++k) s += amp[k] * std::sin(static_cast<double>(k + 1) * phi + phase[k]);
    const double env = 1.0 + am_depth * std::sin(kTwoPi * am_rate * time + am_phase);
    c.x[t] = env * s + noise * rng.Normal();
    phi += kTwoPi * c.f0 * (1.0 + fm_depth * std::sin(kTwoPi * fm_rate * time + fm_phase)) / sr;
  }
  return c;
}

double PeakOf(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

double RmsOf(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

void ScaleInPlace(std::vector<double>& x, double g) {
  for (double& v : x) v *= g;
}

void PeakNormalize(std::vector<double>& x) {
  const double p = PeakOf(x);
  if (p > 0.0) ScaleInPlace(x, kPeak / p);
}

Waveform ToWaveform(const std::vector<double>& x, std::uint32_t sr) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(x.size());
  std::transform(x.begin(), x.end(), w.samples.begin(), [](double v) { return static_cast<float>(v); });
  return w;
}

// Sign flips on alternating segments of 3-8 ms: a pi phase jump of every
// component at each segment boundary.
void PhaseJump(std::vector<double>& x, std::uint32_t sr, Rng& rng) {
  std::size_t t = 0;
  bool flip = rng.Uniform() < 0.5;
  while (t < x.size()) {
    const auto len = static_cast<std::size_t>(std::max(1.0, rng.Uniform(0.003, 0.008) * sr));
    const std::size_t end = std::min(x.size(), t + len);
    if (flip)
      for (std::size_t i = t; i < end; ++i) x[i] = -x[i];
    flip = !flip;
    t = end;
  }
}

// Wide band-stop around the fundamental: two passes of an RBJ notch biquad.
void SpectralNotch(std::vector<double>& x, std::uint32_t sr, double f0, Rng& rng) {
  const double fc = f0 * rng.Uniform(0.95, 1.05);
  const double q = rng.Uniform(0.7, 1.2);
  const double w0 = kTwoPi * fc / sr, alpha = std::sin(w0) / (2.0 * q), cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = 1.0 / a0, b1 = -2.0 * cw / a0, b2 = 1.0 / a0, a1 = -2.0 * cw / a0, a2 = (1.0 - alpha) / a0;
  for (int pass = 0; pass < 2; ++pass) {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (double& v : x) {
      const double y = b0 * v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = v;
      y2 = y1;
      y1 = y;
      v = y;
    }
  }
}

// 8-bit uniform quantization of a strongly attenuated copy: the signal spans
// only a handful of the 256 levels, leaving a coarse staircase after rescaling.
void Quantize8bit(std::vector<double>& x, Rng& rng) {
  PeakNormalize(x);
  const double gain = rng.Uniform(0.008, 0.016);
  for (double& v : x) {
    const double code = std::round((std::clamp(v * gain, -1.0, 1.0) + 1.0) * 127.5);
    v = code / 127.5 - 1.0;
  }
}

// Vocoder-style frame duplication: with probability 1/2 each 1.5-3 ms frame
// is replaced by a copy of the frame before it.
void FrameRepeat(std::vector<double>& x, std::uint32_t sr, Rng& rng) {
  const auto len = static_cast<std::size_t>(std::max(1.0, rng.Uniform(0.0015, 0.003) * sr));
  for (std::size_t start = len; start + len <= x.size(); start += len)
    if (rng.Uniform() < 0.5) std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(start - len), len,
                                         x.begin() + static_cast<std::ptrdiff_t>(start));
}

}  // namespace

std::string_view ArtifactName(Artifact a) {
  switch (a) {
    case Artifact::kPhaseJump: return "phase_jump";
    case Artifact::kSpectralNotch: return "spectral_notch";
    case Artifact::kQuantize8bit: return "quantize_8bit";
    case Artifact::kFrameRepeat: return "frame_repeat";
  }
  return "?";
}

Artifact ArtifactFromName(std::string_view name) {
  for (Artifact a : kAllArtifacts)
    if (ArtifactName(a) == name) return a;
  Fail(ErrorCategory::kInvalidArgument, "unknown artifact type '" + std::string(name) +
                                            "' (expected phase_jump, spectral_notch, quantize_8bit or frame_repeat)");
}

Waveform GenBonafide(std::uint64_t seed, double duration_s, std::uint32_t sample_rate) {
  Carrier c = MakeCarrier(seed, duration_s, sample_rate);
  PeakNormalize(c.x);
  return ToWaveform(c.x, sample_rate);
}

Waveform GenSpoof(std::uint64_t seed, double duration_s, std::uint32_t sample_rate, Artifact artifact) {
  Carrier c = MakeCarrier(seed, duration_s, sample_rate);
  PeakNormalize(c.x);
  const double target_rms = RmsOf(c.x);
  Rng rng = Rng::Derive(seed, {kArtifactStream, static_cast<std::uint64_t>(artifact)});
  switch (artifact) {
    case Artifact::kPhaseJump: PhaseJump(c.x, sample_rate, rng); break;
    case Artifact::kSpectralNotch: SpectralNotch(c.x, sample_rate, c.f0, rng); break;
    case Artifact::kQuantize8bit: Quantize8bit(c.x, rng); break;
    case Artifact::kFrameRepeat: FrameRepeat(c.x, sample_rate, rng); break;
  }
  // Match the carrier's energy so level carries no class information; back
  // off only if that would clip.
  const double rms = RmsOf(c.x);
  if (rms > 0.0) ScaleInPlace(c.x, target_rms / rms);
  const double peak = PeakOf(c.x);
  if (peak > 0.99) ScaleInPlace(c.x, 0.99 / peak);
  return ToWaveform(c.x, sample_rate);
}

Waveform CropOrPad(const Waveform& w, std::size_t target_len, std::uint64_t offset_seed) {
  if (w.samples.empty()) Fail(ErrorCategory::kInvalidArgument, "empty waveform");
  Require(target_len >= 1, "target length must be positive");
  Waveform out;
  out.sample_rate = w.sample_rate;
  const std::size_t n = w.samples.size();
  if (n == target_len) return w;
  if (n > target_len) {
    Rng rng(offset_seed);
    const auto off = static_cast<std::ptrdiff_t>(rng.Index(n - target_len + 1));
    out.samples.assign(w.samples.begin() + off, w.samples.begin() + off + static_cast<std::ptrdiff_t>(target_len));
  } else {
    out.samples.resize(target_len);
    for (std::size_t i = 0; i < target_len; ++i) out.samples[i] = w.samples[i % n];
  }
  return out;
}

double Rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

Waveform Augment(const Waveform& w, Rng& rng, double strength) {
  Require(strength >= 0.0 && strength <= 1.0, "augmentation strength must lie in [0, 1]");
  const std::size_t n = w.samples.size();
  // Draw everything first so the realization does not depend on strength.
  const double pole = rng.Uniform(0.0, 0.9);
  double taps[3];
  for (double& h : taps) h = rng.Normal();
  std::vector<double> noise(n);
  double state = 0.0;
  for (double& v : noise) {
    state = pole * state + rng.Normal();
    v = state;
  }
  if (strength == 0.0) return w;

  const double sig_rms = Rms(w.samples);
  double noise_rms = 0.0;
  for (double v : noise) noise_rms += v * v;
  noise_rms = n ? std::sqrt(noise_rms / static_cast<double>(n)) : 0.0;
  const double noise_gain = noise_rms > 0.0 ? 0.1 * sig_rms / noise_rms : 0.0;

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    double filt = 0.0;
    for (std::size_t k = 0; k < 3 && k <= t; ++k) filt += taps[k] * w.samples[t - k];
    const double distortion = 0.2 * filt + noise_gain * noise[t];
    out.samples[t] = static_cast<float>(w.samples[t] + strength * distortion);
  }
  return out;
}

// ---- recipes -----------------------------------------------------------------

namespace {

constexpr std::string_view kRecipePrefix = "synth:";

template <class T>
T ParseNumber(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    Fail(ErrorCategory::kFormat, "recipe field '" + std::string(key) + "': invalid number '" + std::string(v) + "'");
  return out;
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

bool IsRecipe(std::string_view s) { return s.starts_with(kRecipePrefix); }

Recipe ParseRecipe(std::string_view s) {
  if (!IsRecipe(s)) Fail(ErrorCategory::kFormat, "not a synth recipe: '" + std::string(s) + "'");
  s.remove_prefix(kRecipePrefix.size());
  Recipe r;
  bool have_kind = false, have_seed = false, have_dur = false, have_sr = false;
  while (!s.empty()) {
    const std::size_t end = s.find(';');
    std::string_view item = s.substr(0, end);
    s = end == std::string_view::npos ? std::string_view{} : s.substr(end + 1);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) Fail(ErrorCategory::kFormat, "recipe item '" + std::string(item) + "' lacks '='");
    const std::string_view key = item.substr(0, eq), val = item.substr(eq + 1);
    if (key == "kind") {
      if (val == "bonafide") r.label = Label::kBonafide;
      else if (val == "spoof") r.label = Label::kSpoof;
      else Fail(ErrorCategory::kFormat, "recipe kind must be bonafide or spoof, got '" + std::string(val) + "'");
      have_kind = true;
    } else if (key == "artifact") {
      r.artifact = ArtifactFromName(val);
    } else if (key == "seed") {
      r.seed = ParseNumber<std::uint64_t>(key, val);
      have_seed = true;
    } else if (key == "dur") {
      r.duration_s = ParseNumber<double>(key, val);
      have_dur = true;
    } else if (key == "sr") {
      r.sample_rate = ParseNumber<std::uint32_t>(key, val);
      have_sr = true;
    } else {
      Fail(ErrorCategory::kFormat, "unknown recipe field '" + std::string(key) + "'");
    }
  }
  if (!have_kind || !have_seed || !have_dur || !have_sr)
    Fail(ErrorCategory::kFormat, "recipe needs kind, seed, dur and sr");
  if ((r.label == Label::kSpoof) != r.artifact.has_value())
    Fail(ErrorCategory::kFormat, "recipe must name an artifact exactly when kind=spoof");
  if (!(r.duration_s > 0.0) || r.sample_rate == 0) Fail(ErrorCategory::kFormat, "recipe dur and sr must be positive");
  return r;
}

std::string FormatRecipe(const Recipe& r) {
  std::string s(kRecipePrefix);
  s += r.label == Label::kBonafide ? "kind=bonafide" : "kind=spoof";
  if (r.artifact) s += ";artifact=" + std::string(ArtifactName(*r.artifact));
  s += ";seed=" + std::to_string(r.seed);
  s += ";dur=" + FormatDouble(r.duration_s);
  s += ";sr=" + std::to_string(r.sample_rate);
  return s;
}

Waveform Synthesize(const Recipe& r) {
  if (r.label == Label::kBonafide) return GenBonafide(r.seed, r.duration_s, r.sample_rate);
  if (!r.artifact) Fail(ErrorCategory::kInvalidArgument, "spoof recipe without artifact");
  return GenSpoof(r.seed, r.duration_s, r.sample_rate, *r.artifact);
}

// ---- corpus ------------------------------------------------------------------

std::string_view SplitName(Split s) {
  switch (s) {
    case Split::kPretrain: return "pretrain";
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kEval: return "eval";
  }
  return "?";
}

Split SplitFromName(std::string_view name) {
  for (Split s : {Split::kPretrain, Split::kTrain, Split::kDev, Split::kEval})
    if (SplitName(s) == name) return s;
  Fail(ErrorCategory::kInvalidArgument,
       "unknown split '" + std::string(name) + "' (expected pretrain, train, dev or eval)");
}

void CorpusConfig::Validate() const {
  Require(sample_rate > 0, "corpus sample_rate must be positive");
  Require(duration_s > 0.0, "corpus duration must be positive");
  Require(duration_jitter_s >= 0.0 && duration_jitter_s < duration_s,
          "corpus duration_jitter must be non-negative and below the duration");
}

}  // namespace ssladd
