// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "ssladd/config.hpp"
#include "ssladd/context.hpp"
#include "ssladd/gradcheck.hpp"
#include "ssladd/model.hpp"

namespace ssladd::testing {

// Model small enough for finite differences over every parameter.
inline ModelConfig TinyModelConfig() {
  ModelConfig cfg;
  cfg.encoder.num_layers = 2;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.num_heads = 2;
  cfg.encoder.ffn_dim = 12;
  cfg.encoder.conv_strides = {2, 2};
  cfg.encoder.conv_channels = 6;
  cfg.encoder.quant_dim = 4;
  cfg.encoder.codebook_size = 8;
  cfg.encoder.mask_prob = 0.2;
  cfg.encoder.mask_span = 2;
  cfg.encoder.num_distractors = 3;
  cfg.peft.lora_rank = 2;
  cfg.peft.adapter_dim = 4;
  cfg.peft.adapter_channels = 2;
  cfg.hamoe.compress_dim = 4;
  cfg.hamoe.num_experts = 4;
  cfg.hamoe.top_k = 2;
  cfg.hamoe.expert_hidden = 5;
  cfg.head.hidden = 6;
  return cfg;
}

// Parameter counts per group derived from the configuration alone, as an
// oracle for the store walk in ParameterStore::Count.
struct GroupCounts {
  std::size_t encoder = 0, lora = 0, adapter = 0, hamoe = 0, head = 0;
  std::size_t total() const { return encoder + lora + adapter + hamoe + head; }
};

inline GroupCounts ClosedFormCounts(const ModelConfig& cfg) {
  const EncoderConfig& e = cfg.encoder;
  const std::size_t d = e.hidden_dim, dz = e.conv_channels, l = e.num_layers, f = e.ffn_dim;
  GroupCounts c;
  std::size_t cin = 1;
  for (std::size_t k : e.conv_strides) {
    c.encoder += dz * cin * k + dz;
    cin = dz;
  }
  c.encoder += 2 * dz + dz + (d * dz + d) + 2 * d;
  c.encoder += l * (4 * (d * d + d) + 2 * d + (f * d + f) + (d * f + d) + 2 * d);
  c.encoder += e.quant_dim * d + e.quant_dim;
  const PeftConfig& p = cfg.peft;
  const std::size_t targets = std::size_t{p.lora_query} + p.lora_key + p.lora_value;
  if (p.lora_rank > 0) c.lora = l * targets * p.lora_rank * (d + d);
  const std::size_t places = std::size_t{p.adapter_after_mha} + p.adapter_after_ffn;
  const std::size_t s = p.adapter_dim, ch = p.adapter_channels;
  if (s > 0) c.adapter = l * places * (s * d + ch * 9 + 2 * ch + ch * ch * 9 + d * ch * s);
  const HamoeConfig& h = cfg.hamoe;
  const std::size_t cd = h.compress_dim, flat = l * d, half = l / 2;
  c.hamoe = (cd * d + cd) + cd + (2 * cd + 1) + 2 * half * l + (h.num_experts * flat + h.num_experts) +
            h.num_experts * ((h.expert_hidden * flat + h.expert_hidden) + (d * h.expert_hidden + d));
  c.head = d + (cfg.head.hidden * 2 * d + cfg.head.hidden) + (2 * cfg.head.hidden + 2);
  return c;
}

// Trainable count implied by a freeze mode.
inline std::size_t ExpectedTrainable(const GroupCounts& c, FreezeMode mode) {
  switch (mode) {
    case FreezeMode::kFull: return c.total();
    case FreezeMode::kFrozenSsl: return c.hamoe + c.head;
    case FreezeMode::kAdapterOnly: return c.lora + c.adapter + c.hamoe + c.head;
  }
  return 0;
}

inline std::vector<float> RandomWave(std::size_t n, Rng& rng) {
  std::vector<float> w(n);
  for (float& s : w) s = static_cast<float>(rng.Uniform(-0.9, 0.9));
  return w;
}

// Replaces every parameter by small random values so that zero-initialised
// pieces (LoRA B, adapter W_up) take part in gradient checks.
inline void Randomize(ParameterStore& store, Rng& rng, double bound = 0.5) {
  for (Parameter& p : store.params())
    for (double& v : p.value.values()) v = rng.Uniform(-bound, bound);
}

// Gradient check of `build` with respect to the named parameters of `store`;
// every other parameter is held fixed.
inline double CheckStoreGrads(const ParameterStore& store, const std::vector<std::string>& names,
                              const std::function<ag::Var(ForwardContext&)>& build, double eps = 1e-5) {
  std::vector<Tensor> start;
  for (const std::string& n : names) start.push_back(store[n].value);
  DifferentiableFn fn = [&](const std::vector<Tensor>& values) {
    ParameterStore s = store;
    for (Parameter& p : s.params()) p.frozen = true;
    for (std::size_t i = 0; i < names.size(); ++i) {
      s[names[i]].value = values[i];
      s[names[i]].frozen = false;
    }
    ag::Tape tape(true);
    ForwardContext ctx{tape, s};
    ag::Var loss = build(ctx);
    tape.Backward(loss);
    std::map<std::size_t, Tensor> by_id;
    for (auto& [id, g] : tape.ParamGrads()) by_id[id] = g;
    LossAndGrad out;
    out.loss = loss.value()[0];
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto it = by_id.find(s.Id(names[i]));
      out.grads.push_back(it == by_id.end() ? Tensor(values[i].shape(), 0.0) : it->second);
    }
    return out;
  };
  return GradCheck(fn, start, eps);
}

// Largest |analytic| and |central-difference| gradient entry, for
// parameters whose gradient vanishes identically (an attention key bias
// shifts every score of a query row by the same amount).
inline std::pair<double, double> ZeroGradientMagnitudes(const ParameterStore& store, const std::string& name,
                                                        const std::function<ag::Var(ForwardContext&)>& build,
                                                        double eps = 1e-5) {
  auto run = [&](const Tensor& value, Tensor* grad) {
    ParameterStore s = store;
    for (Parameter& p : s.params()) p.frozen = true;
    s[name].value = value;
    s[name].frozen = false;
    ag::Tape tape(grad != nullptr);
    ForwardContext ctx{tape, s};
    ag::Var loss = build(ctx);
    if (grad != nullptr) {
      tape.Backward(loss);
      *grad = Tensor(value.shape(), 0.0);
      for (auto& [id, g] : tape.ParamGrads())
        if (id == s.Id(name)) *grad = g;
    }
    return loss.value()[0];
  };
  const Tensor start = store[name].value;
  Tensor grad;
  run(start, &grad);
  double analytic = 0.0, numeric = 0.0;
  for (std::size_t i = 0; i < start.size(); ++i) {
    analytic = std::max(analytic, std::abs(grad[i]));
    Tensor up = start, down = start;
    up[i] += eps;
    down[i] -= eps;
    numeric = std::max(numeric, std::abs(run(up, nullptr) - run(down, nullptr)) / (2.0 * eps));
  }
  return {analytic, numeric};
}

inline bool IsKeyBias(const std::string& name) {
  return name.size() >= 12 && name.compare(name.size() - 12, 12, ".attn.k.bias") == 0;
}

// Names of all parameters whose name starts with one of the prefixes.
inline std::vector<std::string> NamesWithPrefix(const ParameterStore& store, const std::vector<std::string>& prefixes) {
  std::vector<std::string> out;
  for (const Parameter& p : store.params())
    for (const std::string& pre : prefixes)
      if (p.name.rfind(pre, 0) == 0) {
        out.push_back(p.name);
        break;
      }
  return out;
}

// Fixed random weighting that turns a tensor output into a scalar loss.
inline ag::Var Project(ag::Var v, std::uint64_t seed) {
  Rng rng(seed);
  return ag::Dot(v, UniformTensor(v.value().shape(), 1.0, rng));
}

inline std::string ReadFile(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh scratch directory below the system temp dir.
inline std::filesystem::path ScratchDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ssladd_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ssladd::testing
