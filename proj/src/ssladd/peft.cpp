// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/peft.hpp"

#include <cmath>

namespace ssladd {

void PeftConfig::Validate(const EncoderConfig& enc) const {
  if (!enabled()) Fail(ErrorCategory::kInvalidArgument, "peft config sets neither lora_rank nor adapter_dim");
  const std::size_t d = enc.hidden_dim;
  if (lora_rank > 0) {
    if (lora_rank > d / 2)
      Fail(ErrorCategory::kInvalidArgument, "lora_rank " + std::to_string(lora_rank) +
                                                " must be at most half of hidden_dim " + std::to_string(d));
    if (!lora_query && !lora_key && !lora_value)
      Fail(ErrorCategory::kInvalidArgument, "lora_rank set but no LoRA target selected");
  }
  if (adapter_dim > 0) {
    if (adapter_dim >= d)
      Fail(ErrorCategory::kInvalidArgument, "adapter_dim " + std::to_string(adapter_dim) +
                                                " must be smaller than hidden_dim " + std::to_string(d));
    if (adapter_channels == 0) Fail(ErrorCategory::kInvalidArgument, "adapter_channels must be positive");
    if (!adapter_after_mha && !adapter_after_ffn)
      Fail(ErrorCategory::kInvalidArgument, "adapter_dim set but no insertion point selected");
  }
}

Tensor LoraForward(std::span<const double> x, const LinearParams& base, const LoraParams& lora) {
  const Tensor& w = base.weight;
  if (w.rank() != 2 || w.dim(1) != x.size() || base.bias.size() != w.dim(0) || lora.a.rank() != 2 ||
      lora.b.rank() != 2 || lora.a.dim(1) != x.size() || lora.b.dim(0) != w.dim(0) ||
      lora.b.dim(1) != lora.a.dim(0))
    Fail(ErrorCategory::kInvalidArgument, "lora_forward: shape mismatch");
  ag::Tape tape(false);
  ag::Var xv = tape.Constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  ag::Var h = ag::Linear(xv, tape.Constant(w), tape.Constant(base.bias));
  ag::Var delta = ag::Linear(ag::Linear(xv, tape.Constant(lora.a)), tape.Constant(lora.b));
  return ag::Add(h, delta).value().Reshaped({w.dim(0)});
}

AdapterParams MakeAdapterParams(std::size_t features, std::size_t bottleneck, std::size_t channels, Rng& rng) {
  AdapterParams p;
  p.down = UniformTensor({bottleneck, features}, 1.0 / std::sqrt(static_cast<double>(features)), rng);
  p.conv1 = UniformTensor({channels, 1, 3, 3}, 1.0 / 3.0, rng);
  p.bn_gamma = Tensor({channels}, 1.0);
  p.bn_beta = Tensor({channels}, 0.0);
  p.running_mean = Tensor({channels}, 0.0);
  p.running_var = Tensor({channels}, 1.0);
  p.conv2 = UniformTensor({channels, channels, 3, 3}, 1.0 / std::sqrt(9.0 * static_cast<double>(channels)), rng);
  p.up = Tensor({features, channels * bottleneck}, 0.0);
  return p;
}

ag::Var AdapterGraph(ag::Var x, const AdapterVars& v, bool training, const Tensor& running_mean,
                     const Tensor& running_var, ag::BatchNormStats* stats) {
  const Tensor& X = x.value();
  const Tensor& down = v.down.value();
  const Tensor& c1 = v.conv1.value();
  const Tensor& c2 = v.conv2.value();
  const Tensor& up = v.up.value();
  if (X.rank() != 2 || down.rank() != 2 || down.dim(1) != X.dim(1))
    Fail(ErrorCategory::kInvalidArgument, "adapter: input " + ShapeString(X.shape()) +
                                              " incompatible with down projection " + ShapeString(down.shape()));
  const std::size_t t = X.dim(0), s = down.dim(0);
  if (c1.rank() != 4 || c1.dim(1) != 1 || c2.rank() != 4 || c2.dim(0) != c1.dim(0) || c2.dim(1) != c1.dim(0) ||
      up.rank() != 2 || up.dim(1) != c1.dim(0) * s || up.dim(0) != X.dim(1))
    Fail(ErrorCategory::kInvalidArgument, "invalid bottleneck layout");

  ag::Var h = ag::Relu(ag::Linear(x, v.down));
  ag::Var img = ag::Reshape(h, {1, t, s});
  ag::Var c = ag::Conv2dSame(img, v.conv1);
  c = ag::BatchNorm2d(c, v.bn_gamma, v.bn_beta, training, running_mean, running_var, stats);
  c = ag::Conv2dSame(c, v.conv2);
  ag::Var flat = ag::ChannelsToRows(c);
  ag::Var u = ag::Relu(ag::Linear(flat, v.up));
  return ag::Add(u, x);
}

void UpdateRunningStats(Tensor& running_mean, Tensor& running_var, const ag::BatchNormStats& stats) {
  for (std::size_t i = 0; i < running_mean.size(); ++i) {
    running_mean[i] = (1.0 - kBatchNormMomentum) * running_mean[i] + kBatchNormMomentum * stats.mean[i];
    running_var[i] = (1.0 - kBatchNormMomentum) * running_var[i] + kBatchNormMomentum * stats.var_unbiased[i];
  }
}

Tensor AdapterForward(const Tensor& x, AdapterParams& p, Mode mode) {
  if (x.rank() != 2 || x.dim(0) == 0) Fail(ErrorCategory::kInvalidArgument, "adapter input must be [T x F] with T >= 1");
  ag::Tape tape(false);
  AdapterVars v{tape.Constant(p.down), tape.Constant(p.conv1), tape.Constant(p.bn_gamma),
                tape.Constant(p.bn_beta), tape.Constant(p.conv2), tape.Constant(p.up)};
  ag::BatchNormStats stats;
  const bool training = mode == Mode::kTrain;
  Tensor out = AdapterGraph(tape.Constant(x), v, training, p.running_mean, p.running_var, &stats).value();
  if (training) UpdateRunningStats(p.running_mean, p.running_var, stats);
  return out;
}

std::string BlockPrefix(std::size_t layer) { return "layer" + std::to_string(layer); }

std::string LoraPrefix(std::size_t layer, char target) {
  return BlockPrefix(layer) + ".lora." + std::string(1, target);
}

std::string AdapterPrefix(std::size_t layer, const char* where) {
  return BlockPrefix(layer) + ".adapter_" + where;
}

bool HasPeft(const ParameterStore& store) {
  for (const Parameter& p : store.params())
    if (IsPeft(p.group)) return true;
  return false;
}

void InjectPeft(ParameterStore& store, const EncoderConfig& enc, const PeftConfig& cfg, Rng& rng) {
  cfg.Validate(enc);
  if (HasPeft(store)) Fail(ErrorCategory::kState, "model already has PEFT modules injected");
  const std::size_t d = enc.hidden_dim;
  for (std::size_t l = 0; l < enc.num_layers; ++l) {
    if (cfg.lora_rank > 0) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d));
      const std::pair<bool, char> targets[] = {{cfg.lora_query, 'q'}, {cfg.lora_key, 'k'}, {cfg.lora_value, 'v'}};
      for (auto [on, which] : targets) {
        if (!on) continue;
        const std::string pre = LoraPrefix(l, which);
        store.Add(pre + ".A", UniformTensor({cfg.lora_rank, d}, bound, rng), ParamGroup::kLora);
        store.Add(pre + ".B", Tensor({d, cfg.lora_rank}, 0.0), ParamGroup::kLora);
      }
    }
    if (cfg.adapter_dim > 0) {
      for (const char* where : {"mha", "ffn"}) {
        if (std::string(where) == "mha" ? !cfg.adapter_after_mha : !cfg.adapter_after_ffn) continue;
        const std::string pre = AdapterPrefix(l, where);
        AdapterParams p = MakeAdapterParams(d, cfg.adapter_dim, cfg.adapter_channels, rng);
        store.Add(pre + ".down", std::move(p.down), ParamGroup::kAdapter);
        store.Add(pre + ".conv1", std::move(p.conv1), ParamGroup::kAdapter);
        store.Add(pre + ".bn.gamma", std::move(p.bn_gamma), ParamGroup::kAdapter);
        store.Add(pre + ".bn.beta", std::move(p.bn_beta), ParamGroup::kAdapter);
        store.Add(pre + ".conv2", std::move(p.conv2), ParamGroup::kAdapter);
        store.Add(pre + ".up", std::move(p.up), ParamGroup::kAdapter);
        store.AddBuffer(pre + ".bn.running_mean", std::move(p.running_mean));
        store.AddBuffer(pre + ".bn.running_var", std::move(p.running_var));
      }
    }
  }
  if (cfg.freeze_base)
    for (Parameter& p : store.params())
      if (p.group == ParamGroup::kEncoder) p.frozen = true;
}

PeftInventory InventoryPeft(const ParameterStore& store, const EncoderConfig& enc) {
  PeftInventory inv;
  for (std::size_t l = 0; l < enc.num_layers; ++l) {
    for (char which : {'q', 'k', 'v'})
      if (store.Contains(LoraPrefix(l, which) + ".A") && store.Contains(LoraPrefix(l, which) + ".B")) ++inv.lora_pairs;
    for (const char* where : {"mha", "ffn"})
      if (store.Contains(AdapterPrefix(l, where) + ".up")) ++inv.adapters;
  }
  return inv;
}

ag::Var ProjectWithLora(ForwardContext& ctx, ag::Var x, const std::string& base_prefix,
                        const std::string& lora_prefix) {
  ag::Var h = ag::Linear(x, ctx.P(base_prefix + ".weight"), ctx.P(base_prefix + ".bias"));
  if (!ctx.store.Contains(lora_prefix + ".A")) return h;
  ag::Var delta = ag::Linear(ag::Linear(x, ctx.P(lora_prefix + ".A")), ctx.P(lora_prefix + ".B"));
  return ag::Add(h, delta);
}

ag::Var MaybeAdapter(ForwardContext& ctx, ag::Var x, const std::string& prefix) {
  if (!ctx.store.Contains(prefix + ".up")) return x;
  AdapterVars v{ctx.P(prefix + ".down"), ctx.P(prefix + ".conv1"), ctx.P(prefix + ".bn.gamma"),
                ctx.P(prefix + ".bn.beta"), ctx.P(prefix + ".conv2"), ctx.P(prefix + ".up")};
  const bool training = ctx.adapters_training;
  ag::BatchNormStats stats;
  ag::Var out = AdapterGraph(x, v, training, ctx.store.buffer(prefix + ".bn.running_mean"),
                             ctx.store.buffer(prefix + ".bn.running_var"), training ? &stats : nullptr);
  if (training && ctx.bn_updates) ctx.bn_updates->emplace_back(prefix + ".bn", std::move(stats));
  return out;
}

}  // namespace ssladd
