// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/model.hpp"

namespace ssladd {

namespace {

enum StreamTag : std::uint64_t { kEncoderInit = 1, kHamoeInit = 2, kHeadInit = 3, kPeftInit = 4 };

}  // namespace

void ModelConfig::Validate() const {
  encoder.Validate();
  if (peft.enabled()) peft.Validate(encoder);
  hamoe.Validate();
  head.Validate();
  if (encoder.num_layers % 2 != 0)
    Fail(ErrorCategory::kInvalidArgument,
         "L must be even for the excitation bottleneck, got L=" + std::to_string(encoder.num_layers));
}

std::string_view FreezeModeName(FreezeMode m) {
  switch (m) {
    case FreezeMode::kFull: return "full";
    case FreezeMode::kFrozenSsl: return "frozen_ssl";
    case FreezeMode::kAdapterOnly: return "adapter_only";
  }
  return "?";
}

FreezeMode FreezeModeFromName(std::string_view name) {
  for (auto m : {FreezeMode::kFull, FreezeMode::kFrozenSsl, FreezeMode::kAdapterOnly})
    if (FreezeModeName(m) == name) return m;
  Fail(ErrorCategory::kInvalidArgument,
       "unknown freeze mode '" + std::string(name) + "' (expected full, frozen_ssl or adapter_only)");
}

Model Model::Create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  Model m;
  m.cfg_ = cfg;
  Rng enc_rng = Rng::Derive(seed, {kEncoderInit});
  InitEncoder(m.store_, cfg.encoder, enc_rng);
  Rng hamoe_rng = Rng::Derive(seed, {kHamoeInit});
  InitHamoe(m.store_, cfg.encoder.num_layers, cfg.encoder.hidden_dim, cfg.hamoe, hamoe_rng);
  Rng head_rng = Rng::Derive(seed, {kHeadInit});
  InitHead(m.store_, cfg.encoder.hidden_dim, cfg.head, head_rng);
  if (cfg.peft.enabled()) {
    Rng peft_rng = Rng::Derive(seed, {kPeftInit});
    ssladd::InjectPeft(m.store_, cfg.encoder, cfg.peft, peft_rng);
  }
  return m;
}

void Model::InjectPeft(const PeftConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::Derive(seed, {kPeftInit});
  ssladd::InjectPeft(store_, cfg_.encoder, cfg, rng);
  cfg_.peft = cfg;
}

Model Model::FromStore(const ModelConfig& cfg, ParameterStore store) {
  const Model ref = Create(cfg, 0);
  const ParameterStore& want = ref.store();
  auto mismatch = [](const std::string& what) {
    Fail(ErrorCategory::kFormat, "stored parameters do not match the model configuration: " + what);
  };
  if (store.size() != want.size())
    mismatch(std::to_string(store.size()) + " parameters stored, " + std::to_string(want.size()) + " expected");
  if (store.buffers().size() != want.buffers().size())
    mismatch(std::to_string(store.buffers().size()) + " buffers stored, " + std::to_string(want.buffers().size()) +
             " expected");
  for (std::size_t i = 0; i < want.size(); ++i) {
    const Parameter& a = store.at(i);
    const Parameter& b = want.at(i);
    if (a.name != b.name || a.group != b.group || a.value.shape() != b.value.shape())
      mismatch("entry " + std::to_string(i) + " is '" + a.name + "' " + ShapeString(a.value.shape()) + ", expected '" +
               b.name + "' " + ShapeString(b.value.shape()));
  }
  for (std::size_t i = 0; i < want.buffers().size(); ++i) {
    const Buffer& a = store.buffers()[i];
    const Buffer& b = want.buffers()[i];
    if (a.name != b.name || a.value.shape() != b.value.shape())
      mismatch("buffer '" + a.name + "' " + ShapeString(a.value.shape()) + ", expected '" + b.name + "' " +
               ShapeString(b.value.shape()));
  }
  Model m;
  m.cfg_ = cfg;
  m.store_ = std::move(store);
  return m;
}

void Model::SetTrainable(Phase phase, FreezeMode mode) {
  if (phase == Phase::kPretrain && !has_peft())
    Fail(ErrorCategory::kState, "pretraining needs PEFT modules, but the model has none");
  if (phase == Phase::kFinetune && mode == FreezeMode::kAdapterOnly && !has_peft())
    Fail(ErrorCategory::kState, "freeze mode adapter_only needs a model with PEFT modules, but the model has none");
  for (Parameter& p : store_.params()) {
    bool trainable = false;
    if (phase == Phase::kPretrain) {
      trainable = IsPeft(p.group);
    } else {
      switch (mode) {
        case FreezeMode::kFull: trainable = true; break;
        case FreezeMode::kFrozenSsl: trainable = p.group == ParamGroup::kHamoe || p.group == ParamGroup::kHead; break;
        case FreezeMode::kAdapterOnly: trainable = p.group != ParamGroup::kEncoder; break;
      }
    }
    p.frozen = !trainable;
  }
}

void Model::FreezeAll() {
  for (Parameter& p : store_.params()) p.frozen = true;
}

bool Model::AdaptersTrainable() const {
  for (const Parameter& p : store_.params())
    if (p.group == ParamGroup::kAdapter && !p.frozen) return true;
  return false;
}

PretrainOutput PretrainForward(ForwardContext& ctx, const ModelConfig& cfg, std::span<const float> samples, Rng& rng) {
  const EncoderConfig& enc = cfg.encoder;
  ag::Var z = FeatureEncode(ctx, enc, samples);
  const std::size_t n = z.value().dim(0);
  const Quantized q = Quantize(z.value(), ctx.store.buffer("quant.codebook"), ctx.store.buffer("quant.proj"));
  const std::vector<std::size_t> mask = SampleMask(n, enc.mask_prob, enc.mask_span, rng);
  ag::Var zm = ag::MaskRows(z, ctx.P("mask_emb"), mask);
  std::vector<ag::Var> hidden = TransformerForward(ctx, enc, zm);
  ag::Var c = ag::Linear(hidden.back(), ctx.P("final_proj.weight"), ctx.P("final_proj.bias"));
  const auto distractors = SampleDistractors(mask, n, enc.num_distractors, rng);
  return {ContrastiveLoss(c, q.values, mask, distractors, enc.temperature), mask.size()};
}

ClassifierOutput ClassifierForward(ForwardContext& ctx, const ModelConfig& cfg, std::span<const float> samples) {
  ClassifierOutput out;
  ag::Var z = FeatureEncode(ctx, cfg.encoder, samples);
  out.hidden = TransformerForward(ctx, cfg.encoder, z);
  out.fusion = HamoeForward(ctx, cfg.hamoe, out.hidden);
  out.embedding = PoolUtterance(ctx, out.fusion.mixed);
  out.logits = Classify(ctx, out.embedding);
  return out;
}

namespace {

template <class F>
Tensor EvalForward(const Model& model, std::span<const float> samples, F&& pick) {
  ag::Tape tape(false);
  ForwardContext ctx{tape, model.store()};
  ClassifierOutput out = ClassifierForward(ctx, model.config(), samples);
  return pick(out).value();
}

}  // namespace

Tensor Logits(const Model& model, std::span<const float> samples) {
  return EvalForward(model, samples, [](const ClassifierOutput& o) { return o.logits; });
}

Tensor Embedding(const Model& model, std::span<const float> samples) {
  return EvalForward(model, samples, [](const ClassifierOutput& o) { return o.embedding; });
}

double Score(const Model& model, std::span<const float> samples) { return ScoreFromLogits(Logits(model, samples)); }

}  // namespace ssladd
