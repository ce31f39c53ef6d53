// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ssladd/peft.hpp"

namespace ssladd {

std::size_t EncoderConfig::SamplesPerFrame() const {
  std::size_t p = 1;
  for (std::size_t s : conv_strides) p *= s;
  return p;
}

void EncoderConfig::Validate() const {
  Require(num_layers >= 1, "encoder needs at least one layer");
  Require(hidden_dim >= 2 && hidden_dim % 2 == 0, "hidden_dim must be even and at least 2");
  Require(num_heads >= 1 && hidden_dim % num_heads == 0, "hidden_dim must be divisible by num_heads");
  Require(ffn_dim >= 1, "ffn_dim must be positive");
  Require(!conv_strides.empty(), "conv_strides must not be empty");
  for (std::size_t s : conv_strides) Require(s >= 1, "conv strides must be positive");
  Require(conv_channels >= 1 && quant_dim >= 1 && codebook_size >= 1, "quantizer dimensions must be positive");
  Require(mask_prob >= 0.0 && mask_prob <= 1.0, "mask_prob must lie in [0, 1]");
  Require(mask_span >= 1, "mask_span must be positive");
  Require(temperature > 0.0, "temperature must be positive");
}

namespace {

void AddLinear(ParameterStore& store, const std::string& prefix, std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.Add(prefix + ".weight", UniformTensor({out, in}, bound, rng), ParamGroup::kEncoder);
  store.Add(prefix + ".bias", UniformTensor({out}, bound, rng), ParamGroup::kEncoder);
}

void AddNorm(ParameterStore& store, const std::string& prefix, std::size_t d) {
  store.Add(prefix + ".gamma", Tensor({d}, 1.0), ParamGroup::kEncoder);
  store.Add(prefix + ".beta", Tensor({d}, 0.0), ParamGroup::kEncoder);
}

ag::Var Norm(ForwardContext& ctx, ag::Var x, const std::string& prefix) {
  return ag::LayerNorm(x, ctx.P(prefix + ".gamma"), ctx.P(prefix + ".beta"));
}

ag::Var Dense(ForwardContext& ctx, ag::Var x, const std::string& w, const std::string& b) {
  return ag::Linear(x, ctx.P(w), ctx.P(b));
}

double Norm2(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace

void InitEncoder(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  cfg.Validate();
  const std::size_t dz = cfg.conv_channels, d = cfg.hidden_dim;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < cfg.conv_strides.size(); ++i) {
    const std::size_t k = cfg.conv_strides[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
    const std::string pre = "fe.conv" + std::to_string(i);
    store.Add(pre + ".weight", UniformTensor({dz, cin, k}, bound, rng), ParamGroup::kEncoder);
    store.Add(pre + ".bias", UniformTensor({dz}, bound, rng), ParamGroup::kEncoder);
    cin = dz;
  }
  AddNorm(store, "fe.ln", dz);
  store.Add("mask_emb", UniformTensor({dz}, 1.0, rng), ParamGroup::kEncoder);
  AddLinear(store, "proj", d, dz, rng);
  AddNorm(store, "enc.ln0", d);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = BlockPrefix(l);
    for (const char* m : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) AddLinear(store, pre + m, d, d, rng);
    AddNorm(store, pre + ".ln1", d);
    AddLinear(store, pre + ".ffn.fc1", cfg.ffn_dim, d, rng);
    AddLinear(store, pre + ".ffn.fc2", d, cfg.ffn_dim, rng);
    AddNorm(store, pre + ".ln2", d);
  }
  AddLinear(store, "final_proj", cfg.quant_dim, d, rng);
  store.AddBuffer("quant.proj", NormalTensor({cfg.quant_dim, dz}, 1.0 / std::sqrt(static_cast<double>(dz)), rng));
  store.AddBuffer("quant.codebook", NormalTensor({cfg.codebook_size, cfg.quant_dim}, 1.0, rng));
}

std::size_t NumFrames(std::size_t num_samples, const EncoderConfig& cfg) {
  return num_samples / cfg.SamplesPerFrame();
}

ag::Var FeatureEncode(ForwardContext& ctx, const EncoderConfig& cfg, std::span<const float> samples) {
  const std::size_t spf = cfg.SamplesPerFrame();
  if (samples.size() < spf)
    Fail(ErrorCategory::kInvalidArgument, "input shorter than receptive field: " + std::to_string(samples.size()) +
                                              " samples, need at least " + std::to_string(spf));
  // Zero-mean, unit-variance waveform.
  double mean = 0.0;
  for (float s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (float s : samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(samples.size());
  const double inv = 1.0 / std::sqrt(var + 1e-7);
  Tensor wave({1, samples.size()});
  for (std::size_t i = 0; i < samples.size(); ++i) wave[i] = (samples[i] - mean) * inv;

  ag::Var x = ctx.tape.Constant(std::move(wave));
  for (std::size_t i = 0; i < cfg.conv_strides.size(); ++i) {
    const std::string pre = "fe.conv" + std::to_string(i);
    x = ag::Gelu(ag::Conv1d(x, ctx.P(pre + ".weight"), ctx.P(pre + ".bias"), cfg.conv_strides[i]));
  }
  return Norm(ctx, ag::Transpose(x), "fe.ln");
}

std::vector<std::size_t> SampleMask(std::size_t n, double mask_prob, std::size_t mask_span, Rng& rng) {
  Require(mask_prob >= 0.0 && mask_prob <= 1.0, "mask_prob must lie in [0, 1]");
  Require(mask_span >= 1, "mask_span must be positive");
  if (n == 0 || mask_prob == 0.0) return {};
  const std::size_t span = std::min(mask_span, n);
  const std::size_t candidates = n - span + 1;
  const auto wanted = static_cast<std::size_t>(std::llround(mask_prob * static_cast<double>(n)));
  const std::size_t starts = std::min(candidates, std::max<std::size_t>(1, wanted));
  // Partial Fisher-Yates over the start positions.
  std::vector<std::size_t> pos(candidates);
  std::iota(pos.begin(), pos.end(), 0);
  std::vector<bool> masked(n, false);
  for (std::size_t i = 0; i < starts; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.Index(candidates - i));
    std::swap(pos[i], pos[j]);
    for (std::size_t t = pos[i]; t < pos[i] + span; ++t) masked[t] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < n; ++t)
    if (masked[t]) out.push_back(t);
  return out;
}

Quantized Quantize(const Tensor& z, const Tensor& codebook, const Tensor& proj) {
  if (z.rank() != 2 || proj.rank() != 2 || codebook.rank() != 2 || proj.dim(1) != z.dim(1) ||
      codebook.dim(1) != proj.dim(0))
    Fail(ErrorCategory::kInvalidArgument, "quantize: shape mismatch z " + ShapeString(z.shape()) + ", proj " +
                                              ShapeString(proj.shape()) + ", codebook " +
                                              ShapeString(codebook.shape()));
  ag::Tape tape(false);
  const Tensor p = ag::Linear(tape.Constant(z), tape.Constant(proj)).value();
  const std::size_t n = z.dim(0), dq = proj.dim(0), v = codebook.dim(0);
  Quantized out{Tensor({n, dq}), std::vector<std::size_t>(n)};
  for (std::size_t t = 0; t < n; ++t) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < v; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < dq; ++j) {
        const double e = p[t * dq + j] - codebook[c * dq + j];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.indices[t] = best;
    std::copy_n(codebook.data() + best * dq, dq, out.values.data() + t * dq);
  }
  return out;
}

Tensor PositionTable(std::size_t n, std::size_t d) {
  Tensor pe({n, d});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[t * d + i] = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < d) pe[t * d + i + 1] = std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

ag::Var EmbedFrames(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var z) {
  ag::Var h = Dense(ctx, z, "proj.weight", "proj.bias");
  h = ag::AddConstant(h, PositionTable(z.value().dim(0), cfg.hidden_dim));
  return Norm(ctx, h, "enc.ln0");
}

std::vector<ag::Var> RunBlocks(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var x) {
  std::vector<ag::Var> outs;
  outs.reserve(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string pre = BlockPrefix(l);
    ag::Var q = ProjectWithLora(ctx, x, pre + ".attn.q", LoraPrefix(l, 'q'));
    ag::Var k = ProjectWithLora(ctx, x, pre + ".attn.k", LoraPrefix(l, 'k'));
    ag::Var v = ProjectWithLora(ctx, x, pre + ".attn.v", LoraPrefix(l, 'v'));
    Tensor probs;
    ag::Var a = ag::Attention(q, k, v, cfg.num_heads, ctx.attention_probs ? &probs : nullptr);
    if (ctx.attention_probs) ctx.attention_probs->push_back(std::move(probs));
    ag::Var o = Dense(ctx, a, pre + ".attn.o.weight", pre + ".attn.o.bias");
    o = MaybeAdapter(ctx, o, AdapterPrefix(l, "mha"));
    ag::Var x1 = Norm(ctx, ag::Add(x, o), pre + ".ln1");
    ag::Var f = ag::Gelu(Dense(ctx, x1, pre + ".ffn.fc1.weight", pre + ".ffn.fc1.bias"));
    f = Dense(ctx, f, pre + ".ffn.fc2.weight", pre + ".ffn.fc2.bias");
    f = MaybeAdapter(ctx, f, AdapterPrefix(l, "ffn"));
    x = Norm(ctx, ag::Add(x1, f), pre + ".ln2");
    outs.push_back(x);
  }
  return outs;
}

std::vector<ag::Var> TransformerForward(ForwardContext& ctx, const EncoderConfig& cfg, ag::Var z) {
  return RunBlocks(ctx, cfg, EmbedFrames(ctx, cfg, z));
}

std::vector<std::vector<std::size_t>> SampleDistractors(std::span<const std::size_t> masked, std::size_t n,
                                                        std::size_t count, Rng& rng) {
  std::vector<std::vector<std::size_t>> out(masked.size());
  if (count == 0) return out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    std::vector<std::size_t> pool;
    if (masked.size() > 1) {
      for (std::size_t j = 0; j < masked.size(); ++j)
        if (j != i) pool.push_back(masked[j]);
    } else {
      for (std::size_t t = 0; t < n; ++t)
        if (t != masked[i]) pool.push_back(t);
    }
    if (pool.empty()) Fail(ErrorCategory::kInvalidArgument, "no distractor candidates: sequence has a single frame");
    auto& d = out[i];
    if (pool.size() >= count) {
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t r = j + static_cast<std::size_t>(rng.Index(pool.size() - j));
        std::swap(pool[j], pool[r]);
        d.push_back(pool[j]);
      }
    } else {
      for (std::size_t j = 0; j < count; ++j) d.push_back(pool[rng.Index(pool.size())]);
    }
  }
  return out;
}

namespace {

// Per masked frame: candidate rows (target first) and the resulting logits.
// Distractors whose quantized row equals the target row are dropped, since
// they cannot be told apart from the positive.
struct ContrastiveTerms {
  std::vector<std::vector<std::size_t>> rows;
  std::vector<std::vector<double>> probs;  // softmax over candidates
  std::vector<std::vector<double>> cos;
  double loss = 0.0;
};

ContrastiveTerms ComputeContrastive(const Tensor& c, const Tensor& q, std::span<const std::size_t> masked,
                                    const std::vector<std::vector<std::size_t>>& distractors, double temperature) {
  if (masked.empty()) Fail(ErrorCategory::kInvalidArgument, "nothing to predict: no masked frames");
  Require(temperature > 0.0, "temperature must be positive");
  Require(c.rank() == 2 && q.rank() == 2 && c.shape() == q.shape(),
          "contrastive loss: context " + ShapeString(c.shape()) + " and targets " + ShapeString(q.shape()) +
              " must have equal [N x D] shapes");
  Require(distractors.size() == masked.size(), "contrastive loss: one distractor list per masked frame required");
  const std::size_t n = c.dim(0), d = c.dim(1);
  ContrastiveTerms out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    const std::size_t t = masked[i];
    Require(t < n, "masked frame index out of range");
    std::vector<std::size_t> rows{t};
    for (std::size_t j : distractors[i]) {
      Require(j < n, "distractor index out of range");
      if (!std::equal(q.data() + j * d, q.data() + (j + 1) * d, q.data() + t * d)) rows.push_back(j);
    }
    const double cn = Norm2(c.data() + t * d, d);
    if (cn == 0.0) Fail(ErrorCategory::kNumeric, "zero vector in cosine similarity (context frame " + std::to_string(t) + ")");
    std::vector<double> cs(rows.size()), logits(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* qv = q.data() + rows[r] * d;
      const double qn = Norm2(qv, d);
      if (qn == 0.0) Fail(ErrorCategory::kNumeric, "zero vector in cosine similarity (target frame " + std::to_string(rows[r]) + ")");
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += c[t * d + k] * qv[k];
      cs[r] = dot / (cn * qn);
      logits[r] = cs[r] / temperature;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    std::vector<double> p(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) p[r] = std::exp(logits[r] - mx) / z;
    out.loss += mx + std::log(z) - logits[0];
    out.rows.push_back(std::move(rows));
    out.probs.push_back(std::move(p));
    out.cos.push_back(std::move(cs));
  }
  out.loss /= static_cast<double>(masked.size());
  return out;
}

}  // namespace

ag::Var ContrastiveLoss(ag::Var c, const Tensor& q, std::span<const std::size_t> masked,
                        const std::vector<std::vector<std::size_t>>& distractors, double temperature) {
  ContrastiveTerms terms = ComputeContrastive(c.value(), q, masked, distractors, temperature);
  std::vector<std::size_t> frames(masked.begin(), masked.end());
  return c.tape->Record(
      Tensor({1}, terms.loss), {c},
      [c, q, frames, terms = std::move(terms), temperature](ag::Tape& t, std::uint32_t self) {
        const double g = t.grad(self)[0] / static_cast<double>(frames.size());
        const Tensor& C = c.value();
        const std::size_t d = C.dim(1);
        Tensor& dc = t.grad(c.id);
        for (std::size_t i = 0; i < frames.size(); ++i) {
          const std::size_t f = frames[i];
          const double* cv = C.data() + f * d;
          const double cn = Norm2(cv, d);
          for (std::size_t r = 0; r < terms.rows[i].size(); ++r) {
            const double dl = g * (terms.probs[i][r] - (r == 0 ? 1.0 : 0.0)) / temperature;
            if (dl == 0.0) continue;
            const double* qv = q.data() + terms.rows[i][r] * d;
            const double qn = Norm2(qv, d);
            const double cosv = terms.cos[i][r];
            for (std::size_t k = 0; k < d; ++k)
              dc[f * d + k] += dl * (qv[k] / (cn * qn) - cosv * cv[k] / (cn * cn));
          }
        }
      });
}

double ContrastiveLossValue(const Tensor& c, const Tensor& q, std::span<const std::size_t> masked,
                            const std::vector<std::vector<std::size_t>>& distractors, double temperature) {
  return ComputeContrastive(c, q, masked, distractors, temperature).loss;
}

}  // namespace ssladd
