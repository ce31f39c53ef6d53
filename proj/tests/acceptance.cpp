// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per top-level criterion, exit status 1
// if any fails. Usage: acceptance [work_dir [criterion...]]; naming criteria
// runs only those, reusing toy outputs already present in work_dir.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "metric_oracle.hpp"
#include "ssladd/checkpoint.hpp"
#include "ssladd/commands.hpp"
#include "ssladd/encoder.hpp"
#include "ssladd/hamoe.hpp"
#include "ssladd/head.hpp"
#include "ssladd/peft.hpp"
#include "support.hpp"

namespace ssladd {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kGradBudgetS = 120.0;
constexpr double kZeroInitTol = 1e-12;
constexpr double kRoutingSumTol = 1e-9;
constexpr double kTdcfTol = 1e-12;
constexpr double kSmokeBudgetS = 30 * 60.0;
constexpr double kPretrainDecrease = 0.20;
constexpr double kFullEer = 0.10;
constexpr double kAdapterEer = 0.15;
constexpr double kAdapterFraction = 0.5;

// Values of the reference run (configs/toy.ini, seed 42). Losses are pinned
// to a relative 1e-6 and EERs to two utterances of the 500-utterance split,
// which absorbs floating-point reassociation across compilers.
struct Golden {
  const char* key;
  double value;
  double tol;
  bool relative;
};
constexpr double kLossRel = 1e-6;
constexpr double kEerAbs = 0.004;
const Golden kGoldens[] = {
    {"pretrain.epoch1_train_loss", 2.5795386765187542, kLossRel, true},
    {"pretrain.best_train_loss", 1.8643422459279706, kLossRel, true},
    {"pretrain.best_held_out_loss", 1.8557199808839258, kLossRel, true},
    {"full.eval_eer", 0.012, kEerAbs, false},
    {"adapter_only.eval_eer", 0.12, kEerAbs, false},
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Value of `key=` in a report, whether it starts a line or follows a space.
std::string Field(const std::string& report, const std::string& key) {
  std::size_t at = 0;
  while ((at = report.find(key + "=", at)) != std::string::npos) {
    if (at == 0 || report[at - 1] == '\n' || report[at - 1] == ' ') {
      const std::size_t from = at + key.size() + 1;
      return report.substr(from, report.find_first_of(" \n", from) - from);
    }
    at += key.size();
  }
  throw Error(ErrorCategory::kFormat, "report has no field '" + key + "'");
}

double Number(const std::string& report, const std::string& key) { return std::stod(Field(report, key)); }

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

ModelConfig WithoutPeft(ModelConfig cfg) {
  cfg.peft.lora_rank = 0;
  cfg.peft.adapter_dim = 0;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome GradientFidelity() {
  const auto start = Clock::now();
  std::vector<std::pair<std::string, double>> errs;
  bool structural_ok = true;

  const ModelConfig cfg = testing::TinyModelConfig();
  Model m = Model::Create(cfg, 13);
  Rng rng(14);
  testing::Randomize(m.store(), rng);
  // Same draw order as the encoder unit test. The ratio is point dependent:
  // an entry whose true gradient is a few 1e-8 (a GELU unit nearly dead on
  // every frame) meets ~1e-11 of central-difference rounding.
  const auto wave = testing::RandomWave(24, rng);
  const Tensor x = UniformTensor({6, cfg.encoder.hidden_dim}, 1.0, rng);

  errs.emplace_back("lora", testing::CheckStoreGrads(
                                m.store(),
                                {"layer0.lora.q.A", "layer0.lora.q.B", "layer0.attn.q.weight", "layer0.attn.q.bias"},
                                [&](ForwardContext& ctx) {
                                  return testing::Project(
                                      ProjectWithLora(ctx, ctx.tape.Constant(x), "layer0.attn.q", LoraPrefix(0, 'q')), 5);
                                },
                                kGradEps));
  for (bool training : {true, false}) {
    errs.emplace_back(training ? "adapter(batch stats)" : "adapter(running stats)",
                      testing::CheckStoreGrads(
                          m.store(), testing::NamesWithPrefix(m.store(), {"layer1.adapter_ffn."}),
                          [&](ForwardContext& ctx) {
                            ctx.adapters_training = training;
                            return testing::Project(MaybeAdapter(ctx, ctx.tape.Constant(x), AdapterPrefix(1, "ffn")), 6);
                          },
                          kGradEps));
  }

  // The attention key bias shifts each score row uniformly, so its gradient
  // is identically zero; it is checked for that instead of by ratio.
  auto block = [&](ForwardContext& ctx) {
    EncoderConfig one = cfg.encoder;
    one.num_layers = 1;
    return testing::Project(RunBlocks(ctx, one, ctx.tape.Constant(x))[0], 15);
  };
  auto block_names = testing::NamesWithPrefix(m.store(), {"layer0."});
  std::erase_if(block_names, testing::IsKeyBias);
  errs.emplace_back("transformer block", testing::CheckStoreGrads(m.store(), block_names, block, kGradEps));
  const auto [kb_analytic, kb_numeric] = testing::ZeroGradientMagnitudes(m.store(), "layer0.attn.k.bias", block);
  structural_ok = structural_ok && kb_analytic <= 1e-12 && kb_numeric <= 1e-8;

  std::vector<std::string> encoder_names;
  for (const Parameter& p : m.store().params())
    if ((p.group == ParamGroup::kEncoder || IsPeft(p.group)) && !testing::IsKeyBias(p.name))
      encoder_names.push_back(p.name);
  errs.emplace_back("contrastive loss", testing::CheckStoreGrads(
                                            m.store(), encoder_names,
                                            [&](ForwardContext& ctx) {
                                              Rng r(16);
                                              return PretrainForward(ctx, cfg, wave, r).loss;
                                            },
                                            kGradEps));

  HamoeConfig hc;
  hc.compress_dim = 3;
  hc.num_experts = 4;
  hc.top_k = 2;
  hc.expert_hidden = 5;
  HeadConfig head;
  head.hidden = 5;
  const std::size_t layers = 2, dim = 4;
  ParameterStore store;
  InitHamoe(store, layers, dim, hc, rng);
  InitHead(store, dim, head, rng);
  testing::Randomize(store, rng);

  const Tensor h = UniformTensor({3, dim}, 1.0, rng);
  errs.emplace_back("layer contribution",
                    testing::CheckStoreGrads(
                        store, testing::NamesWithPrefix(store, {"hamoe.compress", "hamoe.pool", "hamoe.score"}),
                        [&](ForwardContext& ctx) { return LayerContribution(ctx, ctx.tape.Constant(h)); }, kGradEps));
  const Tensor vl = UniformTensor({layers}, 1.0, rng);
  errs.emplace_back("excitation", testing::CheckStoreGrads(
                                      store, {"hamoe.excite.w1", "hamoe.excite.w2"},
                                      [&](ForwardContext& ctx) {
                                        return testing::Project(Excite(ctx, ctx.tape.Constant(vl)), 21);
                                      },
                                      kGradEps));
  const Tensor flat = UniformTensor({3, layers * dim}, 1.0, rng);
  errs.emplace_back("gate", testing::CheckStoreGrads(
                                store, {"hamoe.gate.weight", "hamoe.gate.bias"},
                                [&](ForwardContext& ctx) {
                                  ag::Var in = ctx.tape.Constant(flat);
                                  return testing::Project(
                                      ag::RowSoftmax(ag::Linear(in, ctx.P("hamoe.gate.weight"), ctx.P("hamoe.gate.bias"))),
                                      22);
                                },
                                kGradEps));
  std::vector<Tensor> mix_inputs;
  {
    Tensor probs({3, 4});
    for (double& v : probs.values()) v = rng.Uniform(0.05, 1.0);
    mix_inputs.push_back(probs);
    for (int i = 0; i < 4; ++i) mix_inputs.push_back(UniformTensor({3, 2}, 1.0, rng));
  }
  errs.emplace_back("moe mix", GradCheck(FromGraph([](ag::Tape&, const std::vector<ag::Var>& l) {
                                           std::vector<ag::Var> e(l.begin() + 1, l.end());
                                           return testing::Project(MoeMix(l[0], e, 2), 24);
                                         }),
                                         mix_inputs, kGradEps));

  // Whole mixture block plus head. A gate row of an expert that no frame
  // selects has a structurally zero gradient; draw frames until all are used.
  std::vector<Tensor> stack;
  auto draw = [&] {
    stack.clear();
    for (std::size_t i = 0; i < layers; ++i) stack.push_back(UniformTensor({3, dim}, 1.0, rng));
  };
  auto hidden = [&](ag::Tape& tape) {
    std::vector<ag::Var> v;
    for (const Tensor& t : stack) v.push_back(tape.Constant(t));
    return v;
  };
  auto unused = [&] {
    ag::Tape tape(false);
    ForwardContext ctx{tape, store};
    const auto use = ExpertUsage(HamoeForward(ctx, hc, hidden(tape)).gate, hc.num_experts);
    return std::count(use.begin(), use.end(), 0.0);
  };
  do draw();
  while (unused() > 0);
  std::vector<std::string> all;
  for (const Parameter& p : store.params()) all.push_back(p.name);
  errs.emplace_back("mixture block and head", testing::CheckStoreGrads(
                                                  store, all,
                                                  [&](ForwardContext& ctx) {
                                                    ag::Var y = HamoeForward(ctx, hc, hidden(ctx.tape)).mixed;
                                                    return CrossEntropy(Classify(ctx, PoolUtterance(ctx, y)),
                                                                        Label::kBonafide);
                                                  },
                                                  kGradEps));

  std::vector<Tensor> logits;
  std::vector<Label> labels;
  for (int i = 0; i < 5; ++i) {
    logits.push_back(UniformTensor({1, 2}, 2.0, rng));
    labels.push_back(i % 2 == 0 ? Label::kSpoof : Label::kBonafide);
  }
  double total_w = 0.0;
  for (Label l : labels) total_w += head.WeightOf(l);
  errs.emplace_back("weighted cross-entropy", GradCheck(FromGraph([&](ag::Tape&, const std::vector<ag::Var>& z) {
                                                          ag::Var loss = ag::Scale(CrossEntropy(z[0], labels[0]),
                                                                                   head.WeightOf(labels[0]) / total_w);
                                                          for (std::size_t i = 1; i < z.size(); ++i)
                                                            loss = ag::Add(loss, ag::Scale(CrossEntropy(z[i], labels[i]),
                                                                                           head.WeightOf(labels[i]) / total_w));
                                                          return loss;
                                                        }),
                                                        logits, kGradEps));

  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& [name, e] : errs) {
    if (e >= worst) worst = e, worst_name = name;
    if (!(e < kGradTol)) failed += " " + name + "=" + Fmt(e);
  }
  const double elapsed = Seconds(start);
  Outcome o;
  o.pass = failed.empty() && structural_ok && elapsed < kGradBudgetS;
  o.detail = std::to_string(errs.size()) + " checks, worst " + worst_name + "=" + Fmt(worst) + " (< " + Fmt(kGradTol) +
             "), key-bias |g|=" + Fmt(kb_analytic) + "/" + Fmt(kb_numeric) + ", " + Fmt(elapsed) + "s (< " +
             Fmt(kGradBudgetS) + "s)";
  if (!failed.empty()) o.detail += "; failing:" + failed;
  return o;
}

Outcome ZeroInitEquivalence(const RunConfig& toy) {
  const Model base = Model::Create(WithoutPeft(toy.model), 101);
  Model injected = base;
  injected.InjectPeft(toy.model.peft, 102);
  const std::size_t n = static_cast<std::size_t>(toy.corpus.duration_s * toy.corpus.sample_rate);
  Rng rng(103);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto w = testing::RandomWave(n, rng);
    const Tensor a = Logits(base, w), b = Logits(injected, w);
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs(a[j] - b[j]));
  }
  return {worst <= kZeroInitTol, "100 inputs, max |logit difference|=" + Fmt(worst) + " (<= 1e-12)"};
}

Outcome RoutingInvariants() {
  const std::size_t frames = 10000, n = 4, k = 2, layers = 4, dim = 16;
  HamoeConfig hc;
  hc.num_experts = n;
  hc.top_k = k;
  hc.compress_dim = 8;
  hc.expert_hidden = 16;
  ParameterStore store;
  Rng rng(201);
  InitHamoe(store, layers, dim, hc, rng);
  std::vector<Tensor> stack;
  for (std::size_t i = 0; i < layers; ++i) stack.push_back(UniformTensor({frames, dim}, 1.0, rng));
  auto gate = [&](const ParameterStore& s) {
    ag::Tape tape(false);
    ForwardContext ctx{tape, s};
    std::vector<ag::Var> h;
    for (const Tensor& t : stack) h.push_back(tape.Constant(t));
    return HamoeForward(ctx, hc, h).gate;
  };
  const GateDecision a = gate(store);
  ParameterStore shifted_store = store;
  for (double& b : shifted_store["hamoe.gate.bias"].value.values()) b += 7.5;
  const GateDecision b = gate(shifted_store);

  // Per-frame shifts of the gate logits on random rows as well.
  Tensor logits({frames, n});
  for (double& v : logits.values()) v = rng.Uniform(-4, 4);
  Tensor moved = logits;
  for (std::size_t t = 0; t < frames; ++t) {
    const double c = rng.Uniform(-30, 30);
    for (std::size_t i = 0; i < n; ++i) moved.at(t, i) += c;
  }
  ag::Tape plain(false);
  const GateDecision c = SelectExperts(ag::RowSoftmax(plain.Constant(logits)).value(), k);
  const GateDecision d = SelectExperts(ag::RowSoftmax(plain.Constant(moved)).value(), k);

  std::size_t bad_sum = 0, bad_zeros = 0, bad_shift = 0;
  double worst_sum = 0.0;
  for (const auto& [g, g_shift] : {std::pair{&a, &b}, std::pair{&c, &d}}) {
    for (std::size_t t = 0; t < frames; ++t) {
      double sum = 0.0;
      std::size_t zeros = 0;
      for (std::size_t i = 0; i < n; ++i) {
        sum += g->weights.at(t, i);
        zeros += g->weights.at(t, i) == 0.0;
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      bad_sum += std::abs(sum - 1.0) > kRoutingSumTol;
      bad_zeros += zeros != n - k;
      bad_shift += g->selected[t] != g_shift->selected[t];
    }
  }

  // Gradients reaching each expert output row.
  ag::Tape tape(true);
  ag::Var probs = ag::RowSoftmax(tape.Leaf(logits, true));
  std::vector<ag::Var> experts;
  for (std::size_t i = 0; i < n; ++i) experts.push_back(tape.Leaf(UniformTensor({frames, 3}, 1.0, rng), true));
  GateDecision mixed;
  tape.Backward(testing::Project(MoeMix(probs, experts, k, &mixed), 202));
  std::size_t leaked = 0, starved = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor* ge = tape.grad_or_null(experts[i]);
    for (std::size_t t = 0; t < frames; ++t) {
      const bool chosen = std::count(mixed.selected[t].begin(), mixed.selected[t].end(), i) == 1;
      double mag = 0.0;
      for (std::size_t j = 0; ge != nullptr && j < 3; ++j) mag += std::abs(ge->at(t, j));
      leaked += !chosen && mag != 0.0;
      starved += chosen && mag == 0.0;
    }
  }
  Outcome o;
  o.pass = bad_sum == 0 && bad_zeros == 0 && bad_shift == 0 && leaked == 0 && starved == 0;
  o.detail = "2x10^4 frames N=4 K=2: max |sum-1|=" + Fmt(worst_sum) + ", rows without exactly 2 zeros=" +
             std::to_string(bad_zeros) + ", selections changed by shift=" + std::to_string(bad_shift) +
             ", unselected rows with gradient=" + std::to_string(leaked);
  return o;
}

Outcome MetricOracles() {
  Rng rng(301);
  const TdcfCostModel cost;
  std::size_t eer_mismatch = 0, tdcf_mismatch = 0;
  double worst_eer = 0.0, worst_tdcf = 0.0;
  for (int inst = 0; inst < 500; ++inst) {
    const auto recs = testing::RandomScores(rng, 200, inst % 3 == 0);
    const double e = ComputeEer(recs).eer, eo = testing::OracleEer(recs);
    const double t = ComputeMinTdcf(recs, cost), to = testing::OracleMinTdcf(recs, cost.C1(), cost.C2());
    worst_eer = std::max(worst_eer, std::abs(e - eo));
    worst_tdcf = std::max(worst_tdcf, std::abs(t - to));
    eer_mismatch += e != eo;
    tdcf_mismatch += !(std::abs(t - to) <= kTdcfTol);
  }
  auto recs = [](std::initializer_list<double> bona, std::initializer_list<double> spoof) {
    std::vector<ScoreRecord> out;
    for (double s : bona) out.push_back({"b" + std::to_string(out.size()), s, Label::kBonafide});
    for (double s : spoof) out.push_back({"s" + std::to_string(out.size()), s, Label::kSpoof});
    return out;
  };
  const auto separated = recs({2.0, 1.5, 1.0}, {-1.0, -2.0});
  const auto constant = recs({0.3, 0.3, 0.3}, {0.3, 0.3});
  const double sep_eer = ComputeEer(separated).eer, sep_tdcf = ComputeMinTdcf(separated, cost);
  const double const_eer = ComputeEer(constant).eer, const_tdcf = ComputeMinTdcf(constant, cost);
  Outcome o;
  o.pass = eer_mismatch == 0 && tdcf_mismatch == 0 && sep_eer == 0.0 && sep_tdcf == 0.0 && const_eer == 0.5 &&
           std::abs(const_tdcf - 1.0) <= kTdcfTol;
  o.detail = "500 instances: EER mismatches=" + std::to_string(eer_mismatch) + " (max " + Fmt(worst_eer) +
             "), min t-DCF max |diff|=" + Fmt(worst_tdcf) + " (<= 1e-12); separated EER=" + Fmt(sep_eer) +
             " t-DCF=" + Fmt(sep_tdcf) + "; constant EER=" + Fmt(const_eer) + " t-DCF=" + Fmt(const_tdcf);
  return o;
}

Outcome ParameterAccounting(const RunConfig& toy) {
  Model m = Model::Create(toy.model, 401);
  const testing::GroupCounts want = testing::ClosedFormCounts(toy.model);
  bool match = true;
  std::map<FreezeMode, double> fraction;
  std::string detail;
  for (FreezeMode mode : {FreezeMode::kFull, FreezeMode::kAdapterOnly, FreezeMode::kFrozenSsl}) {
    m.SetTrainable(Phase::kFinetune, mode);
    const ParamCounts c = m.CountTrainable();
    const std::size_t expect = testing::ExpectedTrainable(want, mode);
    match = match && c.trainable == expect && c.total == want.total();
    fraction[mode] = c.fraction();
    detail += std::string(FreezeModeName(mode)) + "=" + std::to_string(c.trainable) + "/" + std::to_string(c.total) +
              " (" + Fmt(c.fraction()) + ") ";
  }
  m.SetTrainable(Phase::kPretrain);
  match = match && m.CountTrainable().trainable == want.lora + want.adapter;
  const bool ordered = fraction[FreezeMode::kFull] > fraction[FreezeMode::kAdapterOnly] &&
                       fraction[FreezeMode::kAdapterOnly] > fraction[FreezeMode::kFrozenSsl];
  detail += match ? "match enumeration" : "MISMATCH with enumeration";
  detail += ordered ? ", full > adapter_only > frozen_ssl" : ", ordering violated";
  return {match && ordered, detail};
}

// ---------------------------------------------------------------------------
// Stage runs on the toy configuration, shared by the smoke, freeze and
// determinism criteria.

struct ToyRun {
  std::string pretrain, full, full_eval, adapter, adapter_eval;
  double seconds = 0.0;
};

ToyRun RunToy(const RunConfig& toy) {
  const auto start = Clock::now();
  auto echo = [](const std::string& line) { std::cout << "  " << line << std::endl; };
  ToyRun r;
  CmdGenCorpus(toy, false);
  r.pretrain = CmdPretrain(toy, echo);
  RunConfig full = toy;
  full.finetune.freeze_mode = FreezeMode::kFull;
  r.full = CmdFinetune(full, "", echo);
  r.full_eval = CmdEvaluate(full, "", "eval");
  RunConfig adapter = toy;
  adapter.finetune.freeze_mode = FreezeMode::kAdapterOnly;
  r.adapter = CmdFinetune(adapter, "", echo);
  r.adapter_eval = CmdEvaluate(adapter, "", "eval");
  r.seconds = Seconds(start);
  return r;
}

Outcome Smoke(const ToyRun& r) {
  const double e1 = Number(r.pretrain, "epoch1_train_loss"), best = Number(r.pretrain, "best_train_loss");
  const double held1 = Number(r.pretrain, "epoch1_held_out_loss"), held_best = Number(r.pretrain, "best_held_out_loss");
  const double decrease = (e1 - best) / e1;
  const double full_eer = Number(r.full_eval, "eer"), adapter_eer = Number(r.adapter_eval, "eer");
  const double adapter_fraction = Number(r.adapter, "fraction");
  const std::map<std::string, double> measured{{"pretrain.epoch1_train_loss", e1},
                                               {"pretrain.best_train_loss", best},
                                               {"pretrain.best_held_out_loss", held_best},
                                               {"full.eval_eer", full_eer},
                                               {"adapter_only.eval_eer", adapter_eer}};
  std::string golden_misses;
  for (const Golden& g : kGoldens) {
    const double v = measured.at(g.key);
    const double tol = g.relative ? g.tol * std::abs(g.value) : g.tol;
    if (!(std::abs(v - g.value) <= tol)) golden_misses += std::string(" ") + g.key + "=" + FormatScore(v);
  }
  Outcome o;
  o.pass = decrease >= kPretrainDecrease && full_eer <= kFullEer && adapter_fraction < kAdapterFraction &&
           adapter_eer <= kAdapterEer && r.seconds < kSmokeBudgetS && golden_misses.empty();
  o.detail = "pretrain loss " + Fmt(e1) + " -> " + Fmt(best) + " (-" + Fmt(100 * decrease) + "% >= 20%; held-out " +
             Fmt(held1) + " -> " + Fmt(held_best) + "), full eval EER=" + Fmt(full_eer) +
             " (<= 0.10), adapter_only fraction=" + Fmt(adapter_fraction) + " (< 0.5) eval EER=" + Fmt(adapter_eer) +
             " (<= 0.15), " + Fmt(r.seconds) + "s (< 1800s)";
  o.detail += golden_misses.empty() ? ", goldens reproduced" : "; golden drift:" + golden_misses;
  return o;
}

std::size_t CountChanged(const Model& before, const Model& after, const std::function<bool(ParamGroup)>& keep) {
  std::size_t changed = 0;
  for (const Parameter& p : before.store().params())
    if (keep(p.group)) changed += !(after.store()[p.name].value == p.value);
  return changed;
}

Outcome FreezeIntegrity(const RunConfig& toy) {
  const Checkpoint init = LoadCheckpoint(PretrainDir(toy) / "init.ckpt");
  const Checkpoint best = LoadCheckpoint(PretrainDir(toy) / "best.ckpt");
  const auto non_peft = [](ParamGroup g) { return !IsPeft(g); };
  const std::size_t pre_changed = CountChanged(init.model, best.model, non_peft);
  const std::size_t peft_moved = CountChanged(init.model, best.model, IsPeft);

  RunConfig frozen = toy;
  frozen.finetune.freeze_mode = FreezeMode::kFrozenSsl;
  frozen.finetune.max_epochs = 1;
  CmdFinetune(frozen, "");
  const Checkpoint tuned = LoadCheckpoint(FinetuneDir(frozen, FreezeMode::kFrozenSsl) / "best.ckpt");
  const auto encoder_side = [](ParamGroup g) { return g == ParamGroup::kEncoder || IsPeft(g); };
  const std::size_t ft_changed = CountChanged(best.model, tuned.model, encoder_side);
  const std::size_t head_moved =
      CountChanged(best.model, tuned.model, [&](ParamGroup g) { return !encoder_side(g); });

  Outcome o;
  o.pass = pre_changed == 0 && ft_changed == 0 && peft_moved > 0 && head_moved > 0;
  o.detail = "pretrain: non-PEFT tensors changed=" + std::to_string(pre_changed) + " (PEFT changed=" +
             std::to_string(peft_moved) + "); frozen_ssl: encoder-side tensors changed=" + std::to_string(ft_changed) +
             " (mixture/head changed=" + std::to_string(head_moved) + ")";
  return o;
}

// Every file under a directory except the wall-clock epoch logs.
std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "log.txt")
      files[fs::relative(e.path(), root).string()] = testing::ReadFile(e.path());
  return files;
}

std::vector<std::string> RunAllCommands(const RunConfig& cfg) {
  std::vector<std::string> reports;
  reports.push_back(CmdGenCorpus(cfg, true));
  reports.push_back(CmdPretrain(cfg));
  reports.push_back(CmdFinetune(cfg, ""));
  reports.push_back(CmdEvaluate(cfg, "", "eval"));
  const fs::path tuned = FinetuneDir(cfg, cfg.finetune.freeze_mode);
  reports.push_back(CmdInspect(cfg, (tuned / "best.ckpt").string(), "", "dev"));
  reports.push_back(CmdExportEmbeddings(cfg, "", "dev"));
  reports.push_back(CmdScore(cfg, (tuned / "eval" / "scores.txt").string()));
  return reports;
}

Outcome Determinism(const RunConfig& toy, const fs::path& work) {
  RunConfig cfg = DefaultRunConfig();
  cfg.seed = 7;
  cfg.model = testing::TinyModelConfig();
  cfg.corpus.pretrain = 48;
  cfg.corpus.train = 32;
  cfg.corpus.dev = 16;
  cfg.corpus.eval = 16;
  cfg.corpus.duration_s = 0.05;
  cfg.corpus.duration_jitter_s = 0.01;
  cfg.pretrain.adam.lr = 1e-3;
  cfg.pretrain.max_epochs = 2;
  cfg.finetune.adam.lr = 1e-3;
  cfg.finetune.max_epochs = 2;
  cfg.finetune.freeze_mode = FreezeMode::kAdapterOnly;
  cfg.finetune.augment = 0.3;
  cfg.out_dir = (work / "determinism").string();

  fs::remove_all(cfg.out_dir);
  const auto first_reports = RunAllCommands(cfg);
  const auto first = Snapshot(cfg.out_dir);
  fs::remove_all(cfg.out_dir);
  const auto second_reports = RunAllCommands(cfg);
  const auto second = Snapshot(cfg.out_dir);

  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  differing += second.size() != first.size();
  const bool reports_equal = first_reports == second_reports;

  // Re-scoring the toy model checkpoint.
  RunConfig full = toy;
  full.finetune.freeze_mode = FreezeMode::kFull;
  const fs::path scores = FinetuneDir(full, FreezeMode::kFull) / "eval" / "scores.txt";
  const std::string before = testing::ReadFile(scores);
  const std::string report = CmdEvaluate(full, "", "eval");
  const bool toy_equal = testing::ReadFile(scores) == before && !before.empty();

  Outcome o;
  o.pass = differing == 0 && reports_equal && toy_equal;
  o.detail = "all 7 commands twice: " + std::to_string(first.size()) + " files, " + std::to_string(differing) +
             " differ, reports " + (reports_equal ? "equal" : "DIFFER") + "; toy re-evaluation scores " +
             (toy_equal ? "identical" : "DIFFER");
  return o;
}

}  // namespace
}  // namespace ssladd

int main(int argc, char** argv) {
  using namespace ssladd;
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ssladd_acceptance";
  const std::vector<std::string> only(argv + std::min(argc, 2), argv + argc);
  fs::create_directories(work);
  const RunConfig toy = ResolveRunConfig(SSLADD_TOY_CONFIG, {}, (work / "toy").string());
  std::cout << "work directory " << work.string() << std::endl;

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) return;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << Fmt(Seconds(start)) << "s]"
              << std::endl;
  };
  RunConfig full = toy;
  full.finetune.freeze_mode = FreezeMode::kFull;
  auto toy_ready = [&] {
    return fs::exists(PretrainDir(toy) / "best.ckpt") && fs::exists(FinetuneDir(full, FreezeMode::kFull) / "eval");
  };

  report("gradient-fidelity", GradientFidelity);
  report("zero-init-equivalence", [&] { return ZeroInitEquivalence(toy); });
  report("routing-invariants", RoutingInvariants);
  report("metric-oracles", MetricOracles);
  report("parameter-accounting", [&] { return ParameterAccounting(toy); });
  report("e2e-smoke", [&] { return Smoke(RunToy(toy)); });
  report("freeze-integrity", [&] {
    if (!toy_ready()) return Outcome{false, "toy run outputs missing"};
    return FreezeIntegrity(toy);
  });
  report("determinism", [&] {
    if (!toy_ready()) return Outcome{false, "toy run outputs missing"};
    return Determinism(toy, work);
  });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
