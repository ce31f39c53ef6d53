// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "ssladd/checkpoint.hpp"
#include "ssladd/trainer.hpp"
#include "support.hpp"

namespace ssladd {
namespace {

constexpr std::size_t kSamples = 64;

RunConfig TinyRun() {
  RunConfig cfg;
  cfg.model = testing::TinyModelConfig();
  cfg.corpus.sample_rate = 4000;
  cfg.corpus.duration_s = static_cast<double>(kSamples) / 4000.0;
  cfg.corpus.duration_jitter_s = 0.0;
  cfg.pretrain.adam.lr = 1e-3;
  cfg.pretrain.max_epochs = 1;
  cfg.pretrain.batch_size = 4;
  cfg.finetune.adam.lr = 1e-3;
  cfg.finetune.max_epochs = 2;
  cfg.finetune.batch_size = 4;
  return cfg;
}

std::vector<Utterance> Utterances(const std::string& prefix, std::size_t n, bool spoof_only) {
  std::vector<Utterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = prefix + std::to_string(i);
    u.key = Rng::HashString(u.id);
    const bool bona = !spoof_only && i % 2 == 0;
    u.label = bona ? Label::kBonafide : Label::kSpoof;
    const Waveform w = bona ? GenBonafide(u.key, 0.02, 4000) : GenSpoof(u.key, 0.02, 4000, kAllArtifacts[i % 4]);
    u.samples = CropOrPad(w, kSamples, u.key).samples;
    out.push_back(std::move(u));
  }
  return out;
}

bool SameValues(const ParameterStore& a, const ParameterStore& b, const std::string& name) {
  return a[name].value == b[name].value;
}

}  // namespace

TEST_CASE("adam") {
  ParameterStore s;
  s.Add("w", Tensor::Vector({0.5, -1.0, 2.0}), ParamGroup::kHead);
  s.Add("f", Tensor::Vector({1.0}), ParamGroup::kEncoder);
  s.Add("n", Tensor::Vector({3.0}), ParamGroup::kHead);
  s["f"].frozen = true;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  Adam adam(cfg);
  GradientSet g = EmptyGradients(s);
  g[0] = Tensor::Vector({0.2, -3.0, 0.0});
  g[1] = Tensor::Vector({5.0});
  adam.Step(s, g);

  // First step: m_hat = g, v_hat = g^2.
  const double p0[3] = {0.5, -1.0, 2.0}, g0[3] = {0.2, -3.0, 0.0};
  double m[3], v[3], p[3];
  for (int i = 0; i < 3; ++i) {
    m[i] = 0.1 * g0[i];
    v[i] = 0.001 * g0[i] * g0[i];
    p[i] = p0[i] * (1 - 0.1 * 0.01) - 0.1 * (m[i] / 0.1) / (std::sqrt(v[i] / 0.001) + 1e-8);
    CHECK(s["w"].value[i] == doctest::Approx(p[i]).epsilon(1e-14));
  }
  CHECK(s["w"].value[0] == doctest::Approx(0.5 * 0.999 - 0.1).epsilon(1e-6));
  CHECK(s["f"].value[0] == 1.0);
  CHECK(s["n"].value[0] == 3.0);

  // Second step with a new gradient.
  const double g1[3] = {-0.4, 1.0, 0.5};
  g[0] = Tensor::Vector({g1[0], g1[1], g1[2]});
  adam.Step(s, g);
  for (int i = 0; i < 3; ++i) {
    m[i] = 0.9 * m[i] + 0.1 * g1[i];
    v[i] = 0.999 * v[i] + 0.001 * g1[i] * g1[i];
    const double mh = m[i] / (1 - 0.81), vh = v[i] / (1 - 0.999 * 0.999);
    p[i] = p[i] * (1 - 0.001) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(s["w"].value[i] == doctest::Approx(p[i]).epsilon(1e-14));
  }
  CHECK(adam.steps() == 2);

  SUBCASE("zero gradient without weight decay leaves parameters unchanged") {
    ParameterStore z;
    z.Add("w", Tensor::Vector({0.25, -7.0}), ParamGroup::kHead);
    AdamConfig c;
    c.weight_decay = 0.0;
    Adam a(c);
    GradientSet zg = EmptyGradients(z);
    zg[0] = Tensor({2}, 0.0);
    for (int i = 0; i < 5; ++i) a.Step(z, zg);
    CHECK(z["w"].value == Tensor::Vector({0.25, -7.0}));
  }
  SUBCASE("invalid settings") {
    AdamConfig c;
    c.lr = 0.0;
    CHECK_THROWS_AS(Adam{c}, Error);
    c = AdamConfig{};
    c.beta2 = 1.0;
    CHECK_THROWS_AS(Adam{c}, Error);
  }
}

TEST_CASE("gradient clipping") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    GradientSet g{UniformTensor({3, 4}, 2.0, rng), Tensor{}, UniformTensor({5}, 2.0, rng)};
    const double before = GlobalNorm(g);
    const double clip = rng.Uniform(0.1, 6.0);
    const GradientSet orig = g;
    CHECK(ClipGradNorm(g, clip) == doctest::Approx(before));
    if (before > clip) {
      CHECK(GlobalNorm(g) <= clip + 1e-9);
      CHECK(GlobalNorm(g) == doctest::Approx(clip));
    } else {
      CHECK(g[0] == orig[0]);
    }
    GradientSet off = orig;
    ClipGradNorm(off, 0.0);
    CHECK(off[2] == orig[2]);
  }
  GradientSet single{Tensor::Vector({3, 4})};
  CHECK(GlobalNorm(single) == 5.0);
}

TEST_CASE("checkpoints") {
  const RunConfig cfg = TinyRun();
  Checkpoint ck{cfg, Model::Create(cfg.model, 3), "init", 0, 0.0, {}};
  ck.model.SetTrainable(Phase::kFinetune, FreezeMode::kFrozenSsl);
  ck.epoch = 7;
  ck.best_metric = 0.30000000000000004;
  ck.extra["note"] = "tab\tand\nnewline";
  const auto dir = testing::ScratchDir("checkpoint");

  SaveCheckpoint(dir / "a.ckpt", ck);
  const Checkpoint back = LoadCheckpoint(dir / "a.ckpt");
  CHECK(back == ck);
  SaveCheckpoint(dir / "b.ckpt", back);
  const std::string bytes = testing::ReadFile(dir / "a.ckpt");
  CHECK(bytes == testing::ReadFile(dir / "b.ckpt"));

  const auto utts = Utterances("c", 3, false);
  for (const auto& u : utts) CHECK(Logits(back.model, u.samples) == Logits(ck.model, u.samples));

  const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, raw.size() / 2, raw.size() - 1}) {
    const std::vector<std::uint8_t> part(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_WITH_AS(DeserializeCheckpoint(part, "t"), doctest::Contains("offset"), Error);
  }
  std::vector<std::uint8_t> version = raw;
  version[8] = 9;
  CHECK_THROWS_WITH_AS(DeserializeCheckpoint(version, "v"), doctest::Contains("unsupported checkpoint version 9"), Error);
  std::vector<std::uint8_t> flipped = raw;
  flipped[raw.size() / 2] ^= 0x10;
  CHECK_THROWS_WITH_AS(DeserializeCheckpoint(flipped, "f"), doctest::Contains("checksum"), Error);
  std::vector<std::uint8_t> magic = raw;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(DeserializeCheckpoint(magic, "m"), doctest::Contains("bad magic"), Error);
  CHECK_THROWS_AS(LoadCheckpoint(dir / "missing.ckpt"), Error);
}

TEST_CASE("held-out split") {
  const auto all = Utterances("h", 100, true);
  std::vector<Utterance> train, held, train2, held2;
  SplitHeldOut(all, 0.05, 9, train, held);
  CHECK(held.size() == 5);
  CHECK(train.size() == 95);
  std::set<std::string> ids;
  for (const auto& u : train) ids.insert(u.id);
  for (const auto& u : held) CHECK(ids.insert(u.id).second);
  CHECK(ids.size() == 100);
  SplitHeldOut(all, 0.05, 9, train2, held2);
  CHECK(held2.size() == held.size());
  for (std::size_t i = 0; i < held.size(); ++i) CHECK(held[i].id == held2[i].id);

  const auto few = Utterances("f", 3, true);
  SplitHeldOut(few, 0.01, 1, train, held);
  CHECK(held.size() == 1);
  SplitHeldOut(few, 0.99, 1, train, held);
  CHECK(train.size() == 1);
  CHECK_THROWS_AS(SplitHeldOut(Utterances("o", 1, true), 0.5, 1, train, held), Error);
}

TEST_CASE("pretraining touches only the PEFT modules") {
  const RunConfig cfg = TinyRun();
  const Model init = Model::Create(cfg.model, 5);
  const auto corpus = Utterances("p", 50, true);
  const StageResult res = PretrainStage(cfg, corpus, init);
  REQUIRE(res.log.size() == 1);
  CHECK(std::isfinite(res.log[0].train_loss));
  const ParameterStore& before = init.store();
  const ParameterStore& after = res.best.model.store();
  std::size_t peft_changed = 0, peft_total = 0;
  for (const Parameter& p : before.params()) {
    if (IsPeft(p.group)) {
      ++peft_total;
      peft_changed += !SameValues(before, after, p.name);
    } else {
      CHECK_MESSAGE(SameValues(before, after, p.name), p.name);
    }
  }
  CHECK(peft_changed == peft_total);
  for (const Parameter& p : after.params()) CHECK(p.frozen == !IsPeft(p.group));
  CHECK(res.best.stage == "pretrain");

  CHECK_THROWS_AS(PretrainStage(cfg, {}, init), Error);
  ModelConfig bare = cfg.model;
  bare.peft.lora_rank = 0;
  bare.peft.adapter_dim = 0;
  try {
    PretrainStage(cfg, corpus, Model::Create(bare, 5));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kState);
  }
}

TEST_CASE("zero-initialised PEFT pieces receive gradients at injection") {
  const RunConfig cfg = TinyRun();
  Model model = Model::Create(cfg.model, 10);
  model.SetTrainable(Phase::kPretrain);
  const auto utt = Utterances("g", 1, true)[0];
  ag::Tape tape;
  ForwardContext ctx{tape, model.store(), true};
  Rng rng(11);
  PretrainOutput out = PretrainForward(ctx, model.config(), utt.samples, rng);
  tape.Backward(out.loss);
  std::set<std::string> nonzero;
  for (const auto& [id, g] : tape.ParamGrads())
    for (double v : g.values())
      if (v != 0.0) nonzero.insert(model.store().params()[id].name);
  // LoRA B and the adapter up-projection are the zero-initialised outputs;
  // everything upstream of them only starts to learn once they move.
  std::size_t outputs = 0;
  for (const Parameter& p : model.store().params()) {
    const bool output = p.name.ends_with(".B") || p.name.ends_with(".up");
    if (!output) continue;
    ++outputs;
    CHECK_MESSAGE(nonzero.count(p.name) == 1, p.name);
  }
  CHECK(outputs == 2 * 3 + 2 * 2);
}

TEST_CASE("fine-tuning freeze modes") {
  const RunConfig base = TinyRun();
  const Model init = Model::Create(base.model, 6);
  const auto train = Utterances("t", 12, false), dev = Utterances("d", 6, false);
  const testing::GroupCounts counts = testing::ClosedFormCounts(base.model);

  for (FreezeMode mode : {FreezeMode::kFull, FreezeMode::kFrozenSsl, FreezeMode::kAdapterOnly}) {
    CAPTURE(FreezeModeName(mode));
    RunConfig cfg = base;
    cfg.finetune.freeze_mode = mode;
    cfg.finetune.max_epochs = 1;
    Model probe = init;
    probe.SetTrainable(Phase::kFinetune, mode);
    CHECK(probe.CountTrainable().trainable == testing::ExpectedTrainable(counts, mode));

    const StageResult res = FinetuneStage(cfg, train, dev, init);
    const ParameterStore& after = res.best.model.store();
    for (const Parameter& p : init.store().params()) {
      const bool trainable = mode == FreezeMode::kFull ||
                             p.group == ParamGroup::kHamoe || p.group == ParamGroup::kHead ||
                             (mode == FreezeMode::kAdapterOnly && IsPeft(p.group));
      if (!trainable) CHECK_MESSAGE(SameValues(init.store(), after, p.name), p.name);
    }
    for (const char* name : {"head.fc2.weight", "hamoe.gate.weight"})
      CHECK_MESSAGE(!SameValues(init.store(), after, name), name);
    if (mode == FreezeMode::kFrozenSsl) {
      for (const auto& b : init.store().buffers())
        CHECK(after.buffer(b.name) == b.value);
      for (const auto& u : dev) {
        const Model& m = res.best.model;
        ag::Tape t1(false), t2(false);
        ForwardContext c1{t1, init.store()}, c2{t2, m.store()};
        const auto h1 = ClassifierForward(c1, init.config(), u.samples).hidden;
        const auto h2 = ClassifierForward(c2, m.config(), u.samples).hidden;
        for (std::size_t l = 0; l < h1.size(); ++l) CHECK(h1[l].value() == h2[l].value());
      }
    }
    CHECK(res.best.extra.at("freeze_mode") == FreezeModeName(mode));
  }

  ModelConfig bare = base.model;
  bare.peft.lora_rank = 0;
  bare.peft.adapter_dim = 0;
  RunConfig cfg = base;
  cfg.finetune.freeze_mode = FreezeMode::kAdapterOnly;
  CHECK_THROWS_WITH_AS(FinetuneStage(cfg, train, dev, Model::Create(bare, 6)), doctest::Contains("adapter_only"), Error);
  CHECK_THROWS_AS(FinetuneStage(base, {}, dev, init), Error);
}

TEST_CASE("identical runs agree exactly") {
  RunConfig cfg = TinyRun();
  cfg.finetune.augment = 0.3;
  const Model init = Model::Create(cfg.model, 7);
  const auto train = Utterances("t", 10, false), dev = Utterances("d", 6, false);
  const StageResult a = FinetuneStage(cfg, train, dev, init);
  const StageResult b = FinetuneStage(cfg, train, dev, init);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].dev_loss == b.log[i].dev_loss);
    CHECK(a.log[i].dev_eer == b.log[i].dev_eer);
  }
  CHECK(SerializeCheckpoint(a.best) == SerializeCheckpoint(b.best));

  RunConfig other = cfg;
  other.seed = cfg.seed + 1;
  const StageResult c = FinetuneStage(other, train, dev, init);
  CHECK(c.log[0].train_loss != a.log[0].train_loss);

  const auto pre = Utterances("p", 12, true);
  const StageResult p1 = PretrainStage(cfg, pre, init), p2 = PretrainStage(cfg, pre, init);
  CHECK(p1.log[0].dev_loss == p2.log[0].dev_loss);
  CHECK(SerializeCheckpoint(p1.best) == SerializeCheckpoint(p2.best));
}

TEST_CASE("early stopping") {
  SUBCASE("a stalled run stops after exactly `patience` non-improving epochs") {
    RunConfig cfg = TinyRun();
    cfg.finetune.freeze_mode = FreezeMode::kFrozenSsl;
    // Steps far below one ulp of every parameter: the dev metrics repeat.
    cfg.finetune.adam.lr = 1e-300;
    cfg.finetune.max_epochs = 10;
    const Model init = Model::Create(cfg.model, 8);
    const auto train = Utterances("t", 4, false), dev = Utterances("d", 4, false);
    for (std::size_t patience : {1, 2, 4}) {
      cfg.finetune.patience = patience;
      const StageResult res = FinetuneStage(cfg, train, dev, init);
      CHECK(res.early_stopped);
      CHECK(res.log.size() == patience + 1);
      CHECK(res.best_epoch == 1);
      for (std::size_t i = 1; i < res.log.size(); ++i) CHECK_FALSE(res.log[i].improved);
    }
    cfg.finetune.patience = 10;
    const StageResult full = FinetuneStage(cfg, train, dev, init);
    CHECK_FALSE(full.early_stopped);
    CHECK(full.log.size() == 10);
  }
  SUBCASE("stopping rule holds on a live run") {
    RunConfig cfg = TinyRun();
    cfg.pretrain.max_epochs = 6;
    cfg.pretrain.patience = 2;
    cfg.pretrain.adam.lr = 3e-2;
    const StageResult res = PretrainStage(cfg, Utterances("p", 16, true), Model::Create(cfg.model, 9));
    std::size_t run = 0;
    double best = INFINITY;
    for (std::size_t i = 0; i < res.log.size(); ++i) {
      CHECK(res.log[i].improved == (res.log[i].dev_loss < best));
      best = std::min(best, res.log[i].dev_loss);
      run = res.log[i].improved ? 0 : run + 1;
      if (i + 1 < res.log.size()) CHECK(run < 2);
    }
    CHECK(res.early_stopped == (run >= 2 && res.log.size() < 6));
    CHECK(res.best.best_metric == best);
  }
}

TEST_CASE("utterances from a manifest") {
  const auto dir = testing::ScratchDir("utterances");
  CorpusConfig cc;
  cc.pretrain = 3;
  cc.train = 4;
  cc.dev = 2;
  cc.eval = 2;
  cc.duration_s = 0.02;
  cc.duration_jitter_s = 0.01;
  WriteCorpus(BuildCorpus(cc, 1), dir, false);
  RunConfig cfg = TinyRun();
  cfg.corpus = cc;
  const Manifest m = ReadManifest(dir / "manifest.tsv");
  const auto utts = LoadUtterances(m, Split::kTrain, cfg);
  REQUIRE(utts.size() == 4);
  for (const auto& u : utts) CHECK(u.samples.size() == 80);
  CHECK(LoadUtterances(m, Split::kTrain, cfg)[1].samples == utts[1].samples);
  cfg.corpus.sample_rate = 8000;
  CHECK_THROWS_WITH_AS(LoadUtterances(m, Split::kTrain, cfg), doctest::Contains("sample rate"), Error);
}

}  // namespace ssladd
