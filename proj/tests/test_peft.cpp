// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "ssladd/model.hpp"
#include "ssladd/optim.hpp"
#include "ssladd/peft.hpp"
#include "support.hpp"

namespace ssladd {
namespace {

// Step-by-step adapter oracle: down-projection, ReLU, first conv over the
// one-channel T x s image, batch norm, second conv, channel flattening,
// up-projection, ReLU and residual.
Tensor AdapterOracle(const Tensor& x, const AdapterParams& p, bool training) {
  const std::size_t t = x.dim(0), f = x.dim(1), s = p.down.dim(0), c = p.conv1.dim(0);
  std::vector<double> h(t * s, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < f; ++k) acc += x.at(r, k) * p.down.at(j, k);
      h[r * s + j] = std::max(0.0, acc);
    }
  auto conv = [&](const std::vector<double>& in, std::size_t cin, const Tensor& w) {
    std::vector<double> out(c * t * s, 0.0);
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t r = 0; r < t; ++r)
        for (std::size_t q = 0; q < s; ++q) {
          double acc = 0.0;
          for (std::size_t i = 0; i < cin; ++i)
            for (int dr = -1; dr <= 1; ++dr)
              for (int dq = -1; dq <= 1; ++dq) {
                const long rr = static_cast<long>(r) + dr, qq = static_cast<long>(q) + dq;
                if (rr < 0 || qq < 0 || rr >= static_cast<long>(t) || qq >= static_cast<long>(s)) continue;
                acc += in[(i * t + rr) * s + qq] * w[((o * cin + i) * 3 + (dr + 1)) * 3 + (dq + 1)];
              }
          out[(o * t + r) * s + q] = acc;
        }
    return out;
  };
  std::vector<double> a = conv(h, 1, p.conv1);
  const double n = static_cast<double>(t * s);
  for (std::size_t o = 0; o < c; ++o) {
    double mean = p.running_mean[o], var = p.running_var[o];
    if (training) {
      mean = 0.0;
      for (std::size_t i = 0; i < t * s; ++i) mean += a[o * t * s + i] / n;
      var = 0.0;
      for (std::size_t i = 0; i < t * s; ++i) var += std::pow(a[o * t * s + i] - mean, 2) / n;
    }
    for (std::size_t i = 0; i < t * s; ++i)
      a[o * t * s + i] = p.bn_gamma[o] * (a[o * t * s + i] - mean) / std::sqrt(var + 1e-5) + p.bn_beta[o];
  }
  const std::vector<double> b = conv(a, c, p.conv2);
  Tensor y = x;
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t k = 0; k < f; ++k) {
      double acc = 0.0;
      for (std::size_t o = 0; o < c; ++o)
        for (std::size_t q = 0; q < s; ++q) acc += b[(o * t + r) * s + q] * p.up.at(k, o * s + q);
      y.at(r, k) += std::max(0.0, acc);
    }
  return y;
}

ModelConfig Unpefted(ModelConfig cfg) {
  cfg.peft.lora_rank = 0;
  cfg.peft.adapter_dim = 0;
  return cfg;
}

}  // namespace

TEST_CASE("lora forward examples") {
  Rng rng(1);
  const LinearParams base{UniformTensor({2, 3}, 1.0, rng), UniformTensor({2}, 1.0, rng)};
  const std::vector<double> x{0.3, -0.7, 1.1};
  SUBCASE("zero B reproduces the base layer") {
    const LoraParams l{UniformTensor({1, 3}, 1.0, rng), Tensor({2, 1}, 0.0)};
    const Tensor h = LoraForward(x, base, l);
    for (std::size_t i = 0; i < 2; ++i) {
      double acc = base.bias[i];
      for (std::size_t j = 0; j < 3; ++j) acc += base.weight.at(i, j) * x[j];
      CHECK(h[i] == doctest::Approx(acc).epsilon(1e-15));
    }
  }
  SUBCASE("identity factors pass the input through") {
    Tensor eye({3, 3}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    const LinearParams zero{Tensor({3, 3}, 0.0), Tensor({3}, 0.0)};
    const Tensor h = LoraForward(x, zero, LoraParams{eye, eye});
    for (std::size_t i = 0; i < 3; ++i) CHECK(h[i] == x[i]);
  }
  SUBCASE("matches the assembled dense matrix") {
    for (int trial = 0; trial < 100; ++trial) {
      const LinearParams b{UniformTensor({2, 3}, 1.0, rng), UniformTensor({2}, 1.0, rng)};
      const LoraParams l{UniformTensor({1, 3}, 1.0, rng), UniformTensor({2, 1}, 1.0, rng)};
      const Tensor h = LoraForward(x, b, l);
      for (std::size_t i = 0; i < 2; ++i) {
        double acc = b.bias[i];
        for (std::size_t j = 0; j < 3; ++j) acc += (b.weight.at(i, j) + l.b.at(i, 0) * l.a.at(0, j)) * x[j];
        CHECK(std::abs(h[i] - acc) < 1e-14);
      }
    }
  }
  SUBCASE("shape mismatch") {
    const LoraParams l{UniformTensor({1, 4}, 1.0, rng), Tensor({2, 1}, 0.0)};
    CHECK_THROWS_AS(LoraForward(x, base, l), Error);
  }
}

TEST_CASE("adapter forward examples") {
  Rng rng(2);
  SUBCASE("zero up-projection is the identity") {
    AdapterParams p = MakeAdapterParams(6, 3, 2, rng);
    const Tensor x = UniformTensor({5, 6}, 1.0, rng);
    CHECK(AdapterForward(x, p, Mode::kTrain) == x);
    CHECK(AdapterForward(x, p, Mode::kEval) == x);
  }
  SUBCASE("zero input gives zero output") {
    AdapterParams p = MakeAdapterParams(6, 3, 2, rng);
    p.up = UniformTensor(p.up.shape(), 1.0, rng);
    for (Mode m : {Mode::kTrain, Mode::kEval}) {
      const Tensor y = AdapterForward(Tensor({4, 6}, 0.0), p, m);
      for (double v : y.values()) CHECK(v == 0.0);
    }
  }
  SUBCASE("hand-set T=2 F=4 s=2 C=1 case matches the oracle") {
    AdapterParams p = MakeAdapterParams(4, 2, 1, rng);
    p.down = Tensor::Matrix(2, 4, {1, 0, 0.5, 0, 0, 1, 0, -0.5});
    p.conv1 = Tensor({1, 1, 3, 3}, std::vector<double>{0, 0.5, 0, 0.25, 1, 0.25, 0, 0.5, 0});
    p.bn_gamma = Tensor::Vector({1.5});
    p.bn_beta = Tensor::Vector({0.1});
    p.running_mean = Tensor::Vector({0.2});
    p.running_var = Tensor::Vector({2.0});
    p.conv2 = Tensor({1, 1, 3, 3}, std::vector<double>{0, 0, 0, 1, 1, 0, 0, 0, 0});
    p.up = Tensor::Matrix(4, 2, {1, 0, 0, 1, 1, 1, -1, 0.5});
    const Tensor x = Tensor::Matrix(2, 4, {0.4, 1.0, -0.6, 0.8, 1.2, -0.3, 0.5, 0.2});
    for (bool training : {false, true}) {
      const AdapterParams before = p;
      const Tensor want = AdapterOracle(x, before, training);
      const Tensor got = AdapterForward(x, p, training ? Mode::kTrain : Mode::kEval);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  }
  SUBCASE("random cases match the oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      AdapterParams p = MakeAdapterParams(6, 4, 3, rng);
      p.up = UniformTensor(p.up.shape(), 1.0, rng);
      p.bn_gamma = UniformTensor({3}, 1.0, rng);
      p.running_var = Tensor({3}, 0.7);
      const Tensor x = UniformTensor({1 + rng.Index(6), 6}, 1.0, rng);
      const bool training = trial % 2 == 0;
      const Tensor want = AdapterOracle(x, p, training);
      const Tensor got = AdapterForward(x, p, training ? Mode::kTrain : Mode::kEval);
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  }
  SUBCASE("running statistics move only in training mode") {
    AdapterParams p = MakeAdapterParams(6, 3, 2, rng);
    const Tensor x = UniformTensor({5, 6}, 1.0, rng);
    const Tensor rm = p.running_mean, rv = p.running_var;
    AdapterForward(x, p, Mode::kEval);
    CHECK(p.running_mean == rm);
    CHECK(p.running_var == rv);
    AdapterForward(x, p, Mode::kTrain);
    CHECK(p.running_mean != rm);
    CHECK(p.running_var != rv);
  }
}

TEST_CASE("peft gradients") {
  ModelConfig cfg = testing::TinyModelConfig();
  Model m = Model::Create(cfg, 3);
  Rng rng(4);
  testing::Randomize(m.store(), rng);
  const Tensor x = UniformTensor({5, 8}, 1.0, rng);
  SUBCASE("lora") {
    const double err = testing::CheckStoreGrads(
        m.store(), {"layer0.lora.q.A", "layer0.lora.q.B", "layer0.attn.q.weight", "layer0.attn.q.bias"},
        [&](ForwardContext& ctx) {
          return testing::Project(ProjectWithLora(ctx, ctx.tape.Constant(x), "layer0.attn.q", LoraPrefix(0, 'q')), 5);
        });
    CHECK(err < 1e-4);
  }
  SUBCASE("adapter") {
    const auto names = testing::NamesWithPrefix(m.store(), {"layer1.adapter_ffn."});
    REQUIRE(names.size() == 6);
    for (bool training : {true, false}) {
      const double err = testing::CheckStoreGrads(m.store(), names, [&](ForwardContext& ctx) {
        ctx.adapters_training = training;
        return testing::Project(MaybeAdapter(ctx, ctx.tape.Constant(x), AdapterPrefix(1, "ffn")), 6);
      });
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("injection is a no-op at initialization") {
  ModelConfig cfg = testing::TinyModelConfig();
  cfg.encoder.hidden_dim = 128;
  cfg.encoder.num_heads = 4;
  cfg.peft.lora_rank = 8;
  cfg.peft.adapter_dim = 64;
  cfg.peft.adapter_channels = 8;
  const Model base = Model::Create(Unpefted(cfg), 7);
  Model injected = base;
  injected.InjectPeft(cfg.peft, 8);
  CHECK(injected.has_peft());
  CHECK_FALSE(base.has_peft());
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    const auto w = testing::RandomWave(64, rng);
    CHECK(Logits(injected, w) == Logits(base, w));
  }
}

TEST_CASE("injection errors and inventory") {
  ModelConfig cfg = testing::TinyModelConfig();
  Model m = Model::Create(Unpefted(cfg), 1);
  PeftConfig none;
  CHECK_THROWS_WITH_AS(m.InjectPeft(none, 1), doctest::Contains("neither"), Error);
  m.InjectPeft(cfg.peft, 1);
  CHECK_THROWS_WITH_AS(m.InjectPeft(cfg.peft, 1), doctest::Contains("already"), Error);

  ModelConfig toy;  // L=4, D=64
  toy.peft.lora_rank = 8;
  toy.peft.adapter_dim = 8;
  const Model t = Model::Create(toy, 2);
  const PeftInventory inv = InventoryPeft(t.store(), toy.encoder);
  CHECK(inv.lora_pairs == 4 * 3);
  CHECK(inv.adapters == 4 * 2);
}

TEST_CASE("trainable parameter accounting") {
  ModelConfig toy;
  toy.peft.lora_rank = 8;
  toy.peft.adapter_dim = 0;
  Model m = Model::Create(toy, 3);
  m.SetTrainable(Phase::kPretrain);
  const std::size_t l = 4, r = 8, d = 64;
  CHECK(m.CountTrainable().trainable == l * 3 * r * (d + d));
  m.FreezeAll();
  CHECK(m.CountTrainable().trainable == 0);
  m.SetTrainable(Phase::kFinetune, FreezeMode::kFull);
  CHECK(m.CountTrainable().fraction() == 1.0);

  SUBCASE("store walk matches the closed form in every mode") {
    for (const ModelConfig& cfg : {ModelConfig{}, testing::TinyModelConfig()}) {
      Model x = Model::Create(cfg, 4);
      const testing::GroupCounts want = testing::ClosedFormCounts(cfg);
      CHECK(x.store().Count(ParamGroup::kEncoder).total == want.encoder);
      CHECK(x.store().Count(ParamGroup::kLora).total == want.lora);
      CHECK(x.store().Count(ParamGroup::kAdapter).total == want.adapter);
      CHECK(x.store().Count(ParamGroup::kHamoe).total == want.hamoe);
      CHECK(x.store().Count(ParamGroup::kHead).total == want.head);
      for (FreezeMode mode : {FreezeMode::kFull, FreezeMode::kFrozenSsl, FreezeMode::kAdapterOnly}) {
        x.SetTrainable(Phase::kFinetune, mode);
        CHECK(x.CountTrainable().total == want.total());
        CHECK(x.CountTrainable().trainable == testing::ExpectedTrainable(want, mode));
      }
      x.SetTrainable(Phase::kPretrain);
      CHECK(x.CountTrainable().trainable == want.lora + want.adapter);
    }
  }
  SUBCASE("trainable count grows strictly with r and with s") {
    std::size_t prev = 0;
    for (std::size_t rank : {1u, 2u, 4u, 8u, 16u, 32u}) {
      ModelConfig c;
      c.peft.lora_rank = rank;
      c.peft.adapter_dim = 8;
      Model x = Model::Create(c, 5);
      x.SetTrainable(Phase::kPretrain);
      CHECK(x.CountTrainable().trainable > prev);
      prev = x.CountTrainable().trainable;
    }
    prev = 0;
    for (std::size_t s : {1u, 2u, 8u, 32u, 63u}) {
      ModelConfig c;
      c.peft.lora_rank = 8;
      c.peft.adapter_dim = s;
      Model x = Model::Create(c, 5);
      x.SetTrainable(Phase::kPretrain);
      CHECK(x.CountTrainable().trainable > prev);
      prev = x.CountTrainable().trainable;
    }
  }
}

TEST_CASE("optimizer steps never touch frozen parameters") {
  const ModelConfig cfg = testing::TinyModelConfig();
  for (Phase phase : {Phase::kPretrain, Phase::kFinetune}) {
    Model m = Model::Create(cfg, 6);
    m.SetTrainable(phase, FreezeMode::kAdapterOnly);
    const Model before = m;
    Adam adam(AdamConfig{.lr = 1e-2});
    Rng rng(7);
    for (int step = 0; step < 20; ++step) {
      GradientSet g = EmptyGradients(m.store());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = UniformTensor(m.store().at(i).value.shape(), 1.0, rng);
      adam.Step(m.store(), g);
    }
    for (std::size_t i = 0; i < m.store().size(); ++i) {
      const Parameter& p = m.store().at(i);
      if (p.frozen)
        CHECK(p.value == before.store().at(i).value);
      else
        CHECK(p.value != before.store().at(i).value);
    }
  }
}

}  // namespace ssladd
