// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace ssladd {

namespace {

enum StreamTag : std::uint64_t {
  kCrop = 11,
  kHeldOut = 12,
  kEpochOrder = 13,
  kTrainMask = 14,
  kHeldOutMask = 15,
  kAugment = 16,
};

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::vector<std::size_t> EpochOrder(std::size_t n, std::uint64_t seed, std::uint64_t stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::Derive(seed, {kEpochOrder, stage, epoch});
  rng.Shuffle(order);
  return order;
}

void ApplyBnUpdates(ParameterStore& store, const std::vector<std::pair<std::string, ag::BatchNormStats>>& updates) {
  for (const auto& [prefix, stats] : updates)
    UpdateRunningStats(store.mutable_buffer(prefix + ".running_mean"), store.mutable_buffer(prefix + ".running_var"),
                       stats);
}

void CheckFinite(double loss, const char* stage, std::size_t epoch) {
  if (!std::isfinite(loss))
    Fail(ErrorCategory::kNumeric,
         std::string(stage) + " loss became non-finite in epoch " + std::to_string(epoch) + "; lower the learning rate");
}

Checkpoint MakeCheckpoint(const RunConfig& cfg, const Model& model, const char* stage, std::size_t epoch,
                          double metric) {
  Checkpoint ck;
  ck.config = cfg;
  ck.config.model = model.config();
  ck.model = model;
  ck.stage = stage;
  ck.epoch = epoch;
  ck.best_metric = metric;
  return ck;
}

// Runs one batch: per-utterance forward/backward via `step_one`, which
// returns the (already weighted) loss and accumulates into `grads`.
template <class StepOne>
void RunBatch(Model& model, Adam& adam, double grad_clip, std::span<const std::size_t> batch, StepOne&& step_one) {
  GradientSet grads = EmptyGradients(model.store());
  std::vector<std::pair<std::string, ag::BatchNormStats>> bn;
  for (std::size_t idx : batch) step_one(idx, grads, bn);
  ClipGradNorm(grads, grad_clip);
  adam.Step(model.store(), grads);
  ApplyBnUpdates(model.store(), bn);
}

}  // namespace

std::vector<Utterance> LoadUtterances(const Manifest& manifest, const std::vector<ManifestRecord>& records,
                                      const RunConfig& cfg) {
  const auto target =
      static_cast<std::size_t>(std::llround(cfg.corpus.duration_s * static_cast<double>(cfg.corpus.sample_rate)));
  std::vector<Utterance> out;
  out.reserve(records.size());
  for (const ManifestRecord& rec : records) {
    Waveform w = LoadWaveform(rec, manifest.base_dir);
    if (w.sample_rate != cfg.corpus.sample_rate)
      Fail(ErrorCategory::kFormat, "utterance '" + rec.id + "' has sample rate " + std::to_string(w.sample_rate) +
                                       ", expected " + std::to_string(cfg.corpus.sample_rate));
    const std::uint64_t key = Rng::HashString(rec.id);
    w = CropOrPad(w, target, Rng::Mix(Rng::Mix(cfg.seed, kCrop), key));
    out.push_back({rec.id, rec.label, std::move(w.samples), key});
  }
  return out;
}

std::vector<Utterance> LoadUtterances(const Manifest& manifest, Split split, const RunConfig& cfg) {
  return LoadUtterances(manifest, manifest.Select(split), cfg);
}

void SplitHeldOut(const std::vector<Utterance>& all, double fraction, std::uint64_t seed, std::vector<Utterance>& train,
                  std::vector<Utterance>& held_out) {
  if (all.size() < 2)
    Fail(ErrorCategory::kInvalidArgument,
         "pretrain split needs at least 2 utterances (training plus held-out), got " + std::to_string(all.size()));
  auto n_held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(all.size())));
  n_held = std::clamp<std::size_t>(n_held, 1, all.size() - 1);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::Derive(seed, {kHeldOut});
  rng.Shuffle(order);
  std::vector<bool> is_held(all.size(), false);
  for (std::size_t i = 0; i < n_held; ++i) is_held[order[i]] = true;
  train.clear();
  held_out.clear();
  for (std::size_t i = 0; i < all.size(); ++i) (is_held[i] ? held_out : train).push_back(all[i]);
}

double PretrainHeldOutLoss(const Model& model, const std::vector<Utterance>& utts, std::uint64_t seed) {
  Require(!utts.empty(), "held-out set is empty");
  double sum = 0.0;
  for (const Utterance& u : utts) {
    ag::Tape tape(false);
    ForwardContext ctx{tape, model.store()};
    Rng rng = Rng::Derive(seed, {kHeldOutMask, u.key});
    sum += PretrainForward(ctx, model.config(), u.samples, rng).loss.value()[0];
  }
  return sum / static_cast<double>(utts.size());
}

StageResult PretrainStage(const RunConfig& cfg, const std::vector<Utterance>& corpus, const Model& init,
                          const EpochCallback& on_epoch) {
  if (corpus.empty()) Fail(ErrorCategory::kInvalidArgument, "pretrain split is empty");
  const StageConfig& sc = cfg.pretrain;
  sc.Validate();
  std::vector<Utterance> train, held;
  SplitHeldOut(corpus, sc.dev_fraction, cfg.seed, train, held);

  Model model = init;
  model.SetTrainable(Phase::kPretrain);
  const bool bn_training = model.AdaptersTrainable();
  Adam adam(sc.adam);

  StageResult res;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad = 0;
  for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<std::size_t> order = EpochOrder(train.size(), cfg.seed, 1, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += sc.batch_size) {
      const std::size_t e = std::min(order.size(), b + sc.batch_size);
      const double inv = 1.0 / static_cast<double>(e - b);
      RunBatch(model, adam, sc.grad_clip, std::span(order).subspan(b, e - b),
               [&](std::size_t idx, GradientSet& grads, auto& bn) {
                 const Utterance& u = train[idx];
                 ag::Tape tape;
                 ForwardContext ctx{tape, model.store(), bn_training, &bn};
                 Rng rng = Rng::Derive(cfg.seed, {kTrainMask, epoch, u.key});
                 PretrainOutput out = PretrainForward(ctx, model.config(), u.samples, rng);
                 const double l = out.loss.value()[0];
                 CheckFinite(l, "pretraining", epoch);
                 loss_sum += l;
                 tape.Backward(out.loss);
                 AccumulateGradients(grads, tape.ParamGrads(), inv);
               });
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.dev_loss = PretrainHeldOutLoss(model, held, cfg.seed);
    CheckFinite(log.dev_loss, "held-out pretraining", epoch);
    log.improved = log.dev_loss < best;
    if (log.improved) {
      best = log.dev_loss;
      bad = 0;
      res.best_epoch = epoch;
      res.best = MakeCheckpoint(cfg, model, "pretrain", epoch, best);
    } else {
      ++bad;
    }
    log.elapsed_s = Seconds(t0);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (bad >= sc.patience && epoch < sc.max_epochs) {
      res.early_stopped = true;
      break;
    }
  }
  res.best.extra["held_out_utterances"] = std::to_string(held.size());
  return res;
}

std::vector<ScoreEntry> ScoreUtterances(const Model& model, const std::vector<Utterance>& utts) {
  std::vector<ScoreEntry> out;
  out.reserve(utts.size());
  for (const Utterance& u : utts) out.push_back({u.id, Score(model, u.samples)});
  return out;
}

std::vector<ScoreRecord> ToRecords(const std::vector<ScoreEntry>& scores, const std::vector<Utterance>& utts) {
  Require(scores.size() == utts.size(), "score and utterance counts differ");
  std::vector<ScoreRecord> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i].id, scores[i].score, utts[i].label});
  return out;
}

double WeightedLoss(const Model& model, const std::vector<Utterance>& utts) {
  std::vector<Tensor> logits;
  std::vector<Label> labels;
  logits.reserve(utts.size());
  for (const Utterance& u : utts) {
    logits.push_back(Logits(model, u.samples));
    labels.push_back(u.label);
  }
  return WeightedCrossEntropy(logits, labels, model.config().head);
}

StageResult FinetuneStage(const RunConfig& cfg, const std::vector<Utterance>& train,
                          const std::vector<Utterance>& dev, const Model& init, const EpochCallback& on_epoch) {
  if (train.empty()) Fail(ErrorCategory::kInvalidArgument, "train split is empty");
  if (dev.empty()) Fail(ErrorCategory::kInvalidArgument, "dev split is empty");
  const StageConfig& sc = cfg.finetune;
  sc.Validate();

  Model model = init;
  model.SetTrainable(Phase::kFinetune, sc.freeze_mode);
  const bool bn_training = model.AdaptersTrainable();
  const HeadConfig& head = model.config().head;
  Adam adam(sc.adam);

  StageResult res;
  double best_eer = std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t bad = 0;
  for (std::size_t epoch = 1; epoch <= sc.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<std::size_t> order = EpochOrder(train.size(), cfg.seed, 2, epoch);
    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += sc.batch_size) {
      const std::size_t e = std::min(order.size(), b + sc.batch_size);
      const std::span<const std::size_t> batch = std::span(order).subspan(b, e - b);
      double batch_weight = 0.0;
      for (std::size_t idx : batch) batch_weight += head.WeightOf(train[idx].label);
      RunBatch(model, adam, sc.grad_clip, batch, [&](std::size_t idx, GradientSet& grads, auto& bn) {
        const Utterance& u = train[idx];
        std::vector<float> augmented;
        std::span<const float> samples = u.samples;
        if (sc.augment > 0.0) {
          Rng rng = Rng::Derive(cfg.seed, {kAugment, epoch, u.key});
          augmented = Augment({u.samples, cfg.corpus.sample_rate}, rng, sc.augment).samples;
          samples = augmented;
        }
        ag::Tape tape;
        ForwardContext ctx{tape, model.store(), bn_training, &bn};
        ClassifierOutput out = ClassifierForward(ctx, model.config(), samples);
        ag::Var loss = CrossEntropy(out.logits, u.label);
        const double w = head.WeightOf(u.label);
        const double l = loss.value()[0];
        CheckFinite(l, "fine-tuning", epoch);
        loss_sum += w * l;
        weight_sum += w;
        tape.Backward(loss);
        AccumulateGradients(grads, tape.ParamGrads(), w / batch_weight);
      });
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / weight_sum;
    const std::vector<ScoreEntry> scores = ScoreUtterances(model, dev);
    const std::vector<ScoreRecord> records = ToRecords(scores, dev);
    log.dev_eer = ComputeEer(records).eer;
    log.dev_loss = WeightedLoss(model, dev);
    CheckFinite(log.dev_loss, "dev", epoch);
    log.improved = log.dev_eer < best_eer || (log.dev_eer == best_eer && log.dev_loss < best_loss);
    if (log.improved) {
      best_eer = log.dev_eer;
      best_loss = log.dev_loss;
      bad = 0;
      res.best_epoch = epoch;
      res.best = MakeCheckpoint(cfg, model, "finetune", epoch, best_eer);
      res.best.extra["dev_loss"] = FormatScore(best_loss);
    } else {
      ++bad;
    }
    log.elapsed_s = Seconds(t0);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (bad >= sc.patience && epoch < sc.max_epochs) {
      res.early_stopped = true;
      break;
    }
  }
  res.best.extra["freeze_mode"] = std::string(FreezeModeName(sc.freeze_mode));
  return res;
}

}  // namespace ssladd
