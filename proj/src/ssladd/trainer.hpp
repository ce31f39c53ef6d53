// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training. Utterances are processed one at a time; gradients of
// a batch are summed in a fixed order, so results are bit-reproducible for a
// given seed. Every random choice (epoch order, masks, distractors,
// augmentation, crop offsets) comes from a stream derived from the run seed
// and the utterance id.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssladd/checkpoint.hpp"
#include "ssladd/manifest.hpp"
#include "ssladd/metrics.hpp"

namespace ssladd {

struct Utterance {
  std::string id;
  Label label = Label::kBonafide;
  std::vector<float> samples;  // fixed length
  std::uint64_t key = 0;       // hash of the id, used to derive rng streams
};

// Loads and length-normalizes the records of one split.
std::vector<Utterance> LoadUtterances(const Manifest& manifest, Split split, const RunConfig& cfg);
std::vector<Utterance> LoadUtterances(const Manifest& manifest, const std::vector<ManifestRecord>& records,
                                      const RunConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_eer = 0.0;  // fine-tuning only
  bool improved = false;
  double elapsed_s = 0.0;
};

struct StageResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Deterministic held-out slice of the pretrain split (at least one
// utterance, never all of them).
void SplitHeldOut(const std::vector<Utterance>& all, double fraction, std::uint64_t seed, std::vector<Utterance>& train,
                  std::vector<Utterance>& held_out);

// Mean masked-prediction loss in evaluation mode with masks fixed per
// utterance (independent of the epoch).
double PretrainHeldOutLoss(const Model& model, const std::vector<Utterance>& utts, std::uint64_t seed);

// Stage 1: contrastive pretraining of the PEFT modules only. `init` must
// carry PEFT modules. Early stopping watches the held-out loss.
StageResult PretrainStage(const RunConfig& cfg, const std::vector<Utterance>& corpus, const Model& init,
                          const EpochCallback& on_epoch = {});

// Stage 2: supervised fine-tuning under cfg.finetune.freeze_mode; the best
// checkpoint is chosen by dev EER, ties broken by lower dev loss.
StageResult FinetuneStage(const RunConfig& cfg, const std::vector<Utterance>& train,
                          const std::vector<Utterance>& dev, const Model& init, const EpochCallback& on_epoch = {});

// Evaluation-mode scores and class-weighted loss.
std::vector<ScoreEntry> ScoreUtterances(const Model& model, const std::vector<Utterance>& utts);
std::vector<ScoreRecord> ToRecords(const std::vector<ScoreEntry>& scores, const std::vector<Utterance>& utts);
double WeightedLoss(const Model& model, const std::vector<Utterance>& utts);

}  // namespace ssladd
