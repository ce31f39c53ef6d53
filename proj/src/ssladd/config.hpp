// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI-style document with one section per component.
// Keys outside any section belong to [run]. Unknown sections or keys are
// rejected. FormatRunConfig writes every key, so its output is the fully
// resolved configuration and parses back to an equal RunConfig.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/metrics.hpp"
#include "ssladd/model.hpp"
#include "ssladd/optim.hpp"
#include "ssladd/synth.hpp"

namespace ssladd {

struct StageConfig {
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  double grad_clip = 1.0;
  // Fine-tuning only.
  FreezeMode freeze_mode = FreezeMode::kFull;
  double augment = 0.0;
  // Pretraining only: share of the pretrain split held out for early stopping.
  double dev_fraction = 0.05;

  void Validate() const;
  friend bool operator==(const StageConfig&, const StageConfig&) = default;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/default";
  std::string manifest;  // empty: <out_dir>/corpus/manifest.tsv
  CorpusConfig corpus;
  ModelConfig model;
  StageConfig pretrain;
  StageConfig finetune;
  TdcfCostModel tdcf;

  void Validate() const;
  std::filesystem::path ManifestPath() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Library defaults: pretraining lr 1e-5, fine-tuning lr 5e-6, Adam betas
// (0.9, 0.999), weight decay 1e-4, patience 3, batch 8.
RunConfig DefaultRunConfig();

RunConfig ParseRunConfig(const std::string& text, const std::string& origin);
RunConfig LoadRunConfig(const std::filesystem::path& path);
std::string FormatRunConfig(const RunConfig& cfg);

// Sets one value addressed as "section.key" (e.g. "finetune.lr").
void SetConfigValue(RunConfig& cfg, std::string_view dotted_key, std::string_view value);
std::string GetConfigValue(const RunConfig& cfg, std::string_view dotted_key);
std::vector<std::string> ConfigKeys();

}  // namespace ssladd
