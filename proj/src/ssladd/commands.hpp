// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Operator commands. Each takes a resolved RunConfig, writes its outputs
// (plus the resolved config as config.ini) below cfg.out_dir and returns a
// short deterministic report for stdout. Output layout:
//
//   <out>/corpus/       manifest.tsv [wav/]
//   <out>/pretrain/     init.ckpt best.ckpt log.txt summary.txt
//   <out>/finetune_<mode>/  best.ckpt log.txt summary.txt
//   <out>/<run>/<split>/    scores.txt report.txt det.tsv embeddings.tsv
//
// where <run> is the directory name of the evaluated checkpoint.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "ssladd/checkpoint.hpp"
#include "ssladd/config.hpp"

namespace ssladd {

inline constexpr const char* kOutDirEnv = "SSLADD_OUT_DIR";

// Config file (or defaults when empty), then the output-directory
// environment variable, then explicit overrides.
RunConfig ResolveRunConfig(const std::string& config_path, std::optional<std::uint64_t> seed,
                           std::optional<std::string> out_dir);

// Receives one line per epoch and other progress messages.
using LogSink = std::function<void(const std::string&)>;

std::filesystem::path PretrainDir(const RunConfig& cfg);
std::filesystem::path FinetuneDir(const RunConfig& cfg, FreezeMode mode);

std::string CmdGenCorpus(const RunConfig& cfg, bool materialize);
std::string CmdPretrain(const RunConfig& cfg, const LogSink& log = {});
// Empty ckpt: <out>/pretrain/best.ckpt.
std::string CmdFinetune(const RunConfig& cfg, const std::string& ckpt, const LogSink& log = {});
// Empty ckpt: <out>/finetune_<freeze_mode>/best.ckpt.
std::string CmdEvaluate(const RunConfig& cfg, const std::string& ckpt, const std::string& split);
// Metric report for an existing score file, labels joined from the manifest.
std::string CmdScore(const RunConfig& cfg, const std::string& score_file);
// Parameter table of a checkpoint, optionally re-flagged for a freeze mode,
// and gate usage over a split when `split` is non-empty (needs cfg).
std::string CmdInspect(const RunConfig& cfg, const std::string& ckpt, const std::string& mode, const std::string& split);
std::string CmdExportEmbeddings(const RunConfig& cfg, const std::string& ckpt, const std::string& split);

// Parameter-count table (one row per group plus a total row).
std::string ParamTable(const Model& model);

}  // namespace ssladd
