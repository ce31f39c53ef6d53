// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit status is 0 on success, otherwise the
// error category code (see ssladd.h); the category name is printed with
// the message on stderr.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ssladd.h"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ckpt;
  std::string split;
  std::string mode;
  std::string scores;
  std::vector<std::string> sets;
  bool materialize = false;
};

class Failure {
 public:
  explicit Failure(ssladd_status s) : status(s) {}
  ssladd_status status;
};

void Check(ssladd_status s) {
  if (s != SSLADD_OK) throw Failure(s);
}

const char* OrNull(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

class Config {
 public:
  explicit Config(const Options& o) {
    Check(ssladd_config_load(OrNull(o.config), &cfg_));
    for (const std::string& kv : o.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "ssladd: error [invalid_argument]: --set expects section.key=value, got '%s'\n", kv.c_str());
        throw Failure(SSLADD_INVALID_ARGUMENT);
      }
      Check(ssladd_config_set(cfg_, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (!o.out.empty()) Check(ssladd_config_set(cfg_, "run.out_dir", o.out.c_str()));
    if (o.seed) Check(ssladd_config_set(cfg_, "run.seed", std::to_string(*o.seed).c_str()));
  }
  ~Config() { ssladd_config_free(cfg_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  const ssladd_config* get() const { return cfg_; }

 private:
  ssladd_config* cfg_ = nullptr;
};

void PrintLog(const char* line, void*) {
  std::fprintf(stderr, "%s\n", line);
  std::fflush(stderr);
}

// Prints and releases the report filled in by a command call.
void Emit(ssladd_status s, char** slot) {
  Check(s);
  char* report = *slot;
  *slot = nullptr;
  if (report != nullptr) std::fputs(report, stdout);
  ssladd_string_free(report);
}

void AddCommon(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (INI)");
  cmd->add_option("--seed", o.seed, "Override run.seed");
  cmd->add_option("--out", o.out, "Override run.out_dir (takes precedence over SSLADD_OUT_DIR)");
  cmd->add_option("--set", o.sets, "Override a config value, section.key=value (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-speech deepfake detector with PEFT encoder and expert fusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ssladd_version());
  Options o;

  auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus manifest (and waveforms)");
  AddCommon(gen, o);
  gen->add_flag("--materialize", o.materialize, "Also write every waveform as a .swav file");

  auto* pre = app.add_subcommand("pretrain", "Stage 1: contrastive pretraining of the PEFT modules");
  AddCommon(pre, o);

  auto* fine = app.add_subcommand("finetune", "Stage 2: supervised fine-tuning");
  AddCommon(fine, o);
  fine->add_option("--ckpt", o.ckpt, "Initial checkpoint (default <out>/pretrain/best.ckpt)");

  auto* eval = app.add_subcommand("evaluate", "Score a split and report EER and min t-DCF");
  AddCommon(eval, o);
  eval->add_option("--ckpt", o.ckpt, "Checkpoint (default <out>/finetune_<mode>/best.ckpt)");
  eval->add_option("--split", o.split, "pretrain, train, dev or eval (default eval)");

  auto* score = app.add_subcommand("score", "Metric report for an existing score file");
  AddCommon(score, o);
  score->add_option("--scores", o.scores, "Score file (utt_id score per line)")->required();

  auto* inspect = app.add_subcommand("inspect", "Parameter counts and gate usage of a checkpoint");
  AddCommon(inspect, o);
  inspect->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  inspect->add_option("--mode", o.mode, "Count trainables under this freeze mode instead of the stored flags");
  inspect->add_option("--split", o.split, "Also report expert selection frequency over this split");

  auto* embed = app.add_subcommand("export-embeddings", "Write pooled utterance embeddings as TSV");
  AddCommon(embed, o);
  embed->add_option("--ckpt", o.ckpt, "Checkpoint (default <out>/finetune_<mode>/best.ckpt)");
  embed->add_option("--split", o.split, "Split (default eval)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : SSLADD_INVALID_ARGUMENT;
  }

  try {
    Config cfg(o);
    char* report = nullptr;
    if (gen->parsed()) {
      Emit(ssladd_gen_corpus(cfg.get(), o.materialize ? 1 : 0, &report), &report);
    } else if (pre->parsed()) {
      Emit(ssladd_pretrain(cfg.get(), PrintLog, nullptr, &report), &report);
    } else if (fine->parsed()) {
      Emit(ssladd_finetune(cfg.get(), OrNull(o.ckpt), PrintLog, nullptr, &report), &report);
    } else if (eval->parsed()) {
      Emit(ssladd_evaluate(cfg.get(), OrNull(o.ckpt), OrNull(o.split), &report), &report);
    } else if (score->parsed()) {
      Emit(ssladd_score(cfg.get(), o.scores.c_str(), &report), &report);
    } else if (inspect->parsed()) {
      Emit(ssladd_inspect(cfg.get(), o.ckpt.c_str(), OrNull(o.mode), OrNull(o.split), &report), &report);
    } else if (embed->parsed()) {
      Emit(ssladd_export_embeddings(cfg.get(), OrNull(o.ckpt), OrNull(o.split), &report), &report);
    }
  } catch (const Failure& f) {
    if (*ssladd_last_error() != '\0')
      std::fprintf(stderr, "ssladd: error [%s]: %s\n", ssladd_status_name(f.status), ssladd_last_error());
    return static_cast<int>(f.status);
  }
  return 0;
}
