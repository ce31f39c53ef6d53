// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd.h"

#include <cstring>
#include <new>
#include <string>

#include "ssladd/commands.hpp"

struct ssladd_config {
  ssladd::RunConfig cfg;
};

struct ssladd_model {
  ssladd::Model model;
};

namespace {

thread_local std::string g_last_error;

template <class F>
ssladd_status Guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SSLADD_OK;
  } catch (const ssladd::Error& e) {
    g_last_error = e.what();
    return static_cast<ssladd_status>(e.category());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SSLADD_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SSLADD_INTERNAL;
  }
}

char* Dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void NeedPtr(const void* p, const char* what) {
  if (p == nullptr) ssladd::Fail(ssladd::ErrorCategory::kInvalidArgument, std::string(what) + " must not be NULL");
}

std::string Str(const char* s) { return s == nullptr ? std::string() : std::string(s); }

ssladd::LogSink Sink(ssladd_log_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

template <class F>
ssladd_status Report(const ssladd_config* cfg, char** report, F&& f) {
  return Guard([&] {
    NeedPtr(cfg, "config");
    NeedPtr(report, "report");
    *report = Dup(f(cfg->cfg));
  });
}

}  // namespace

extern "C" {

const char* ssladd_version(void) { return "0.1.0"; }

const char* ssladd_last_error(void) { return g_last_error.c_str(); }

const char* ssladd_status_name(ssladd_status s) {
  switch (s) {
    case SSLADD_OK: return "ok";
    case SSLADD_INVALID_ARGUMENT: return "invalid_argument";
    case SSLADD_IO: return "io";
    case SSLADD_FORMAT: return "format";
    case SSLADD_STATE: return "state";
    case SSLADD_NUMERIC: return "numeric";
    case SSLADD_INTERNAL: return "internal";
  }
  return "unknown";
}

void ssladd_string_free(char* s) { std::free(s); }

ssladd_status ssladd_config_load(const char* path, ssladd_config** out) {
  return Guard([&] {
    NeedPtr(out, "out");
    *out = nullptr;
    auto* c = new ssladd_config{ssladd::ResolveRunConfig(Str(path), std::nullopt, std::nullopt)};
    *out = c;
  });
}

void ssladd_config_free(ssladd_config* cfg) { delete cfg; }

ssladd_status ssladd_config_set(ssladd_config* cfg, const char* key, const char* value) {
  return Guard([&] {
    NeedPtr(cfg, "config");
    NeedPtr(key, "key");
    NeedPtr(value, "value");
    ssladd::RunConfig next = cfg->cfg;
    ssladd::SetConfigValue(next, key, value);
    next.Validate();
    cfg->cfg = std::move(next);
  });
}

ssladd_status ssladd_config_get(const ssladd_config* cfg, const char* key, char** value) {
  return Guard([&] {
    NeedPtr(cfg, "config");
    NeedPtr(key, "key");
    NeedPtr(value, "value");
    *value = Dup(ssladd::GetConfigValue(cfg->cfg, key));
  });
}

ssladd_status ssladd_config_format(const ssladd_config* cfg, char** text) {
  return Report(cfg, text, [](const ssladd::RunConfig& c) { return ssladd::FormatRunConfig(c); });
}

ssladd_status ssladd_gen_corpus(const ssladd_config* cfg, int materialize, char** report) {
  return Report(cfg, report, [&](const ssladd::RunConfig& c) { return ssladd::CmdGenCorpus(c, materialize != 0); });
}

ssladd_status ssladd_pretrain(const ssladd_config* cfg, ssladd_log_fn log, void* user, char** report) {
  return Report(cfg, report, [&](const ssladd::RunConfig& c) { return ssladd::CmdPretrain(c, Sink(log, user)); });
}

ssladd_status ssladd_finetune(const ssladd_config* cfg, const char* ckpt, ssladd_log_fn log, void* user,
                              char** report) {
  return Report(cfg, report,
                [&](const ssladd::RunConfig& c) { return ssladd::CmdFinetune(c, Str(ckpt), Sink(log, user)); });
}

ssladd_status ssladd_evaluate(const ssladd_config* cfg, const char* ckpt, const char* split, char** report) {
  return Report(cfg, report, [&](const ssladd::RunConfig& c) { return ssladd::CmdEvaluate(c, Str(ckpt), Str(split)); });
}

ssladd_status ssladd_score(const ssladd_config* cfg, const char* score_file, char** report) {
  return Report(cfg, report, [&](const ssladd::RunConfig& c) { return ssladd::CmdScore(c, Str(score_file)); });
}

ssladd_status ssladd_inspect(const ssladd_config* cfg, const char* ckpt, const char* mode, const char* split,
                             char** report) {
  return Report(cfg, report,
                [&](const ssladd::RunConfig& c) { return ssladd::CmdInspect(c, Str(ckpt), Str(mode), Str(split)); });
}

ssladd_status ssladd_export_embeddings(const ssladd_config* cfg, const char* ckpt, const char* split, char** report) {
  return Report(cfg, report,
                [&](const ssladd::RunConfig& c) { return ssladd::CmdExportEmbeddings(c, Str(ckpt), Str(split)); });
}

ssladd_status ssladd_model_load(const char* ckpt, ssladd_model** out) {
  return Guard([&] {
    NeedPtr(ckpt, "ckpt");
    NeedPtr(out, "out");
    *out = nullptr;
    *out = new ssladd_model{ssladd::LoadCheckpoint(ckpt).model};
  });
}

void ssladd_model_free(ssladd_model* model) { delete model; }

ssladd_status ssladd_model_score(const ssladd_model* model, const float* samples, size_t n, double* score) {
  return Guard([&] {
    NeedPtr(model, "model");
    NeedPtr(samples, "samples");
    NeedPtr(score, "score");
    *score = ssladd::Score(model->model, std::span<const float>(samples, n));
  });
}

ssladd_status ssladd_model_count(const ssladd_model* model, size_t* total, size_t* trainable) {
  return Guard([&] {
    NeedPtr(model, "model");
    const ssladd::ParamCounts c = model->model.CountTrainable();
    if (total != nullptr) *total = c.total;
    if (trainable != nullptr) *trainable = c.trainable;
  });
}

ssladd_status ssladd_compute_eer(const double* scores, const int* labels, size_t n, double* eer, double* threshold) {
  return Guard([&] {
    NeedPtr(scores, "scores");
    NeedPtr(labels, "labels");
    NeedPtr(eer, "eer");
    std::vector<ssladd::ScoreRecord> records;
    records.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] != 0 && labels[i] != 1)
        ssladd::Fail(ssladd::ErrorCategory::kInvalidArgument,
                     "labels[" + std::to_string(i) + "] must be 0 (spoof) or 1 (bona fide)");
      records.push_back({std::to_string(i), scores[i], labels[i] == 1 ? ssladd::Label::kBonafide : ssladd::Label::kSpoof});
    }
    const ssladd::EerResult r = ssladd::ComputeEer(records);
    *eer = r.eer;
    if (threshold != nullptr) *threshold = r.threshold;
  });
}

}  // extern "C"
