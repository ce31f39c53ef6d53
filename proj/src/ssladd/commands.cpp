// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/commands.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ssladd/manifest.hpp"
#include "ssladd/trainer.hpp"

namespace ssladd {

namespace fs = std::filesystem;

namespace {

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCategory::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) Fail(ErrorCategory::kIo, "error writing '" + path.string() + "'");
}

void MakeDirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) Fail(ErrorCategory::kIo, "cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string Real(double v) { return FormatScore(v); }

// Epoch log: truncated when a stage starts, one record appended per epoch.
class EpochLogFile {
 public:
  explicit EpochLogFile(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) Fail(ErrorCategory::kIo, "cannot write '" + path.string() + "'");
  }
  std::string Append(const char* stage, const EpochLog& e) {
    std::ostringstream line;
    line << "stage=" << stage << " epoch=" << e.epoch << " train_loss=" << Real(e.train_loss)
         << " dev_loss=" << Real(e.dev_loss);
    if (std::string_view(stage) == "finetune") line << " dev_eer=" << Real(e.dev_eer);
    line << " improved=" << (e.improved ? 1 : 0) << " elapsed_s=" << Real(std::round(e.elapsed_s * 1000.0) / 1000.0);
    out_ << line.str() << '\n';
    out_.flush();
    return line.str();
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

Manifest LoadManifestFor(const RunConfig& cfg) {
  const fs::path path = cfg.ManifestPath();
  if (!fs::exists(path))
    Fail(ErrorCategory::kIo, "manifest '" + path.string() + "' does not exist (run gen-corpus or set run.manifest)");
  return ReadManifest(path);
}

// The checkpoint carries its model configuration; a run config that
// describes a different model is rejected rather than silently ignored.
void CheckModelMatches(const RunConfig& cfg, const Checkpoint& ck, const std::string& ckpt_path) {
  if (cfg.model == ck.model.config()) return;
  RunConfig stored = cfg;
  stored.model = ck.model.config();
  for (const std::string& key : ConfigKeys()) {
    const std::string a = GetConfigValue(cfg, key), b = GetConfigValue(stored, key);
    if (a != b)
      Fail(ErrorCategory::kState, "checkpoint '" + ckpt_path + "' was built with " + key + "=" + b +
                                      " but the config says " + key + "=" + a);
  }
  Fail(ErrorCategory::kState, "checkpoint '" + ckpt_path + "' does not match the configured model");
}

Checkpoint LoadFor(const RunConfig& cfg, const fs::path& path) {
  if (!fs::exists(path)) Fail(ErrorCategory::kIo, "checkpoint '" + path.string() + "' does not exist");
  Checkpoint ck = LoadCheckpoint(path);
  CheckModelMatches(cfg, ck, path.string());
  return ck;
}

fs::path DefaultEvalCheckpoint(const RunConfig& cfg) { return FinetuneDir(cfg, cfg.finetune.freeze_mode) / "best.ckpt"; }

fs::path EvalDir(const RunConfig& cfg, const fs::path& ckpt, Split split) {
  fs::path run = ckpt.parent_path().filename();
  if (run.empty()) run = "model";
  return fs::path(cfg.out_dir) / run / std::string(SplitName(split));
}

std::string CountsLine(const ParamCounts& c) {
  return "trainable=" + std::to_string(c.trainable) + " total=" + std::to_string(c.total) +
         " fraction=" + Real(c.fraction());
}

}  // namespace

RunConfig ResolveRunConfig(const std::string& config_path, std::optional<std::uint64_t> seed,
                           std::optional<std::string> out_dir) {
  RunConfig cfg = config_path.empty() ? DefaultRunConfig() : LoadRunConfig(config_path);
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') cfg.out_dir = env;
  if (out_dir) cfg.out_dir = *out_dir;
  if (seed) cfg.seed = *seed;
  cfg.Validate();
  return cfg;
}

fs::path PretrainDir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "pretrain"; }

fs::path FinetuneDir(const RunConfig& cfg, FreezeMode mode) {
  return fs::path(cfg.out_dir) / ("finetune_" + std::string(FreezeModeName(mode)));
}

std::string CmdGenCorpus(const RunConfig& cfg, bool materialize) {
  const fs::path dir = cfg.ManifestPath().parent_path();
  MakeDirs(dir);
  const std::vector<ManifestRecord> records = BuildCorpus(cfg.corpus, cfg.seed);
  WriteCorpus(records, dir, materialize);
  if (cfg.ManifestPath().filename() != "manifest.tsv") WriteManifest(cfg.ManifestPath(), records);
  WriteText(dir / "config.ini", FormatRunConfig(cfg));
  std::ostringstream out;
  out << "manifest=" << cfg.ManifestPath().string() << '\n';
  for (Split s : {Split::kPretrain, Split::kTrain, Split::kDev, Split::kEval}) {
    std::size_t n = 0, bona = 0;
    for (const ManifestRecord& r : records)
      if (r.split == s) {
        ++n;
        bona += r.label == Label::kBonafide;
      }
    out << SplitName(s) << "=" << n << " bonafide=" << bona << " spoof=" << n - bona << '\n';
  }
  return out.str();
}

std::string CmdPretrain(const RunConfig& cfg, const LogSink& log) {
  const Manifest manifest = LoadManifestFor(cfg);
  const std::vector<Utterance> corpus = LoadUtterances(manifest, Split::kPretrain, cfg);
  if (corpus.empty()) Fail(ErrorCategory::kInvalidArgument, "pretrain split of '" + cfg.ManifestPath().string() + "' is empty");
  if (!cfg.model.peft.enabled())
    Fail(ErrorCategory::kInvalidArgument, "pretraining needs PEFT modules: set peft.lora_rank or peft.adapter_dim");
  const fs::path dir = PretrainDir(cfg);
  MakeDirs(dir);
  WriteText(dir / "config.ini", FormatRunConfig(cfg));

  Checkpoint init;
  init.config = cfg;
  init.model = Model::Create(cfg.model, cfg.seed);
  init.model.SetTrainable(Phase::kPretrain);
  init.stage = "init";
  SaveCheckpoint(dir / "init.ckpt", init);

  EpochLogFile log_file(dir / "log.txt");
  StageResult res = PretrainStage(cfg, corpus, init.model, [&](const EpochLog& e) {
    const std::string line = log_file.Append("pretrain", e);
    if (log) log(line);
  });
  SaveCheckpoint(dir / "best.ckpt", res.best);

  const EpochLog& first = res.log.front();
  const EpochLog& best = res.log[res.best_epoch - 1];
  std::ostringstream out;
  out << "stage=pretrain\n"
      << "epochs_run=" << res.log.size() << '\n'
      << "early_stopped=" << (res.early_stopped ? 1 : 0) << '\n'
      << "best_epoch=" << res.best_epoch << '\n'
      << "epoch1_train_loss=" << Real(first.train_loss) << '\n'
      << "epoch1_held_out_loss=" << Real(first.dev_loss) << '\n'
      << "best_train_loss=" << Real(best.train_loss) << '\n'
      << "best_held_out_loss=" << Real(best.dev_loss) << '\n'
      << "held_out_decrease=" << Real((first.dev_loss - best.dev_loss) / first.dev_loss) << '\n'
      << CountsLine(res.best.model.CountTrainable()) << '\n'
      << "checkpoint=" << (dir / "best.ckpt").string() << '\n';
  WriteText(dir / "summary.txt", out.str());
  return out.str();
}

std::string CmdFinetune(const RunConfig& cfg, const std::string& ckpt, const LogSink& log) {
  const fs::path ckpt_path = ckpt.empty() ? PretrainDir(cfg) / "best.ckpt" : fs::path(ckpt);
  const Checkpoint init = LoadFor(cfg, ckpt_path);
  const FreezeMode mode = cfg.finetune.freeze_mode;
  if (mode == FreezeMode::kAdapterOnly && !init.model.has_peft())
    Fail(ErrorCategory::kState, "freeze mode adapter_only needs PEFT modules, but checkpoint '" + ckpt_path.string() +
                                    "' has none");
  const Manifest manifest = LoadManifestFor(cfg);
  const std::vector<Utterance> train = LoadUtterances(manifest, Split::kTrain, cfg);
  const std::vector<Utterance> dev = LoadUtterances(manifest, Split::kDev, cfg);
  const fs::path dir = FinetuneDir(cfg, mode);
  MakeDirs(dir);
  WriteText(dir / "config.ini", FormatRunConfig(cfg));

  EpochLogFile log_file(dir / "log.txt");
  StageResult res = FinetuneStage(cfg, train, dev, init.model, [&](const EpochLog& e) {
    const std::string line = log_file.Append("finetune", e);
    if (log) log(line);
  });
  res.best.extra["init_checkpoint_stage"] = init.stage;
  SaveCheckpoint(dir / "best.ckpt", res.best);

  const EpochLog& best = res.log[res.best_epoch - 1];
  std::ostringstream out;
  out << "stage=finetune\n"
      << "freeze_mode=" << FreezeModeName(mode) << '\n'
      << "epochs_run=" << res.log.size() << '\n'
      << "early_stopped=" << (res.early_stopped ? 1 : 0) << '\n'
      << "best_epoch=" << res.best_epoch << '\n'
      << "best_dev_eer=" << Real(best.dev_eer) << '\n'
      << "best_dev_loss=" << Real(best.dev_loss) << '\n'
      << "final_dev_loss=" << Real(res.log.back().dev_loss) << '\n'
      << CountsLine(res.best.model.CountTrainable()) << '\n'
      << "checkpoint=" << (dir / "best.ckpt").string() << '\n';
  WriteText(dir / "summary.txt", out.str());
  return out.str();
}

std::string CmdEvaluate(const RunConfig& cfg, const std::string& ckpt, const std::string& split_name) {
  const fs::path ckpt_path = ckpt.empty() ? DefaultEvalCheckpoint(cfg) : fs::path(ckpt);
  const Split split = SplitFromName(split_name.empty() ? "eval" : split_name);
  const Checkpoint ck = LoadFor(cfg, ckpt_path);
  const Manifest manifest = LoadManifestFor(cfg);
  const std::vector<Utterance> utts = LoadUtterances(manifest, split, cfg);
  if (utts.empty()) Fail(ErrorCategory::kInvalidArgument, "split '" + std::string(SplitName(split)) + "' is empty");
  const std::vector<ScoreEntry> scores = ScoreUtterances(ck.model, utts);
  const std::vector<ScoreRecord> records = ToRecords(scores, utts);

  const fs::path dir = EvalDir(cfg, ckpt_path, split);
  MakeDirs(dir);
  WriteText(dir / "config.ini", FormatRunConfig(cfg));
  WriteScores(dir / "scores.txt", scores);
  std::string report = "checkpoint=" + ckpt_path.string() + "\nsplit=" + std::string(SplitName(split)) +
                       "\nutterances=" + std::to_string(utts.size()) + "\n" + MetricReport(records, cfg.tdcf);
  WriteText(dir / "report.txt", report);
  WriteText(dir / "det.tsv", DetTable(records));
  return report;
}

std::string CmdScore(const RunConfig& cfg, const std::string& score_file) {
  if (score_file.empty()) Fail(ErrorCategory::kInvalidArgument, "score needs a score file");
  const std::vector<ScoreEntry> scores = ReadScores(score_file);
  const Manifest manifest = LoadManifestFor(cfg);
  std::vector<LabelSource> labels;
  labels.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) labels.push_back({r.id, r.label});
  const std::vector<ScoreRecord> records = JoinLabels(scores, labels);
  return "scores=" + score_file + "\nutterances=" + std::to_string(records.size()) + "\n" +
         MetricReport(records, cfg.tdcf);
}

std::string ParamTable(const Model& model) {
  const ParameterStore& store = model.store();
  std::ostringstream out;
  out << "group\ttotal\ttrainable\tfraction_of_model\n";
  const double total = static_cast<double>(store.Count().total);
  for (ParamGroup g :
       {ParamGroup::kEncoder, ParamGroup::kLora, ParamGroup::kAdapter, ParamGroup::kHamoe, ParamGroup::kHead}) {
    const ParamCounts c = store.Count(g);
    out << GroupName(g) << '\t' << c.total << '\t' << c.trainable << '\t' << Real(c.total / total) << '\n';
  }
  const ParamCounts all = store.Count();
  out << "all\t" << all.total << '\t' << all.trainable << '\t' << Real(all.fraction()) << '\n';
  return out.str();
}

std::string CmdInspect(const RunConfig& cfg, const std::string& ckpt, const std::string& mode,
                       const std::string& split_name) {
  if (ckpt.empty()) Fail(ErrorCategory::kInvalidArgument, "inspect needs --ckpt");
  Checkpoint ck = LoadCheckpoint(ckpt);
  if (!mode.empty()) ck.model.SetTrainable(Phase::kFinetune, FreezeModeFromName(mode));
  std::ostringstream out;
  out << "checkpoint=" << ckpt << "\nstage=" << ck.stage << "\nepoch=" << ck.epoch
      << "\nbest_metric=" << Real(ck.best_metric) << '\n';
  for (const auto& [k, v] : ck.extra) out << "extra." << k << '=' << v << '\n';
  out << "freeze_flags=" << (mode.empty() ? "stored" : mode) << '\n'
      << CountsLine(ck.model.CountTrainable()) << "\n\n"
      << ParamTable(ck.model);
  if (!split_name.empty()) {
    const Split split = SplitFromName(split_name);
    const Manifest manifest = LoadManifestFor(cfg);
    const std::vector<Utterance> utts = LoadUtterances(manifest, split, cfg);
    const std::size_t n = ck.model.config().hamoe.num_experts;
    std::vector<double> usage(n, 0.0);
    std::size_t frames = 0;
    for (const Utterance& u : utts) {
      ag::Tape tape(false);
      ForwardContext ctx{tape, ck.model.store()};
      const ClassifierOutput o = ClassifierForward(ctx, ck.model.config(), u.samples);
      const std::vector<double> f = ExpertUsage(o.fusion.gate, n);
      const std::size_t t = o.fusion.gate.selected.size();
      for (std::size_t i = 0; i < n; ++i) usage[i] += f[i] * static_cast<double>(t);
      frames += t;
    }
    out << "\nsplit=" << SplitName(split) << " frames=" << frames << "\nexpert\tselection_frequency\n";
    for (std::size_t i = 0; i < n; ++i)
      out << i << '\t' << Real(frames == 0 ? 0.0 : usage[i] / static_cast<double>(frames)) << '\n';
  }
  return out.str();
}

std::string CmdExportEmbeddings(const RunConfig& cfg, const std::string& ckpt, const std::string& split_name) {
  const fs::path ckpt_path = ckpt.empty() ? DefaultEvalCheckpoint(cfg) : fs::path(ckpt);
  const Split split = SplitFromName(split_name.empty() ? "eval" : split_name);
  const Checkpoint ck = LoadFor(cfg, ckpt_path);
  const Manifest manifest = LoadManifestFor(cfg);
  const std::vector<Utterance> utts = LoadUtterances(manifest, split, cfg);
  const fs::path dir = EvalDir(cfg, ckpt_path, split);
  MakeDirs(dir);
  WriteText(dir / "config.ini", FormatRunConfig(cfg));
  std::ostringstream table;
  std::size_t dim = 0;
  for (const Utterance& u : utts) {
    const Tensor e = Embedding(ck.model, u.samples);
    dim = e.size();
    table << u.id << '\t' << LabelName(u.label);
    for (double v : e.span()) table << '\t' << Real(v);
    table << '\n';
  }
  WriteText(dir / "embeddings.tsv", table.str());
  return "embeddings=" + (dir / "embeddings.tsv").string() + "\nutterances=" + std::to_string(utts.size()) +
         "\ndim=" + std::to_string(dim) + "\n";
}

}  // namespace ssladd
