// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/manifest.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace ssladd {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

std::string_view LabelName(Label l) { return l == Label::kBonafide ? "bonafide" : "spoof"; }

Label LabelFromName(std::string_view name) {
  if (name == "bonafide") return Label::kBonafide;
  if (name == "spoof") return Label::kSpoof;
  Fail(ErrorCategory::kFormat, "unknown label '" + std::string(name) + "' (expected bonafide or spoof)");
}

std::vector<ManifestRecord> Manifest::Select(Split split) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

Manifest ParseManifest(std::istream& in, const std::string& origin) {
  Manifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> void {
    Fail(ErrorCategory::kFormat, origin + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) fail("expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    if (fields[0].empty()) fail("empty utterance id");
    if (fields[1].empty()) fail("empty source for '" + fields[0] + "'");
    if (!seen.insert(fields[0]).second) fail("duplicate utterance id '" + fields[0] + "'");
    ManifestRecord r;
    r.id = fields[0];
    r.source = fields[1];
    try {
      r.label = LabelFromName(fields[2]);
      r.split = SplitFromName(fields[3]);
      if (IsRecipe(r.source)) ParseRecipe(r.source);
    } catch (const Error& e) {
      fail(e.what());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest ReadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorCategory::kIo, "cannot open manifest '" + path.string() + "'");
  Manifest m = ParseManifest(in, path.string());
  m.base_dir = path.parent_path();
  return m;
}

std::string FormatManifest(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.id;
    out += '\t';
    out += r.source;
    out += '\t';
    out += LabelName(r.label);
    out += '\t';
    out += SplitName(r.split);
    out += '\n';
  }
  return out;
}

void WriteManifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCategory::kIo, "cannot write manifest '" + path.string() + "'");
  out << FormatManifest(records);
  if (!out) Fail(ErrorCategory::kIo, "error writing manifest '" + path.string() + "'");
}

Waveform LoadWaveform(const ManifestRecord& rec, const std::filesystem::path& base_dir) {
  if (IsRecipe(rec.source)) return Synthesize(ParseRecipe(rec.source));
  return ReadWaveformFile(base_dir / rec.source);
}

namespace {

constexpr char kWaveMagic[4] = {'S', 'W', 'A', 'V'};

}  // namespace

void WriteWaveformFile(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCategory::kIo, "cannot write waveform '" + path.string() + "'");
  out.write(kWaveMagic, 4);
  const std::uint32_t sr = w.sample_rate;
  out.write(reinterpret_cast<const char*>(&sr), 4);
  out.write(reinterpret_cast<const char*>(w.samples.data()), static_cast<std::streamsize>(w.samples.size() * 4));
  if (!out) Fail(ErrorCategory::kIo, "error writing waveform '" + path.string() + "'");
}

Waveform ReadWaveformFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCategory::kIo, "cannot open waveform '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWaveMagic, 4) != 0)
    Fail(ErrorCategory::kFormat, "'" + path.string() + "' is not a waveform file (bad header)");
  if ((bytes.size() - 8) % 4 != 0)
    Fail(ErrorCategory::kFormat, "'" + path.string() + "': truncated sample data at offset " +
                                     std::to_string(bytes.size() - (bytes.size() - 8) % 4));
  Waveform w;
  std::memcpy(&w.sample_rate, bytes.data() + 4, 4);
  w.samples.resize((bytes.size() - 8) / 4);
  std::memcpy(w.samples.data(), bytes.data() + 8, w.samples.size() * 4);
  return w;
}

std::vector<ManifestRecord> BuildCorpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  std::vector<ManifestRecord> out;
  struct Part {
    Split split;
    std::size_t count;
    const char* prefix;
  };
  const Part parts[] = {{Split::kPretrain, cfg.pretrain, "pre"},
                        {Split::kTrain, cfg.train, "trn"},
                        {Split::kDev, cfg.dev, "dev"},
                        {Split::kEval, cfg.eval, "evl"}};
  for (const Part& p : parts) {
    for (std::size_t i = 0; i < p.count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05zu", p.prefix, i);
      Recipe r;
      r.seed = Rng::Mix(seed, Rng::HashString(id));
      r.sample_rate = cfg.sample_rate;
      Rng dur_rng = Rng::Derive(r.seed, {0xD0});
      const double dur = cfg.duration_s + cfg.duration_jitter_s * dur_rng.Uniform(-1.0, 1.0);
      // Whole samples, expressed exactly as a decimal duration.
      r.duration_s = static_cast<double>(std::llround(dur * cfg.sample_rate)) / cfg.sample_rate;
      std::size_t artifact_slot = i;
      if (p.split == Split::kPretrain) {
        r.label = Label::kSpoof;
      } else {
        r.label = i % 2 == 0 ? Label::kBonafide : Label::kSpoof;
        artifact_slot = i / 2;
      }
      if (r.label == Label::kSpoof) r.artifact = kAllArtifacts[artifact_slot % std::size(kAllArtifacts)];
      out.push_back(ManifestRecord{id, FormatRecipe(r), r.label, p.split});
    }
  }
  return out;
}

void WriteCorpus(const std::vector<ManifestRecord>& records, const std::filesystem::path& out_dir, bool materialize) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) Fail(ErrorCategory::kIo, "cannot create corpus directory '" + out_dir.string() + "': " + ec.message());
  WriteManifest(out_dir / "manifest.tsv", records);
  if (!materialize) return;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) Fail(ErrorCategory::kIo, "cannot create '" + (out_dir / "wav").string() + "': " + ec.message());
  for (const auto& r : records) WriteWaveformFile(out_dir / "wav" / (r.id + ".swav"), LoadWaveform(r, out_dir));
}

}  // namespace ssladd
