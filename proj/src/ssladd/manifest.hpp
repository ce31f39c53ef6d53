// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus manifests and the raw waveform file format.
//
// Manifest: UTF-8, one record per line, four tab-separated fields
//   id <TAB> recipe-or-path <TAB> bonafide|spoof <TAB> pretrain|train|dev|eval
// Blank lines and lines starting with '#' are skipped. Paths are relative
// to the manifest's directory.
//
// Waveform file: 4-byte magic "SWAV", u32 sample rate, then f32 samples,
// all little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/synth.hpp"

namespace ssladd {

std::string_view LabelName(Label l);
Label LabelFromName(std::string_view name);

struct ManifestRecord {
  std::string id;
  std::string source;  // synth recipe or relative waveform path
  Label label = Label::kBonafide;
  Split split = Split::kTrain;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::vector<ManifestRecord> Select(Split split) const;
};

// `origin` names the input in error messages.
Manifest ParseManifest(std::istream& in, const std::string& origin);
Manifest ReadManifest(const std::filesystem::path& path);
std::string FormatManifest(const std::vector<ManifestRecord>& records);
void WriteManifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

Waveform LoadWaveform(const ManifestRecord& rec, const std::filesystem::path& base_dir);

void WriteWaveformFile(const std::filesystem::path& path, const Waveform& w);
Waveform ReadWaveformFile(const std::filesystem::path& path);

// Deterministic corpus listing: ids per split, per-utterance seeds derived
// from (seed, id), durations jittered around the configured length. The
// pretrain split is spoof-only; the other splits alternate bona fide and
// spoof and cycle through the artifact types.
std::vector<ManifestRecord> BuildCorpus(const CorpusConfig& cfg, std::uint64_t seed);

// Writes manifest.tsv (recipes) into out_dir and, when `materialize`, every
// waveform as wav/<id>.swav.
void WriteCorpus(const std::vector<ManifestRecord>& records, const std::filesystem::path& out_dir, bool materialize);

}  // namespace ssladd
