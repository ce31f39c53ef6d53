// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Countermeasure evaluation: EER, normalized min t-DCF, DET points and score
// files. Scores are "higher = more bona fide"; a threshold t accepts an
// utterance as bona fide iff score >= t.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssladd/head.hpp"

namespace ssladd {

struct ScoreRecord {
  std::string id;
  double score = 0.0;
  Label label = Label::kBonafide;
};

// Operating point of one threshold.
struct OperatingPoint {
  double threshold = 0.0;  // +inf for the reject-all point
  double p_miss = 0.0;     // bona fide rejected
  double p_fa = 0.0;       // spoof accepted
};

// One point per distinct score plus the reject-all point, ordered by
// increasing threshold: P_fa non-increasing, P_miss non-decreasing.
std::vector<OperatingPoint> SweepThresholds(std::span<const ScoreRecord> records);

struct DetPoint {
  double p_fa = 0.0;
  double p_miss = 0.0;
};
std::vector<DetPoint> DetPoints(std::span<const ScoreRecord> records);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;  // first swept threshold with P_miss >= P_fa
};
// Linear interpolation between the two operating points that bracket the
// P_miss = P_fa crossing.
EerResult ComputeEer(std::span<const ScoreRecord> records);

enum class TdcfRevision { k2019, k2021 };
std::string_view TdcfRevisionName(TdcfRevision r);
TdcfRevision TdcfRevisionFromName(std::string_view name);

// Cost model with a fixed ASV operating point. Defaults are the ASVspoof
// priors and costs (spoof prior 0.05, target prior 0.9405, nontarget prior
// 0.0095, false-alarm cost 10, miss cost 1).
struct TdcfCostModel {
  TdcfRevision revision = TdcfRevision::k2021;
  double p_spoof = 0.05;
  double p_tar = 0.9405;
  double p_non = 0.0095;
  double c_miss = 1.0;       // ASV miss
  double c_fa = 10.0;        // ASV false alarm (nontarget)
  double c_miss_cm = 1.0;    // 2019 only
  double c_fa_cm = 10.0;     // 2019 only
  double c_fa_spoof = 10.0;  // 2021 only
  double p_miss_asv = 0.01;
  double p_fa_asv = 0.01;
  double p_miss_spoof_asv = 0.70;  // 2019 only
  double p_fa_spoof_asv = 0.30;    // 2021 only

  void Validate() const;
  // Weights of the countermeasure miss and false-alarm rates.
  double C1() const;
  double C2() const;
  friend bool operator==(const TdcfCostModel&, const TdcfCostModel&) = default;
};

// min over swept thresholds of (C1 * P_miss + C2 * P_fa) / min(C1, C2).
double ComputeMinTdcf(std::span<const ScoreRecord> records, const TdcfCostModel& cost);

// ---- score files ---------------------------------------------------------------

struct ScoreEntry {
  std::string id;
  double score = 0.0;
  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

// Shortest decimal form that parses back to the same double.
std::string FormatScore(double v);
std::string FormatScores(std::span<const ScoreEntry> scores);
std::vector<ScoreEntry> ParseScores(std::istream& in, const std::string& origin);
void WriteScores(const std::filesystem::path& path, std::span<const ScoreEntry> scores);
std::vector<ScoreEntry> ReadScores(const std::filesystem::path& path);

struct LabelSource {
  std::string id;
  Label label;
};
// Attaches labels by utterance id; an id missing from `labels` is an error
// that names it.
std::vector<ScoreRecord> JoinLabels(std::span<const ScoreEntry> scores, std::span<const LabelSource> labels);

// key=value report naming every cost-model constant.
std::string MetricReport(std::span<const ScoreRecord> records, const TdcfCostModel& cost);
std::string DetTable(std::span<const ScoreRecord> records);

}  // namespace ssladd
