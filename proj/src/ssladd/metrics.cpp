// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0

#include "ssladd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace ssladd {

namespace {

struct ClassCounts {
  std::size_t bona = 0;
  std::size_t spoof = 0;
};

ClassCounts CountAndCheck(std::span<const ScoreRecord> records) {
  ClassCounts c;
  for (const auto& r : records) {
    if (!std::isfinite(r.score))
      Fail(ErrorCategory::kNumeric, "non-finite score for utterance '" + r.id + "'");
    (r.label == Label::kBonafide ? c.bona : c.spoof)++;
  }
  if (c.bona == 0 || c.spoof == 0)
    Fail(ErrorCategory::kInvalidArgument, "need both classes: got " + std::to_string(c.bona) + " bona fide and " +
                                              std::to_string(c.spoof) + " spoof scores");
  return c;
}

}  // namespace

std::vector<OperatingPoint> SweepThresholds(std::span<const ScoreRecord> records) {
  const ClassCounts n = CountAndCheck(records);
  std::vector<std::pair<double, Label>> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.score, r.label);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<OperatingPoint> pts;
  std::size_t bona_below = 0, spoof_below = 0;
  const double nb = static_cast<double>(n.bona), ns = static_cast<double>(n.spoof);
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i].first;
    pts.push_back({t, bona_below / nb, static_cast<double>(n.spoof - spoof_below) / ns});
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second == Label::kBonafide ? bona_below : spoof_below)++;
      ++i;
    }
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 1.0, 0.0});
  return pts;
}

std::vector<DetPoint> DetPoints(std::span<const ScoreRecord> records) {
  std::vector<DetPoint> out;
  for (const auto& p : SweepThresholds(records)) out.push_back({p.p_fa, p.p_miss});
  return out;
}

EerResult ComputeEer(std::span<const ScoreRecord> records) {
  const std::vector<OperatingPoint> pts = SweepThresholds(records);
  // d = P_miss - P_fa rises from -1 at the lowest threshold to +1 at +inf.
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const double d = pts[j].p_miss - pts[j].p_fa;
    if (d < 0.0) continue;
    if (d == 0.0 || j == 0) return {pts[j].p_miss, pts[j].threshold};
    const double dp = pts[j - 1].p_miss - pts[j - 1].p_fa;
    const double alpha = dp / (dp - d);
    return {pts[j - 1].p_miss + alpha * (pts[j].p_miss - pts[j - 1].p_miss), pts[j].threshold};
  }
  Fail(ErrorCategory::kNumeric, "EER crossing not found");
}

std::string_view TdcfRevisionName(TdcfRevision r) { return r == TdcfRevision::k2019 ? "2019" : "2021"; }

TdcfRevision TdcfRevisionFromName(std::string_view name) {
  if (name == "2019") return TdcfRevision::k2019;
  if (name == "2021") return TdcfRevision::k2021;
  Fail(ErrorCategory::kInvalidArgument, "unknown t-DCF revision '" + std::string(name) + "' (expected 2019 or 2021)");
}

void TdcfCostModel::Validate() const {
  for (double p : {p_spoof, p_tar, p_non, p_miss_asv, p_fa_asv, p_miss_spoof_asv, p_fa_spoof_asv})
    if (!(p >= 0.0 && p <= 1.0)) Fail(ErrorCategory::kInvalidArgument, "t-DCF probabilities must lie in [0, 1]");
  for (double c : {c_miss, c_fa, c_miss_cm, c_fa_cm, c_fa_spoof})
    if (!(c > 0.0) || !std::isfinite(c)) Fail(ErrorCategory::kInvalidArgument, "t-DCF costs must be positive");
  if (!(C1() > 0.0) || !(C2() > 0.0))
    Fail(ErrorCategory::kInvalidArgument, "t-DCF cost model is not normalizable: C1=" + std::to_string(C1()) +
                                              ", C2=" + std::to_string(C2()) + " (both must be positive)");
}

double TdcfCostModel::C1() const {
  if (revision == TdcfRevision::k2019) return p_tar * (c_miss_cm - c_miss * p_miss_asv) - p_non * c_fa * p_fa_asv;
  return p_tar * c_miss - (p_tar * c_miss * p_miss_asv + p_non * c_fa * p_fa_asv);
}

double TdcfCostModel::C2() const {
  if (revision == TdcfRevision::k2019) return c_fa_cm * p_spoof * (1.0 - p_miss_spoof_asv);
  return c_fa_spoof * p_spoof * p_fa_spoof_asv;
}

double ComputeMinTdcf(std::span<const ScoreRecord> records, const TdcfCostModel& cost) {
  cost.Validate();
  const double c1 = cost.C1(), c2 = cost.C2(), norm = std::min(c1, c2);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : SweepThresholds(records)) best = std::min(best, (c1 * p.p_miss + c2 * p.p_fa) / norm);
  return best;
}

// ---- score files ---------------------------------------------------------------

std::string FormatScore(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string FormatScores(std::span<const ScoreEntry> scores) {
  std::string out;
  for (const auto& s : scores) {
    out += s.id;
    out += ' ';
    out += FormatScore(s.score);
    out += '\n';
  }
  return out;
}

std::vector<ScoreEntry> ParseScores(std::istream& in, const std::string& origin) {
  std::vector<ScoreEntry> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || line.find(' ', sp + 1) != std::string::npos)
      Fail(ErrorCategory::kFormat, where + "expected '<utt_id> <score>'");
    ScoreEntry e{line.substr(0, sp), 0.0};
    const char* first = line.data() + sp + 1;
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, e.score);
    if (ec != std::errc() || ptr != last || !std::isfinite(e.score))
      Fail(ErrorCategory::kFormat, where + "invalid score '" + std::string(first, last) + "'");
    if (!seen.insert(e.id).second) Fail(ErrorCategory::kFormat, where + "duplicate utterance id '" + e.id + "'");
    out.push_back(std::move(e));
  }
  return out;
}

void WriteScores(const std::filesystem::path& path, std::span<const ScoreEntry> scores) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Fail(ErrorCategory::kIo, "cannot write score file '" + path.string() + "'");
  out << FormatScores(scores);
  if (!out) Fail(ErrorCategory::kIo, "error writing score file '" + path.string() + "'");
}

std::vector<ScoreEntry> ReadScores(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorCategory::kIo, "cannot open score file '" + path.string() + "'");
  return ParseScores(in, path.string());
}

std::vector<ScoreRecord> JoinLabels(std::span<const ScoreEntry> scores, std::span<const LabelSource> labels) {
  std::map<std::string, Label, std::less<>> by_id;
  for (const auto& l : labels) by_id.emplace(l.id, l.label);
  std::vector<ScoreRecord> out;
  out.reserve(scores.size());
  for (const auto& s : scores) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) Fail(ErrorCategory::kInvalidArgument, "no label for utterance '" + s.id + "'");
    out.push_back({s.id, s.score, it->second});
  }
  return out;
}

std::string MetricReport(std::span<const ScoreRecord> records, const TdcfCostModel& cost) {
  const ClassCounts n = CountAndCheck(records);
  const EerResult eer = ComputeEer(records);
  const double tdcf = ComputeMinTdcf(records, cost);
  std::ostringstream o;
  o << "num_bonafide=" << n.bona << '\n'
    << "num_spoof=" << n.spoof << '\n'
    << "eer=" << FormatScore(eer.eer) << '\n'
    << "eer_threshold=" << FormatScore(eer.threshold) << '\n'
    << "min_tdcf=" << FormatScore(tdcf) << '\n'
    << "tdcf.revision=" << TdcfRevisionName(cost.revision) << '\n'
    << "tdcf.p_spoof=" << FormatScore(cost.p_spoof) << '\n'
    << "tdcf.p_tar=" << FormatScore(cost.p_tar) << '\n'
    << "tdcf.p_non=" << FormatScore(cost.p_non) << '\n'
    << "tdcf.c_miss=" << FormatScore(cost.c_miss) << '\n'
    << "tdcf.c_fa=" << FormatScore(cost.c_fa) << '\n';
  if (cost.revision == TdcfRevision::k2019) {
    o << "tdcf.c_miss_cm=" << FormatScore(cost.c_miss_cm) << '\n'
      << "tdcf.c_fa_cm=" << FormatScore(cost.c_fa_cm) << '\n';
  } else {
    o << "tdcf.c_fa_spoof=" << FormatScore(cost.c_fa_spoof) << '\n';
  }
  o << "tdcf.p_miss_asv=" << FormatScore(cost.p_miss_asv) << '\n'
    << "tdcf.p_fa_asv=" << FormatScore(cost.p_fa_asv) << '\n';
  if (cost.revision == TdcfRevision::k2019)
    o << "tdcf.p_miss_spoof_asv=" << FormatScore(cost.p_miss_spoof_asv) << '\n';
  else
    o << "tdcf.p_fa_spoof_asv=" << FormatScore(cost.p_fa_spoof_asv) << '\n';
  o << "tdcf.C1=" << FormatScore(cost.C1()) << '\n' << "tdcf.C2=" << FormatScore(cost.C2()) << '\n';
  return o.str();
}

std::string DetTable(std::span<const ScoreRecord> records) {
  std::string out = "threshold\tp_fa\tp_miss\n";
  for (const auto& p : SweepThresholds(records)) {
    out += std::isinf(p.threshold) ? std::string("inf") : FormatScore(p.threshold);
    out += '\t' + FormatScore(p.p_fa) + '\t' + FormatScore(p.p_miss) + '\n';
  }
  return out;
}

}  // namespace ssladd
