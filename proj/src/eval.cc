// src/eval.cc

// Copyright 2026  The pbmsv Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "pbmsv/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "pbmsv/binary-io.h"
#include "pbmsv/error.h"
#include "pbmsv/pbm.h"

namespace pbmsv {

std::string LabelName(TrialLabel l) {
  switch (l) {
    case TrialLabel::kTarget: return "target";
    case TrialLabel::kTargetWrong: return "target-wrong";
    case TrialLabel::kImposterCorrect: return "imposter-correct";
    case TrialLabel::kImposterWrong: return "imposter-wrong";
  }
  return "";
}

TrialLabel ParseLabel(const std::string &token) {
  for (TrialLabel l : {TrialLabel::kTarget, TrialLabel::kTargetWrong,
                       TrialLabel::kImposterCorrect, TrialLabel::kImposterWrong})
    if (token == LabelName(l)) return l;
  throw ValidationError("unknown trial label '" + token + "'");
}

const std::vector<TrialLabel> &NontargetLabels() {
  static const std::vector<TrialLabel> labels = {
      TrialLabel::kTargetWrong, TrialLabel::kImposterCorrect, TrialLabel::kImposterWrong};
  return labels;
}

TrialLabel LabelFor(const std::string &model_speaker, const std::string &model_phrase,
                    const std::string &utt_speaker, const std::string &utt_phrase) {
  bool same_spk = model_speaker == utt_speaker, same_phrase = model_phrase == utt_phrase;
  if (same_spk) return same_phrase ? TrialLabel::kTarget : TrialLabel::kTargetWrong;
  return same_phrase ? TrialLabel::kImposterCorrect : TrialLabel::kImposterWrong;
}

std::string MakeModelId(const std::string &speaker, const std::string &phrase) {
  return speaker + ":" + phrase;
}

std::pair<std::string, std::string> SplitModelId(const std::string &model_id) {
  size_t pos = model_id.find(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == model_id.size() ||
      model_id.find(':', pos + 1) != std::string::npos)
    throw ValidationError("malformed model id '" + model_id + "' (expected speaker:phrase)");
  return {model_id.substr(0, pos), model_id.substr(pos + 1)};
}

TrialList ParseTrials(const std::string &text, const CorpusManifest &manifest,
                      const std::string &source) {
  std::istringstream in(text);
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fail = [&](const std::string &msg) {
      return ValidationError(source + ":" + std::to_string(lineno) + ": " + msg);
    };
    std::istringstream ss(line);
    std::string model, utt, label, extra;
    if (!(ss >> model) || model[0] == '#') continue;
    if (!(ss >> utt >> label) || (ss >> extra))
      throw fail("expected 'model_id utterance_id label'");
    Trial t;
    t.model_id = model;
    t.utterance_id = utt;
    std::pair<std::string, std::string> ids;
    try {
      t.label = ParseLabel(label);
      ids = SplitModelId(model);
    } catch (const ValidationError &e) {
      throw fail(e.what());
    }
    const UttInfo *u = manifest.Find(utt);
    if (!u) throw fail("unknown utterance id " + utt);
    if (!manifest.HasSpeaker(ids.first)) throw fail("unknown speaker " + ids.first);
    if (!manifest.HasPhrase(ids.second)) throw fail("unknown phrase " + ids.second);
    TrialLabel expected = LabelFor(ids.first, ids.second, u->speaker_id, u->phrase_id);
    if (expected != t.label)
      throw fail("label " + label + " is inconsistent with the ids (expected " +
                 LabelName(expected) + ")");
    trials.push_back(std::move(t));
  }
  return trials;
}

TrialList LoadTrials(const std::string &path, const CorpusManifest &manifest) {
  return ParseTrials(ReadFile(path), manifest, path);
}

void WriteTrials(const std::string &path, const TrialList &trials) {
  std::string text;
  for (const Trial &t : trials)
    text += t.model_id + " " + t.utterance_id + " " + LabelName(t.label) + "\n";
  WriteFileAtomic(path, text);
}

TrialList MakeAllTrials(const CorpusManifest &manifest) {
  std::set<std::pair<std::string, std::string>> models;
  for (const UttInfo &u : manifest.Split("enroll")) models.emplace(u.speaker_id, u.phrase_id);
  std::vector<UttInfo> tests = manifest.Split("test");
  TrialList trials;
  trials.reserve(models.size() * tests.size());
  for (const auto &[spk, phrase] : models)
    for (const UttInfo &u : tests)
      trials.push_back({MakeModelId(spk, phrase), u.utterance_id,
                        LabelFor(spk, phrase, u.speaker_id, u.phrase_id)});
  return trials;
}

void ScoreSet::Add(ScoreEntry e) {
  if (!std::isfinite(e.score))
    throw NumericalError("non-finite score for " + e.model_id + " " + e.utterance_id);
  auto key = std::make_pair(e.model_id, e.utterance_id);
  if (!index_.emplace(key, entries_.size()).second)
    throw ValidationError("duplicate score for " + e.model_id + " " + e.utterance_id);
  entries_.push_back(std::move(e));
}

const ScoreEntry *ScoreSet::Find(const std::string &model_id,
                                 const std::string &utterance_id) const {
  auto it = index_.find({model_id, utterance_id});
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const ScoreEntry &ScoreSet::Get(const Trial &t) const {
  const ScoreEntry *e = Find(t.model_id, t.utterance_id);
  if (!e)
    throw ValidationError("trial " + t.model_id + " " + t.utterance_id + " is not scored" +
                          (system_id_.empty() ? "" : " by " + system_id_));
  return *e;
}

void WriteScores(const std::string &path, const ScoreSet &scores) {
  std::string text = "# system " + (scores.system_id().empty() ? "-" : scores.system_id()) + "\n";
  char buf[64];
  for (const ScoreEntry &e : scores.entries()) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.score);
    text += e.model_id + " " + e.utterance_id + " " + buf;
    if (!e.selected_phrase.empty()) text += " " + e.selected_phrase;
    text += "\n";
  }
  WriteFileAtomic(path, text);
}

ScoreSet LoadScores(const std::string &path) {
  std::istringstream in(ReadFile(path));
  std::string line;
  int lineno = 0;
  std::string system;
  std::vector<ScoreEntry> entries;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first[0] == '#') {
      std::string key, value;
      std::istringstream hs(line.substr(1));
      if ((hs >> key >> value) && key == "system" && value != "-") system = value;
      continue;
    }
    ScoreEntry e;
    e.model_id = first;
    std::string score_text, extra;
    if (!(ss >> e.utterance_id >> score_text) ||
        ((ss >> e.selected_phrase) && (ss >> extra)))
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": expected 'model_id utterance_id score [phrase]'");
    char *end = nullptr;
    e.score = std::strtod(score_text.c_str(), &end);
    if (end == score_text.c_str() || *end != '\0')
      throw ValidationError(path + ":" + std::to_string(lineno) + ": bad score '" + score_text + "'");
    entries.push_back(std::move(e));
  }
  ScoreSet set(system);
  for (auto &e : entries) set.Add(std::move(e));
  return set;
}

namespace {

void CheckScores(const std::vector<double> &targets, const std::vector<double> &nontargets) {
  Require(!targets.empty(), "metrics: no target scores");
  Require(!nontargets.empty(), "metrics: no non-target scores");
  for (double s : targets) Require(std::isfinite(s), "metrics: non-finite target score");
  for (double s : nontargets) Require(std::isfinite(s), "metrics: non-finite non-target score");
}

}  // namespace

std::vector<OperatingPoint> DetCurve(const std::vector<double> &targets,
                                     const std::vector<double> &nontargets) {
  CheckScores(targets, nontargets);
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(targets.size() + nontargets.size());
  for (double s : targets) pooled.emplace_back(s, true);
  for (double s : nontargets) pooled.emplace_back(s, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto &a, const auto &b) { return a.first > b.first; });
  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<OperatingPoint> points;
  points.push_back({inf, 1.0, 0.0});
  size_t acc_t = 0, acc_n = 0;
  for (size_t i = 0; i < pooled.size();) {
    const double s = pooled[i].first;
    while (i < pooled.size() && pooled[i].first == s) {
      (pooled[i].second ? acc_t : acc_n)++;
      ++i;
    }
    double threshold = i < pooled.size() ? 0.5 * (s + pooled[i].first) : -inf;
    points.push_back({threshold, static_cast<double>(targets.size() - acc_t) / nt,
                      static_cast<double>(acc_n) / nn});
  }
  return points;
}

namespace {

double EerFromPoints(const std::vector<OperatingPoint> &points) {
  for (size_t k = 1; k < points.size(); ++k) {
    double d_k = points[k].p_miss - points[k].p_fa;
    if (d_k > 0) continue;
    double d_p = points[k - 1].p_miss - points[k - 1].p_fa;
    double alpha = d_p / (d_p - d_k);
    return points[k - 1].p_fa + alpha * (points[k].p_fa - points[k - 1].p_fa);
  }
  return 1.0;  // unreachable: the last point has p_miss = 0, p_fa = 1
}

double MinDcfFromPoints(const std::vector<OperatingPoint> &points, const DcfParams &p) {
  double best = std::numeric_limits<double>::infinity();
  for (const OperatingPoint &op : points)
    best = std::min(best, p.c_miss * op.p_miss * p.p_target + p.c_fa * op.p_fa * (1.0 - p.p_target));
  return best;
}

}  // namespace

double ComputeEer(const std::vector<double> &targets, const std::vector<double> &nontargets) {
  return EerFromPoints(DetCurve(targets, nontargets));
}

void DcfParams::Validate() const {
  Require(c_miss > 0 && c_fa > 0, "dcf: costs must be positive");
  Require(p_target > 0 && p_target <= 1, "dcf: p_target must be in (0, 1]");
}

double ComputeMinDcf(const std::vector<double> &targets, const std::vector<double> &nontargets,
                     const DcfParams &p) {
  p.Validate();
  return MinDcfFromPoints(DetCurve(targets, nontargets), p);
}

DetMetrics ComputeDetMetrics(const std::vector<double> &targets,
                             const std::vector<double> &nontargets, const DcfParams &p) {
  p.Validate();
  DetMetrics m;
  m.points = DetCurve(targets, nontargets);
  m.eer = EerFromPoints(m.points);
  m.min_dcf = MinDcfFromPoints(m.points, p);
  m.num_targets = targets.size();
  m.num_nontargets = nontargets.size();
  return m;
}

std::map<TrialLabel, DetMetrics> BreakdownByNontarget(const ScoreSet &scores,
                                                      const TrialList &trials,
                                                      const DcfParams &p) {
  std::map<TrialLabel, std::vector<double>> pools;
  for (const Trial &t : trials) pools[t.label].push_back(scores.Get(t).score);
  Require(!pools[TrialLabel::kTarget].empty(), "breakdown: no target trials");
  std::map<TrialLabel, DetMetrics> out;
  for (TrialLabel l : NontargetLabels()) {
    if (pools[l].empty()) {
      Warn("breakdown: no " + LabelName(l) + " trials; metrics omitted");
      continue;
    }
    out.emplace(l, ComputeDetMetrics(pools[TrialLabel::kTarget], pools[l], p));
  }
  return out;
}

double PhraseIdAccuracy(const std::vector<std::pair<std::string, std::string>> &selected,
                        const std::map<std::string, std::string> &truth) {
  std::set<std::string> seen;
  size_t total = 0, correct = 0;
  for (const auto &[utt, phrase] : selected) {
    if (!seen.insert(utt).second) continue;
    auto it = truth.find(utt);
    if (it == truth.end()) throw ValidationError("phrase accuracy: no truth for " + utt);
    ++total;
    if (it->second == phrase) ++correct;
  }
  Require(total > 0, "phrase accuracy: no selections");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double PhraseIdAccuracy(const ScoreSet &scores, const TrialList &trials,
                        const CorpusManifest &manifest) {
  std::vector<std::pair<std::string, std::string>> selected;
  std::map<std::string, std::string> truth;
  for (const Trial &t : trials) {
    const ScoreEntry &e = scores.Get(t);
    Require(!e.selected_phrase.empty(),
            "phrase accuracy: score set has no phrase selections");
    selected.emplace_back(t.utterance_id, e.selected_phrase);
    truth[t.utterance_id] = manifest.Get(t.utterance_id).phrase_id;
  }
  return PhraseIdAccuracy(selected, truth);
}

std::map<TrialLabel, LlrDifference> LlrDifferenceReport(const ScoreSet &baseline,
                                                        const ScoreSet &pbm,
                                                        const TrialList &trials) {
  if (baseline.size() != pbm.size())
    throw ValidationError("llr difference: score sets cover different trials");
  std::map<TrialLabel, LlrDifference> out;
  for (const Trial &t : trials) {
    double y = baseline.Get(t).score - pbm.Get(t).score;
    LlrDifference &d = out[t.label];
    ++d.count;
    if (y > 0) ++d.lower;
    d.mean_difference += y;
  }
  for (auto &[label, d] : out) {
    d.fraction = static_cast<double>(d.lower) / static_cast<double>(d.count);
    d.mean_difference /= static_cast<double>(d.count);
  }
  return out;
}

std::vector<ReportRow> MakeReport(const std::string &system_id,
                                  const std::map<TrialLabel, DetMetrics> &breakdown) {
  std::vector<ReportRow> rows;
  for (TrialLabel l : NontargetLabels()) {
    auto it = breakdown.find(l);
    if (it == breakdown.end()) continue;
    rows.push_back({system_id, l, it->second.eer, it->second.min_dcf, it->second.num_targets,
                    it->second.num_nontargets});
  }
  return rows;
}

std::string FormatReportTsv(const std::vector<ReportRow> &rows) {
  std::string text = "system\tnontarget\teer_percent\tmin_dcf_x100\ttargets\tnontargets\n";
  char buf[256];
  for (const ReportRow &r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%.10g\t%.10g\t%zu\t%zu\n", r.system_id.c_str(),
                  LabelName(r.nontarget).c_str(), 100.0 * r.eer, 100.0 * r.min_dcf,
                  r.num_targets, r.num_nontargets);
    text += buf;
  }
  return text;
}

std::vector<ReportRow> ParseReportTsv(const std::string &text, const std::string &source) {
  std::istringstream in(text);
  std::string line;
  std::vector<ReportRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.rfind("system\t", 0) == 0 || line[0] == '#') continue;
    std::istringstream ss(line);
    ReportRow r;
    std::string label;
    double eer_pct, dcf_x100;
    if (!(ss >> r.system_id >> label >> eer_pct >> dcf_x100 >> r.num_targets >> r.num_nontargets))
      throw ValidationError(source + ":" + std::to_string(lineno) + ": malformed report row");
    r.nontarget = ParseLabel(label);
    r.eer = eer_pct / 100.0;
    r.min_dcf = dcf_x100 / 100.0;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string FormatReportTable(const std::vector<ReportRow> &rows) {
  std::vector<std::string> systems;
  std::map<std::pair<std::string, TrialLabel>, const ReportRow *> cells;
  for (const ReportRow &r : rows) {
    if (std::find(systems.begin(), systems.end(), r.system_id) == systems.end())
      systems.push_back(r.system_id);
    cells[{r.system_id, r.nontarget}] = &r;
  }
  size_t width = 6;
  for (const auto &s : systems) width = std::max(width, s.size());
  char buf[128];
  std::string text = "Non-target type [%EER/(MinDCF x 100)]\n";
  std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(width), "system");
  text += buf;
  for (TrialLabel l : NontargetLabels()) {
    std::snprintf(buf, sizeof(buf), "  %18s", LabelName(l).c_str());
    text += buf;
  }
  text += "\n";
  for (const auto &s : systems) {
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(width), s.c_str());
    text += buf;
    for (TrialLabel l : NontargetLabels()) {
      auto it = cells.find({s, l});
      if (it == cells.end()) {
        std::snprintf(buf, sizeof(buf), "  %18s", "-");
      } else {
        char cell[64];
        std::snprintf(cell, sizeof(cell), "%.2f/%.3f", 100.0 * it->second->eer,
                      100.0 * it->second->min_dcf);
        std::snprintf(buf, sizeof(buf), "  %18s", cell);
      }
      text += buf;
    }
    text += "\n";
  }
  return text;
}

}  // namespace pbmsv
