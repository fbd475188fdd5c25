// include/pbmsv/eval.h

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

// Trial lists, score files and detection metrics.

#ifndef PBMSV_EVAL_H_
#define PBMSV_EVAL_H_

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pbmsv/corpus.h"

namespace pbmsv {

enum class TrialLabel { kTarget, kTargetWrong, kImposterCorrect, kImposterWrong };

/// "target", "target-wrong", "imposter-correct", "imposter-wrong".
std::string LabelName(TrialLabel l);
TrialLabel ParseLabel(const std::string &token);
/// The three non-target labels in report order.
const std::vector<TrialLabel> &NontargetLabels();

/// Label implied by the claimed and actual speaker/phrase.
TrialLabel LabelFor(const std::string &model_speaker, const std::string &model_phrase,
                    const std::string &utt_speaker, const std::string &utt_phrase);

/// Enrolled models are named "speaker:phrase".
std::string MakeModelId(const std::string &speaker, const std::string &phrase);
std::pair<std::string, std::string> SplitModelId(const std::string &model_id);

struct Trial {
  std::string model_id;
  std::string utterance_id;
  TrialLabel label = TrialLabel::kTarget;
};

using TrialList = std::vector<Trial>;

/// "model_id utterance_id label" per line. Every utterance must be in the
/// manifest, the model's speaker and phrase must be known, and the label
/// must agree with the ids.
TrialList ParseTrials(const std::string &text, const CorpusManifest &manifest,
                      const std::string &source = "trials");
TrialList LoadTrials(const std::string &path, const CorpusManifest &manifest);
void WriteTrials(const std::string &path, const TrialList &trials);

/// Every (enrolled model, test utterance) pair. Models are listed by
/// speaker then phrase; utterances in manifest order.
TrialList MakeAllTrials(const CorpusManifest &manifest);

struct ScoreEntry {
  std::string model_id;
  std::string utterance_id;
  double score = 0.0;
  std::string selected_phrase;  // empty when not applicable
};

class ScoreSet {
 public:
  explicit ScoreSet(std::string system_id = "") : system_id_(std::move(system_id)) {}

  /// Rejects duplicates and non-finite scores.
  void Add(ScoreEntry e);
  const ScoreEntry *Find(const std::string &model_id, const std::string &utterance_id) const;
  const ScoreEntry &Get(const Trial &t) const;
  const std::vector<ScoreEntry> &entries() const { return entries_; }
  const std::string &system_id() const { return system_id_; }
  size_t size() const { return entries_.size(); }

 private:
  std::string system_id_;
  std::vector<ScoreEntry> entries_;
  std::map<std::pair<std::string, std::string>, size_t> index_;
};

/// "model_id utterance_id score [selected_phrase]" per line, scores with 17
/// significant digits. A "# system <id>" header line carries the system id.
void WriteScores(const std::string &path, const ScoreSet &scores);
ScoreSet LoadScores(const std::string &path);

struct OperatingPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

/// Decision rule: accept when score >= threshold. Thresholds are +inf, the
/// midpoints between consecutive distinct pooled scores (descending) and
/// -inf.
std::vector<OperatingPoint> DetCurve(const std::vector<double> &targets,
                                     const std::vector<double> &nontargets);

/// Linear interpolation between the two operating points where
/// p_miss - p_fa changes sign.
double ComputeEer(const std::vector<double> &targets, const std::vector<double> &nontargets);

struct DcfParams {
  double c_miss = 10.0;
  double c_fa = 1.0;
  double p_target = 0.01;

  void Validate() const;
};

/// Unnormalized: min over thresholds of
/// c_miss p_miss p_target + c_fa p_fa (1 - p_target).
double ComputeMinDcf(const std::vector<double> &targets, const std::vector<double> &nontargets,
                     const DcfParams &p = DcfParams());

struct DetMetrics {
  double eer = 0.0;
  double min_dcf = 0.0;
  size_t num_targets = 0;
  size_t num_nontargets = 0;
  std::vector<OperatingPoint> points;
};

DetMetrics ComputeDetMetrics(const std::vector<double> &targets,
                             const std::vector<double> &nontargets,
                             const DcfParams &p = DcfParams());

/// Targets against each non-target type separately. Types with no trials
/// are omitted with a warning.
std::map<TrialLabel, DetMetrics> BreakdownByNontarget(const ScoreSet &scores,
                                                      const TrialList &trials,
                                                      const DcfParams &p = DcfParams());

/// Fraction of test utterances whose selected phrase is the true one. An
/// utterance seen in several trials counts once, with the selection of its
/// first trial in list order.
double PhraseIdAccuracy(const std::vector<std::pair<std::string, std::string>> &selected,
                        const std::map<std::string, std::string> &truth);
/// Same, reading selections from a score set over `trials`.
double PhraseIdAccuracy(const ScoreSet &scores, const TrialList &trials,
                        const CorpusManifest &manifest);

struct LlrDifference {
  size_t count = 0;
  size_t lower = 0;        // trials with baseline - pbm > 0
  double fraction = 0.0;   // lower / count
  double mean_difference = 0.0;
};

/// Per label, statistics of Y = baseline - pbm. Both sets must score every
/// trial.
std::map<TrialLabel, LlrDifference> LlrDifferenceReport(const ScoreSet &baseline,
                                                        const ScoreSet &pbm,
                                                        const TrialList &trials);

struct ReportRow {
  std::string system_id;
  TrialLabel nontarget = TrialLabel::kTargetWrong;
  double eer = 0.0;      // fraction
  double min_dcf = 0.0;
  size_t num_targets = 0;
  size_t num_nontargets = 0;
};

std::vector<ReportRow> MakeReport(const std::string &system_id,
                                  const std::map<TrialLabel, DetMetrics> &breakdown);
/// Tab-separated: system, nontarget, eer_percent, min_dcf_x100, targets, nontargets.
std::string FormatReportTsv(const std::vector<ReportRow> &rows);
std::vector<ReportRow> ParseReportTsv(const std::string &text, const std::string &source);
/// One line per system with "%EER/(MinDCF x 100)" per non-target type.
std::string FormatReportTable(const std::vector<ReportRow> &rows);

}  // namespace pbmsv

#endif  // PBMSV_EVAL_H_
