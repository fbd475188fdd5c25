// include/pbmsv/pipeline.h

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

// End-to-end experiment flow: configuration, corpus loading, model
// training, PBM construction, enrollment, scoring and reporting. The
// command-line tool is a thin wrapper over these functions.

#ifndef PBMSV_PIPELINE_H_
#define PBMSV_PIPELINE_H_

#include <map>
#include <string>
#include <vector>

#include "pbmsv/corpus.h"
#include "pbmsv/eval.h"
#include "pbmsv/features.h"
#include "pbmsv/hmm-ubm.h"
#include "pbmsv/pbm.h"
#include "pbmsv/plda.h"

namespace pbmsv {

enum class SystemKind { kBaseline, kSI, kSD };

struct PipelineConfig {
  FeatureConfig features;
  ModelFamily family = ModelFamily::kGmm;
  GmmTrainConfig gmm;
  HmmTrainConfig hmm;
  AdaptConfig adapt;
  // PBM systems scored next to the baseline; empty means baseline only.
  std::vector<SystemKind> pbm_systems = {SystemKind::kSI};
  bool ivector_enabled = false;
  TvTrainConfig tv;
  int sph_iterations = 2;
  // Ranks of 0 mean "equal to the i-vector dimension".
  PldaTrainConfig plda;
  DcfParams dcf;
  std::string manifest;
  std::string trials;  // empty: every enrolled model against every test utterance
  std::string workdir;

  PipelineConfig();

  /// Applies one "key=value" setting; unknown keys are errors.
  void Set(const std::string &key, const std::string &value);
  void SetAssignment(const std::string &assignment);
  /// Checks internal consistency (e.g. i-vectors need the GMM family).
  void Validate() const;
  /// Canonical key=value text; reloading it gives the same configuration.
  std::string ToText() const;
  /// Options relevant to the stage named by the key prefix list.
  std::string SectionText(const std::vector<std::string> &prefixes) const;
};

/// Reads a key=value file ('#' comments, blank lines ignored).
PipelineConfig LoadPipelineConfig(const std::string &path);

std::string SystemKindName(SystemKind k);  // "baseline", "SI", "SD"
SystemKind ParseSystemKind(const std::string &name);

/// Manifest plus the features of every utterance, in manifest order.
class Corpus {
 public:
  Corpus() = default;
  Corpus(CorpusManifest manifest, std::vector<FeatureMatrix> features);

  /// Audio entries (".wav") go through the front end; anything else is read
  /// as a feature file. Speaker/phrase/utterance ids come from the manifest.
  static Corpus Load(const CorpusManifest &manifest, const FeatureConfig &cfg);

  const CorpusManifest &manifest() const { return manifest_; }
  const FeatureMatrix &Get(const std::string &utterance_id) const;
  UtteranceRefs Refs(const std::string &split) const;
  /// Utterances of `split` grouped by phrase, optionally for one speaker.
  PhraseGroups GroupByPhrase(const std::string &split, const std::string &speaker = "") const;
  /// Content hash over ids and frame data.
  const std::string &Hash() const { return hash_; }

 private:
  CorpusManifest manifest_;
  std::vector<FeatureMatrix> features_;
  std::map<std::string, size_t> index_;
  std::string hash_;
};

/// GMM-UBM or HMM-UBM on the "ubm" split.
AcousticModel TrainBackgroundModel(const PipelineConfig &cfg, const Corpus &corpus);

/// T space, Sph and PLDA from UBM-aligned statistics of the "ubm" and "dev"
/// splits. PLDA classes are (speaker, phrase) pairs.
IvectorBackend TrainIvectorBackend(const PipelineConfig &cfg, const Corpus &corpus,
                                   const DiagGmm &ubm);

/// PBMs from the "dev" split.
PbmSet BuildSiSet(const PipelineConfig &cfg, const Corpus &corpus, const AcousticModel &ubm);
/// One SD set per enrolled speaker (dev data plus the speaker's enrollment
/// data). With a non-empty `cache_dir` entries go through an SdPbmCache.
std::map<std::string, PbmSet> BuildSdSets(const PipelineConfig &cfg, const Corpus &corpus,
                                          const AcousticModel &ubm,
                                          const std::string &cache_dir = "");

/// Background models of one system: nothing for the baseline, one SI set,
/// or SD sets keyed by speaker.
struct Backgrounds {
  SystemKind kind = SystemKind::kBaseline;
  std::optional<PbmSet> si;
  std::map<std::string, PbmSet> sd;

  /// The PBM set a claimant of `speaker` is scored against, or null.
  const PbmSet *For(const std::string &speaker) const;
};

/// Speaker models keyed by "speaker:phrase" from the "enroll" split.
std::map<std::string, SpeakerModel> EnrollAcoustic(const PipelineConfig &cfg,
                                                   const Corpus &corpus,
                                                   const AcousticModel &ubm,
                                                   const Backgrounds &bg);
/// Normalized average i-vectors keyed by "speaker:phrase".
std::map<std::string, IVector> EnrollIvectors(const Corpus &corpus, const IvectorBackend &backend,
                                              const Backgrounds &bg);

/// Scores every trial; results are bit-identical to ScoreTrial /
/// ScoreTrialBaseline.
ScoreSet ScoreAcoustic(const std::string &system_id, const Corpus &corpus,
                       const TrialList &trials, const AcousticModel &ubm,
                       const Backgrounds &bg, const std::map<std::string, SpeakerModel> &models);
/// Same for the i-vector path (IvectorTrialScore).
ScoreSet ScoreIvector(const std::string &system_id, const Corpus &corpus,
                      const TrialList &trials, const IvectorBackend &backend,
                      const Backgrounds &bg, const std::map<std::string, IVector> &models);

std::string SystemId(ModelFamily family, bool ivector, SystemKind kind);

struct PipelineResult {
  std::string ubm_hash;
  std::map<std::string, std::string> pbm_hashes;  // system id -> set hash
  std::vector<std::string> systems;               // in scoring order
  std::map<std::string, ScoreSet> scores;
  std::vector<ReportRow> report;
  std::map<std::string, double> phrase_accuracy;  // PBM systems only
  std::map<std::string, std::map<TrialLabel, LlrDifference>> llr_difference;  // vs baseline
};

/// Runs every stage into cfg.workdir (which it owns): resolved config,
/// stage metadata with content hashes, models, trials, one score file per
/// system, report.tsv, report.txt and comparison.txt.
PipelineResult RunPipeline(const PipelineConfig &cfg, bool verbose = false);

/// Side-by-side %EER/(MinDCF x 100) per non-target type with deltas, plus
/// the share of trials whose score is lower under `b` than under `a`.
std::string CompareSystems(const ScoreSet &a, const ScoreSet &b, const TrialList &trials,
                           const DcfParams &dcf = DcfParams());

// Persistence of stage outputs used by the command-line tool. Backgrounds
// live under `dir`/SI or `dir`/SD/<speaker>; speaker models under
// `dir`/<speaker>/<phrase>.mdl with a "models" index recording the hash of
// the background each one was adapted from.
void SaveBackgrounds(const std::string &dir, const Backgrounds &bg);
Backgrounds LoadBackgrounds(const std::string &dir, SystemKind kind, const AcousticModel &ubm);
void SaveSpeakerModels(const std::string &dir, const std::map<std::string, SpeakerModel> &models);
/// Fails if a model was adapted from a background other than the one `bg`
/// (or `ubm` for the baseline) provides.
std::map<std::string, SpeakerModel> LoadSpeakerModels(const std::string &dir,
                                                      const AcousticModel &ubm,
                                                      const Backgrounds &bg);
void SaveIvectorBackend(const std::string &dir, const IvectorBackend &backend);
IvectorBackend LoadIvectorBackend(const std::string &dir, const DiagGmm &ubm);

/// Stage metadata: "key value" lines; `input` hashes the stage inputs.
void WriteStageMeta(const std::string &path, const std::map<std::string, std::string> &kv);
std::map<std::string, std::string> ReadStageMeta(const std::string &path);

}  // namespace pbmsv

#endif  // PBMSV_PIPELINE_H_
