// include/pbmsv/pbm.h

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

// Pass-phrase dependent background models (PBMs).
//
// A PBM is the text-independent background model MAP-adapted on all the
// utterances of one pass-phrase. Targets are enrolled from the PBM of their
// phrase; at test time the PBM with the highest likelihood for the test
// utterance is selected and used as the alternative hypothesis in the LLR,
// whatever phrase the claimant enrolled on. Works for both the GMM and the
// HMM families.

#ifndef PBMSV_PBM_H_
#define PBMSV_PBM_H_

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pbmsv/diag-gmm.h"
#include "pbmsv/hmm-ubm.h"

namespace pbmsv {

using AcousticModel = std::variant<DiagGmm, HmmModel>;

enum class ModelFamily { kGmm, kHmm };

ModelFamily FamilyOf(const AcousticModel &m);
std::string FamilyName(ModelFamily f);
ModelFamily ParseFamily(const std::string &name);

/// Length-normalized utterance log likelihood: mean frame log likelihood for
/// a GMM, Viterbi score / L for an HMM.
double UtteranceScore(const AcousticModel &m, const FeatureMatrix &x);

/// AvgLlr or HmmLlr depending on the family; both models must share it.
double ModelLlr(const AcousticModel &target, const AcousticModel &background,
                const FeatureMatrix &x);

/// What scoring needs from one model on one utterance: per-frame log
/// likelihoods (GMM only) and the length-normalized score.
struct UttEval {
  Vector frame_loglikes;
  double normalized = 0.0;
};

UttEval EvaluateModel(const AcousticModel &m, const FeatureMatrix &x);
/// Equal to ModelLlr(target, background, x) for the evaluations of x.
double LlrFromEvals(const UttEval &target, const UttEval &background);

std::string ModelHash(const AcousticModel &m);
void SaveModel(const std::string &path, const AcousticModel &m);
/// Detects the family from the file's magic.
AcousticModel LoadModel(const std::string &path);

struct AdaptConfig {
  double relevance_factor = 10.0;
  int iterations = 3;
  // HMM PBMs adapt transitions as well as means; GMM PBMs and every target
  // enrollment adapt means only.
  bool hmm_pbm_update_transitions = true;

  void Validate() const;
};

/// MAP-adapts `background` on `data` for use as a PBM.
AcousticModel AdaptBackground(const AcousticModel &background, const UtteranceRefs &data,
                              const AdaptConfig &cfg);
/// MAP-adapts `background` on enrollment data (means only).
AcousticModel AdaptTarget(const AcousticModel &background, const UtteranceRefs &data,
                          const AdaptConfig &cfg);

enum class PbmFlavor { kSI, kSD };
std::string FlavorName(PbmFlavor f);
PbmFlavor ParseFlavor(const std::string &name);

/// Immutable set of PBMs sharing one root background model. Copies share
/// the underlying models.
class PbmSet {
 public:
  PbmSet(AcousticModel root, std::map<std::string, AcousticModel> entries,
         PbmFlavor flavor, std::optional<std::string> owner = std::nullopt);

  const AcousticModel &root() const { return data_->root; }
  const std::map<std::string, AcousticModel> &entries() const { return data_->entries; }
  PbmFlavor flavor() const { return data_->flavor; }
  const std::optional<std::string> &owner() const { return data_->owner; }
  ModelFamily family() const { return FamilyOf(data_->root); }
  int size() const { return static_cast<int>(data_->entries.size()); }

  bool Contains(const std::string &phrase_id) const;
  const AcousticModel &Entry(const std::string &phrase_id) const;
  std::vector<std::string> PhraseIds() const;
  const std::string &RootHash() const { return data_->root_hash; }
  /// Hash over flavor, owner, root hash and every (phrase, model hash).
  const std::string &Hash() const { return data_->hash; }

 private:
  struct Data {
    AcousticModel root;
    std::map<std::string, AcousticModel> entries;
    PbmFlavor flavor;
    std::optional<std::string> owner;
    std::string root_hash;
    std::string hash;
  };
  std::shared_ptr<const Data> data_;
};

/// Utterances grouped by phrase id. Group order within a phrase is the
/// pooling order and is preserved.
using PhraseGroups = std::map<std::string, UtteranceRefs>;

/// One PBM per phrase from development (non-target) speakers.
PbmSet BuildSiPbms(const AcousticModel &ubm, const PhraseGroups &dev,
                   const AdaptConfig &cfg);

/// Target-specific PBMs: each phrase pools the development data with the
/// target's own training data for that phrase (development first). Every
/// target phrase must exist in `dev`.
PbmSet BuildSdPbms(const AcousticModel &ubm, const PhraseGroups &dev,
                   const PhraseGroups &target_training, const std::string &owner,
                   const AdaptConfig &cfg);

struct SpeakerModel {
  std::string speaker_id;
  std::string phrase_id;
  AcousticModel model;
  // Background the model was adapted from (PBM set hash or UBM hash) and the
  // entry used. Recorded only; never used as the test-time background.
  std::string source_hash;
  std::string source_phrase;
};

/// Enrollment: MAP-adapts the PBM of `phrase_id` on the training data.
SpeakerModel EnrollTarget(const PbmSet &pbms, const std::string &phrase_id,
                          const UtteranceRefs &training, const AdaptConfig &cfg,
                          const std::string &speaker_id = "");

/// Conventional enrollment from the text-independent UBM.
SpeakerModel EnrollBaseline(const AcousticModel &ubm, const std::string &phrase_id,
                            const UtteranceRefs &training, const AdaptConfig &cfg,
                            const std::string &speaker_id = "");

struct PbmSelection {
  std::string phrase_id;
  double score = 0.0;                  // winning length-normalized log likelihood
  std::map<std::string, double> all;   // every entry's score
};

/// Maximum-likelihood PBM for `y`; ties go to the lowest phrase id.
PbmSelection SelectPbm(const PbmSet &pbms, const FeatureMatrix &y);
/// Same from per-entry evaluations keyed by phrase id.
PbmSelection SelectPbm(const std::map<std::string, UttEval> &evals);

struct TrialScore {
  double llr = 0.0;
  std::string selected_phrase;
};

/// LLR of `y` between the claimant and the PBM selected for `y`.
TrialScore ScoreTrial(const SpeakerModel &claimant, const PbmSet &pbms,
                      const FeatureMatrix &y);

/// Conventional LLR against the text-independent background.
double ScoreTrialBaseline(const SpeakerModel &claimant, const AcousticModel &ubm,
                          const FeatureMatrix &y);

// On disk: directory with "manifest" (flavor, owner, family, root hash, one
// "phrase <id> <file> <hash>" line per entry) and one model file per phrase.
void SavePbmSet(const std::string &dir, const PbmSet &pbms);
/// Fails if the manifest's root hash differs from `ubm`'s or a model file's
/// hash differs from the manifest.
PbmSet LoadPbmSet(const std::string &dir, const AcousticModel &ubm);

/// Disk cache for speaker-dependent PBM entries keyed by (owner, phrase).
/// Each entry is stored with a key derived from the root model, adaptation
/// settings and pooled utterance ids; stale entries are rebuilt. Writes are
/// atomic (temporary file then rename).
class SdPbmCache {
 public:
  SdPbmCache(std::string dir, AcousticModel ubm, AdaptConfig cfg);

  AcousticModel GetOrBuild(const std::string &owner, const std::string &phrase_id,
                           const UtteranceRefs &pooled);
  /// Full SD set for one target, going through the cache.
  PbmSet BuildSet(const PhraseGroups &dev, const PhraseGroups &target_training,
                  const std::string &owner);

  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::string dir_;
  AcousticModel ubm_;
  AdaptConfig cfg_;
  std::string ubm_hash_;
  int hits_ = 0;
  int misses_ = 0;
};

/// Ids used as file names must be non-empty and free of whitespace, '/',
/// ':' and control characters.
void ValidateId(const std::string &id, const std::string &what);

}  // namespace pbmsv

#endif  // PBMSV_PBM_H_
