// include/pbmsv/corpus.h

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

// Corpus manifests and the synthetic corpus generator.

#ifndef PBMSV_CORPUS_H_
#define PBMSV_CORPUS_H_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pbmsv/types.h"

namespace pbmsv {

/// One utterance of the corpus. `split` is one of ubm, dev, enroll, test.
struct UttInfo {
  std::string utterance_id;
  std::string speaker_id;
  std::string phrase_id;
  std::string split;
  std::string path;  // feature or audio file; may be empty
};

class CorpusManifest {
 public:
  CorpusManifest() = default;
  /// Rejects duplicate utterance ids, malformed ids and unknown splits.
  explicit CorpusManifest(std::vector<UttInfo> utts);

  const std::vector<UttInfo> &utterances() const { return utts_; }
  /// nullptr when absent.
  const UttInfo *Find(const std::string &utterance_id) const;
  const UttInfo &Get(const std::string &utterance_id) const;
  /// Utterances of one split, in manifest order.
  std::vector<UttInfo> Split(const std::string &split) const;
  bool HasSpeaker(const std::string &speaker_id) const { return speakers_.count(speaker_id) > 0; }
  bool HasPhrase(const std::string &phrase_id) const { return phrases_.count(phrase_id) > 0; }
  /// Sorted.
  std::vector<std::string> Speakers(const std::string &split = "") const;
  std::vector<std::string> Phrases(const std::string &split = "") const;

 private:
  std::vector<UttInfo> utts_;
  std::map<std::string, size_t> index_;
  std::set<std::string> speakers_;
  std::set<std::string> phrases_;
};

/// Text: "utterance speaker phrase split [path]" per line, '#' comments.
/// Relative paths are resolved against the manifest's directory.
CorpusManifest LoadManifest(const std::string &path);
void WriteManifest(const std::string &path, const CorpusManifest &manifest);

bool IsValidSplit(const std::string &split);

/// Desk-scale stand-in for a text-dependent corpus. Frames are drawn in
/// feature space. A phrase is a sequence of phone segments; each phone has
/// a mean placed by `phrase_separation`, and each segment of a phrase adds a
/// context offset of scale `context_variability` x `phrase_separation` (the
/// same phone sounds different in different phrases). Each speaker shifts
/// every phone by an offset scaled by `speaker_separation`, each session
/// adds a global channel offset, and every frame gets unit Gaussian noise.
struct SyntheticSpec {
  int num_phrases = 5;            // evaluation phrases
  int num_speakers = 20;          // evaluation speakers
  int num_dev_speakers = 20;
  int num_ubm_speakers = 30;
  int num_background_phrases = 10;
  int enroll_sessions = 3;
  int test_sessions = 4;
  int dev_sessions = 2;
  int ubm_sessions = 2;
  int frames_per_utterance = 150;
  int dim = 57;
  int num_phones = 12;
  int phones_per_phrase = 8;
  double phrase_separation = 3.0;
  double context_variability = 0.15;
  double speaker_separation = 0.35;
  double session_variability = 0.7;
  uint64_t seed = 1;

  void Validate() const;
};

struct SyntheticCorpus {
  CorpusManifest manifest;
  std::vector<FeatureMatrix> features;  // manifest order
};

/// Deterministic for a given spec.
SyntheticCorpus GenerateSyntheticCorpus(const SyntheticSpec &spec);

/// Writes one feature file per utterance under `dir` plus `dir`/manifest.
void WriteSyntheticCorpus(const std::string &dir, const SyntheticCorpus &corpus);

}  // namespace pbmsv

#endif  // PBMSV_CORPUS_H_
