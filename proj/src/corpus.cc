// src/corpus.cc

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

#include "pbmsv/corpus.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "pbmsv/binary-io.h"
#include "pbmsv/error.h"
#include "pbmsv/features.h"
#include "pbmsv/pbm.h"

namespace pbmsv {

namespace fs = std::filesystem;

bool IsValidSplit(const std::string &split) {
  return split == "ubm" || split == "dev" || split == "enroll" || split == "test";
}

CorpusManifest::CorpusManifest(std::vector<UttInfo> utts) : utts_(std::move(utts)) {
  for (size_t i = 0; i < utts_.size(); ++i) {
    const UttInfo &u = utts_[i];
    ValidateId(u.utterance_id, "utterance id");
    ValidateId(u.speaker_id, "speaker id");
    ValidateId(u.phrase_id, "phrase id");
    if (!IsValidSplit(u.split))
      throw ValidationError("manifest: unknown split '" + u.split + "' for " + u.utterance_id);
    if (!index_.emplace(u.utterance_id, i).second)
      throw ValidationError("manifest: duplicate utterance id " + u.utterance_id);
    speakers_.insert(u.speaker_id);
    phrases_.insert(u.phrase_id);
  }
}

const UttInfo *CorpusManifest::Find(const std::string &utterance_id) const {
  auto it = index_.find(utterance_id);
  return it == index_.end() ? nullptr : &utts_[it->second];
}

const UttInfo &CorpusManifest::Get(const std::string &utterance_id) const {
  const UttInfo *u = Find(utterance_id);
  if (!u) throw ValidationError("unknown utterance id " + utterance_id);
  return *u;
}

std::vector<UttInfo> CorpusManifest::Split(const std::string &split) const {
  std::vector<UttInfo> out;
  for (const UttInfo &u : utts_)
    if (u.split == split) out.push_back(u);
  return out;
}

std::vector<std::string> CorpusManifest::Speakers(const std::string &split) const {
  std::set<std::string> s;
  for (const UttInfo &u : utts_)
    if (split.empty() || u.split == split) s.insert(u.speaker_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> CorpusManifest::Phrases(const std::string &split) const {
  std::set<std::string> s;
  for (const UttInfo &u : utts_)
    if (split.empty() || u.split == split) s.insert(u.phrase_id);
  return {s.begin(), s.end()};
}

CorpusManifest LoadManifest(const std::string &path) {
  std::istringstream in(ReadFile(path));
  const fs::path base = fs::path(path).parent_path();
  std::vector<UttInfo> utts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    UttInfo u;
    if (!(ss >> u.utterance_id) || u.utterance_id[0] == '#') continue;
    std::string extra;
    if (!(ss >> u.speaker_id >> u.phrase_id >> u.split) || ((ss >> u.path) && (ss >> extra)))
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": expected 'utterance speaker phrase split [path]'");
    if (!u.path.empty() && fs::path(u.path).is_relative()) u.path = (base / u.path).string();
    utts.push_back(std::move(u));
  }
  try {
    return CorpusManifest(std::move(utts));
  } catch (const ValidationError &e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void WriteManifest(const std::string &path, const CorpusManifest &manifest) {
  std::string text = "# utterance speaker phrase split path\n";
  for (const UttInfo &u : manifest.utterances()) {
    text += u.utterance_id + " " + u.speaker_id + " " + u.phrase_id + " " + u.split;
    if (!u.path.empty()) text += " " + u.path;
    text += "\n";
  }
  WriteFileAtomic(path, text);
}

void SyntheticSpec::Validate() const {
  Require(num_phrases >= 1 && num_speakers >= 1 && num_dev_speakers >= 1 &&
              num_ubm_speakers >= 1 && num_background_phrases >= 1,
          "synthetic: counts must be >= 1");
  Require(enroll_sessions >= 1 && test_sessions >= 1 && dev_sessions >= 1 && ubm_sessions >= 1,
          "synthetic: session counts must be >= 1");
  Require(dim >= 1 && num_phones >= 1 && phones_per_phrase >= 1,
          "synthetic: dim, phone count and phones per phrase must be >= 1");
  Require(frames_per_utterance >= phones_per_phrase,
          "synthetic: need at least one frame per phone segment");
  Require(phrase_separation >= 0 && context_variability >= 0 && speaker_separation >= 0 &&
              session_variability >= 0,
          "synthetic: separations must be >= 0");
}

namespace {

std::string Numbered(const char *prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
  return buf;
}

class Generator {
 public:
  explicit Generator(const SyntheticSpec &spec) : spec_(spec), rng_(spec.seed) {}

  SyntheticCorpus Run() {
    const int D = spec_.dim;
    phone_means_ = Draw(spec_.num_phones, D, spec_.phrase_separation);
    for (int p = 0; p < spec_.num_phrases; ++p) {
      std::vector<int> seq;
      std::uniform_int_distribution<int> pick(0, spec_.num_phones - 1);
      for (int k = 0; k < spec_.phones_per_phrase; ++k) seq.push_back(pick(rng_));
      phrases_.push_back(MakePhrase(Numbered("p", p), seq));
    }
    // Background phrases walk through shuffled copies of the whole phone
    // inventory so the UBM sees every phone.
    std::vector<int> pool;
    while (static_cast<int>(pool.size()) < spec_.num_background_phrases * spec_.phones_per_phrase) {
      std::vector<int> all(spec_.num_phones);
      for (int i = 0; i < spec_.num_phones; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng_);
      pool.insert(pool.end(), all.begin(), all.end());
    }
    for (int p = 0; p < spec_.num_background_phrases; ++p)
      background_.push_back(
          MakePhrase(Numbered("bgp", p),
                     std::vector<int>(pool.begin() + p * spec_.phones_per_phrase,
                                      pool.begin() + (p + 1) * spec_.phones_per_phrase)));

    auto add_speakers = [&](const char *prefix, int n) {
      std::vector<std::string> ids;
      for (int s = 0; s < n; ++s) {
        ids.push_back(Numbered(prefix, s));
        // Half the speaker variance is shared by all phones, half is per phone.
        double sd = spec_.speaker_separation / std::sqrt(2.0);
        Matrix global = Draw(1, D, sd);
        Matrix offsets = Draw(spec_.num_phones, D, sd);
        offsets.rowwise() += global.row(0);
        speaker_offsets_.emplace(ids.back(), std::move(offsets));
      }
      return ids;
    };
    std::vector<std::string> ubm_spk = add_speakers("bg", spec_.num_ubm_speakers);
    std::vector<std::string> dev_spk = add_speakers("dev", spec_.num_dev_speakers);
    std::vector<std::string> eval_spk = add_speakers("spk", spec_.num_speakers);

    for (const auto &s : ubm_spk)
      for (const auto &ph : background_) Emit(s, ph, "ubm", spec_.ubm_sessions);
    for (const auto &s : dev_spk)
      for (const auto &ph : phrases_) Emit(s, ph, "dev", spec_.dev_sessions);
    for (const auto &s : eval_spk)
      for (const auto &ph : phrases_) Emit(s, ph, "enroll", spec_.enroll_sessions);
    for (const auto &s : eval_spk)
      for (const auto &ph : phrases_) Emit(s, ph, "test", spec_.test_sessions);

    SyntheticCorpus out;
    out.manifest = CorpusManifest(std::move(infos_));
    out.features = std::move(features_);
    return out;
  }

 private:
  struct Phrase {
    std::string id;
    std::vector<int> phones;
    Matrix context;  // one offset row per segment
  };

  Phrase MakePhrase(std::string id, std::vector<int> phones) {
    Matrix ctx = Draw(static_cast<int>(phones.size()), spec_.dim,
                      spec_.context_variability * spec_.phrase_separation);
    return {std::move(id), std::move(phones), std::move(ctx)};
  }

  Matrix Draw(int rows, int cols, double sd) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = sd * gauss_(rng_);
    return m;
  }

  void Emit(const std::string &speaker, const Phrase &phrase, const std::string &split,
            int sessions) {
    const int K = static_cast<int>(phrase.phones.size());
    const int L = spec_.frames_per_utterance;
    const Matrix &offsets = speaker_offsets_.at(speaker);
    for (int sess = 0; sess < sessions; ++sess) {
      // Segment boundaries jitter by up to a quarter of the nominal length.
      std::vector<int> bounds(K + 1);
      bounds[0] = 0;
      bounds[K] = L;
      std::uniform_real_distribution<double> jitter(-0.25, 0.25);
      for (int k = 1; k < K; ++k) {
        int b = static_cast<int>(std::lround((k + jitter(rng_)) * L / static_cast<double>(K)));
        bounds[k] = std::clamp(b, bounds[k - 1] + 1, L - (K - k));
      }
      Matrix channel = Draw(1, spec_.dim, spec_.session_variability);
      FeatureMatrix fm;
      fm.frames.resize(L, spec_.dim);
      for (int k = 0; k < K; ++k) {
        const int ph = phrase.phones[k];
        for (int t = bounds[k]; t < bounds[k + 1]; ++t)
          for (int d = 0; d < spec_.dim; ++d) {
            double v = phone_means_(ph, d) + phrase.context(k, d) + offsets(ph, d) +
                       channel(0, d) + gauss_(rng_);
            // Rounded to the on-disk precision so files and memory agree.
            fm.frames(t, d) = static_cast<float>(v);
          }
      }
      UttInfo u;
      u.speaker_id = speaker;
      u.phrase_id = phrase.id;
      u.split = split;
      u.utterance_id = speaker + "_" + phrase.id + "_" + split + std::to_string(sess);
      fm.utterance_id = u.utterance_id;
      fm.speaker_id = speaker;
      fm.phrase_id = phrase.id;
      infos_.push_back(std::move(u));
      features_.push_back(std::move(fm));
    }
  }

  const SyntheticSpec &spec_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
  Matrix phone_means_;
  std::vector<Phrase> phrases_;
  std::vector<Phrase> background_;
  std::map<std::string, Matrix> speaker_offsets_;
  std::vector<UttInfo> infos_;
  std::vector<FeatureMatrix> features_;
};

}  // namespace

SyntheticCorpus GenerateSyntheticCorpus(const SyntheticSpec &spec) {
  spec.Validate();
  return Generator(spec).Run();
}

void WriteSyntheticCorpus(const std::string &dir, const SyntheticCorpus &corpus) {
  fs::create_directories(fs::path(dir) / "feats");
  std::vector<UttInfo> infos = corpus.manifest.utterances();
  for (size_t i = 0; i < infos.size(); ++i) {
    std::string rel = "feats/" + infos[i].utterance_id + ".feat";
    WriteFeatureFile((fs::path(dir) / rel).string(), corpus.features[i]);
    infos[i].path = rel;
  }
  WriteManifest((fs::path(dir) / "manifest").string(), CorpusManifest(std::move(infos)));
}

}  // namespace pbmsv
