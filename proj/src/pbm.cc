// src/pbm.cc

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

#include "pbmsv/pbm.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbmsv/error.h"

namespace pbmsv {

namespace fs = std::filesystem;

ModelFamily FamilyOf(const AcousticModel &m) {
  return std::holds_alternative<DiagGmm>(m) ? ModelFamily::kGmm : ModelFamily::kHmm;
}

std::string FamilyName(ModelFamily f) { return f == ModelFamily::kGmm ? "gmm" : "hmm"; }

ModelFamily ParseFamily(const std::string &name) {
  if (name == "gmm") return ModelFamily::kGmm;
  if (name == "hmm") return ModelFamily::kHmm;
  throw ValidationError("unknown model family '" + name + "' (expected gmm or hmm)");
}

double UtteranceScore(const AcousticModel &m, const FeatureMatrix &x) {
  Require(x.NumFrames() > 0, "empty utterance");
  if (const auto *g = std::get_if<DiagGmm>(&m)) return AvgLogLikelihood(*g, x);
  return ViterbiLogLik(std::get<HmmModel>(m), x);
}

double ModelLlr(const AcousticModel &target, const AcousticModel &background,
                const FeatureMatrix &x) {
  Require(target.index() == background.index(), "llr: model family mismatch");
  Require(x.NumFrames() > 0, "llr: empty utterance");
  if (const auto *g = std::get_if<DiagGmm>(&target))
    return AvgLlr(*g, std::get<DiagGmm>(background), x);
  return HmmLlr(std::get<HmmModel>(target), std::get<HmmModel>(background), x);
}

UttEval EvaluateModel(const AcousticModel &m, const FeatureMatrix &x) {
  Require(x.NumFrames() > 0, "empty utterance");
  UttEval e;
  if (const auto *g = std::get_if<DiagGmm>(&m)) {
    Require(x.Dim() == g->Dim(), "feature dimension mismatch");
    e.frame_loglikes = g->FrameLogLikes(x.frames);
    e.normalized = e.frame_loglikes.sum() / x.NumFrames();
  } else {
    e.normalized = ViterbiLogLik(std::get<HmmModel>(m), x);
  }
  return e;
}

double LlrFromEvals(const UttEval &target, const UttEval &background) {
  Require((target.frame_loglikes.size() > 0) == (background.frame_loglikes.size() > 0),
          "llr: model family mismatch");
  if (target.frame_loglikes.size() > 0)
    return AvgLlrFromFrameLogLikes(target.frame_loglikes, background.frame_loglikes);
  return target.normalized - background.normalized;
}

std::string ModelHash(const AcousticModel &m) {
  if (const auto *g = std::get_if<DiagGmm>(&m)) return GmmHash(*g);
  return HmmHash(std::get<HmmModel>(m));
}

void SaveModel(const std::string &path, const AcousticModel &m) {
  if (const auto *g = std::get_if<DiagGmm>(&m))
    SaveGmm(path, *g);
  else
    SaveHmm(path, std::get<HmmModel>(m));
}

AcousticModel LoadModel(const std::string &path) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "model file " + path);
  AcousticModel m;
  if (bytes.compare(0, 4, "PBMG") == 0)
    m = ReadGmm(&in);
  else if (bytes.compare(0, 4, "PBMH") == 0)
    m = ReadHmm(&in);
  else
    throw ValidationError("model file " + path + ": unknown format");
  in.ExpectEnd();
  return m;
}

void AdaptConfig::Validate() const {
  Require(relevance_factor > 0, "adapt: relevance factor must be > 0");
  Require(iterations >= 1, "adapt: iterations must be >= 1");
}

namespace {

AcousticModel Adapt(const AcousticModel &background, const UtteranceRefs &data,
                    const AdaptConfig &cfg, bool update_transitions) {
  cfg.Validate();
  Require(!data.empty() && TotalFrames(data) > 0, "adapt: no frames to adapt on");
  if (const auto *g = std::get_if<DiagGmm>(&background)) {
    MapConfig mc;
    mc.relevance_factor = cfg.relevance_factor;
    mc.iterations = cfg.iterations;
    return MapAdapt(*g, data, mc);
  }
  HmmMapConfig hc;
  hc.relevance_factor = cfg.relevance_factor;
  hc.iterations = cfg.iterations;
  hc.update_transitions = update_transitions;
  return MapAdaptHmm(std::get<HmmModel>(background), data, hc);
}

std::string SetHash(PbmFlavor flavor, const std::optional<std::string> &owner,
                    const std::string &root_hash,
                    const std::map<std::string, AcousticModel> &entries) {
  std::string text = FlavorName(flavor) + "\n" + owner.value_or("-") + "\n" + root_hash + "\n";
  for (const auto &[phrase, model] : entries) text += phrase + " " + ModelHash(model) + "\n";
  return Sha256Hex(text);
}

// Development data for each phrase followed by the target's own data.
PhraseGroups PoolWithTarget(const PhraseGroups &dev, const PhraseGroups &target) {
  for (const auto &[phrase, utts] : target)
    if (!dev.count(phrase))
      throw ValidationError("sd pbm: target phrase '" + phrase +
                            "' has no development data");
  PhraseGroups pooled = dev;
  for (const auto &[phrase, utts] : target) {
    UtteranceRefs &dst = pooled[phrase];
    dst.insert(dst.end(), utts.begin(), utts.end());
  }
  return pooled;
}

void CheckGroups(const PhraseGroups &groups) {
  Require(!groups.empty(), "pbm: no phrase groups");
  for (const auto &[phrase, utts] : groups) {
    ValidateId(phrase, "phrase id");
    if (utts.empty() || TotalFrames(utts) == 0)
      throw ValidationError("pbm: phrase '" + phrase + "' has no frames");
  }
}

}  // namespace

AcousticModel AdaptBackground(const AcousticModel &background, const UtteranceRefs &data,
                              const AdaptConfig &cfg) {
  return Adapt(background, data, cfg, cfg.hmm_pbm_update_transitions);
}

AcousticModel AdaptTarget(const AcousticModel &background, const UtteranceRefs &data,
                          const AdaptConfig &cfg) {
  return Adapt(background, data, cfg, false);
}

std::string FlavorName(PbmFlavor f) { return f == PbmFlavor::kSI ? "SI" : "SD"; }

PbmFlavor ParseFlavor(const std::string &name) {
  if (name == "SI" || name == "si") return PbmFlavor::kSI;
  if (name == "SD" || name == "sd") return PbmFlavor::kSD;
  throw ValidationError("unknown PBM flavor '" + name + "' (expected SI or SD)");
}

void ValidateId(const std::string &id, const std::string &what) {
  bool ok = !id.empty();
  for (unsigned char ch : id)
    if (ch <= ' ' || ch == '/' || ch == ':' || ch == '\\' || ch == 0x7f) ok = false;
  if (!ok) throw ValidationError("invalid " + what + ": '" + id + "'");
}

PbmSet::PbmSet(AcousticModel root, std::map<std::string, AcousticModel> entries,
               PbmFlavor flavor, std::optional<std::string> owner) {
  Require(!entries.empty(), "pbm set: no entries");
  Require((flavor == PbmFlavor::kSD) == owner.has_value(),
          "pbm set: SD sets need exactly one owner, SI sets none");
  const ModelFamily fam = FamilyOf(root);
  for (const auto &[phrase, m] : entries) {
    ValidateId(phrase, "phrase id");
    Require(FamilyOf(m) == fam, "pbm set: family mismatch for phrase '" + phrase + "'");
    if (fam == ModelFamily::kGmm) {
      const auto &a = std::get<DiagGmm>(m), &b = std::get<DiagGmm>(root);
      Require(a.NumComponents() == b.NumComponents() && a.Dim() == b.Dim(),
              "pbm set: entry '" + phrase + "' does not match the root model shape");
    } else {
      const auto &a = std::get<HmmModel>(m), &b = std::get<HmmModel>(root);
      bool same = a.NumStates() == b.NumStates() && a.Dim() == b.Dim();
      for (int s = 0; same && s < a.NumStates(); ++s)
        same = a.emission(s).NumComponents() == b.emission(s).NumComponents();
      Require(same, "pbm set: entry '" + phrase + "' does not match the root model shape");
    }
  }
  auto d = std::make_shared<Data>();
  d->root_hash = ModelHash(root);
  d->hash = SetHash(flavor, owner, d->root_hash, entries);
  d->root = std::move(root);
  d->entries = std::move(entries);
  d->flavor = flavor;
  d->owner = std::move(owner);
  data_ = std::move(d);
}

bool PbmSet::Contains(const std::string &phrase_id) const {
  return data_->entries.count(phrase_id) > 0;
}

const AcousticModel &PbmSet::Entry(const std::string &phrase_id) const {
  auto it = data_->entries.find(phrase_id);
  if (it == data_->entries.end())
    throw ValidationError("unknown phrase id '" + phrase_id + "'");
  return it->second;
}

std::vector<std::string> PbmSet::PhraseIds() const {
  std::vector<std::string> ids;
  for (const auto &kv : data_->entries) ids.push_back(kv.first);
  return ids;
}

PbmSet BuildSiPbms(const AcousticModel &ubm, const PhraseGroups &dev,
                   const AdaptConfig &cfg) {
  CheckGroups(dev);
  std::map<std::string, AcousticModel> entries;
  for (const auto &[phrase, utts] : dev)
    entries.emplace(phrase, AdaptBackground(ubm, utts, cfg));
  return PbmSet(ubm, std::move(entries), PbmFlavor::kSI);
}

PbmSet BuildSdPbms(const AcousticModel &ubm, const PhraseGroups &dev,
                   const PhraseGroups &target_training, const std::string &owner,
                   const AdaptConfig &cfg) {
  ValidateId(owner, "owner id");
  CheckGroups(dev);
  PhraseGroups pooled = PoolWithTarget(dev, target_training);
  std::map<std::string, AcousticModel> entries;
  for (const auto &[phrase, utts] : pooled)
    entries.emplace(phrase, AdaptBackground(ubm, utts, cfg));
  return PbmSet(ubm, std::move(entries), PbmFlavor::kSD, owner);
}

SpeakerModel EnrollTarget(const PbmSet &pbms, const std::string &phrase_id,
                          const UtteranceRefs &training, const AdaptConfig &cfg,
                          const std::string &speaker_id) {
  const AcousticModel &source = pbms.Entry(phrase_id);
  Require(!training.empty() && TotalFrames(training) > 0, "enroll: empty training data");
  SpeakerModel sm;
  sm.speaker_id = speaker_id;
  sm.phrase_id = phrase_id;
  sm.model = AdaptTarget(source, training, cfg);
  sm.source_hash = pbms.Hash();
  sm.source_phrase = phrase_id;
  return sm;
}

SpeakerModel EnrollBaseline(const AcousticModel &ubm, const std::string &phrase_id,
                            const UtteranceRefs &training, const AdaptConfig &cfg,
                            const std::string &speaker_id) {
  Require(!training.empty() && TotalFrames(training) > 0, "enroll: empty training data");
  SpeakerModel sm;
  sm.speaker_id = speaker_id;
  sm.phrase_id = phrase_id;
  sm.model = AdaptTarget(ubm, training, cfg);
  sm.source_hash = ModelHash(ubm);
  return sm;
}

PbmSelection SelectPbm(const std::map<std::string, UttEval> &evals) {
  Require(!evals.empty(), "select pbm: no candidates");
  PbmSelection sel;
  bool first = true;
  for (const auto &[phrase, e] : evals) {
    sel.all.emplace(phrase, e.normalized);
    if (first || e.normalized > sel.score) {
      sel.score = e.normalized;
      sel.phrase_id = phrase;
      first = false;
    }
  }
  return sel;
}

PbmSelection SelectPbm(const PbmSet &pbms, const FeatureMatrix &y) {
  Require(y.NumFrames() > 0, "select pbm: empty utterance");
  PbmSelection sel;
  bool first = true;
  for (const auto &[phrase, model] : pbms.entries()) {
    double s = UtteranceScore(model, y);
    sel.all.emplace(phrase, s);
    if (first || s > sel.score) {
      sel.score = s;
      sel.phrase_id = phrase;
      first = false;
    }
  }
  return sel;
}

TrialScore ScoreTrial(const SpeakerModel &claimant, const PbmSet &pbms,
                      const FeatureMatrix &y) {
  Require(FamilyOf(claimant.model) == pbms.family(), "score: claimant/PBM family mismatch");
  Require(y.NumFrames() > 0, "score: empty utterance");
  TrialScore ts;
  ts.selected_phrase = SelectPbm(pbms, y).phrase_id;
  ts.llr = ModelLlr(claimant.model, pbms.Entry(ts.selected_phrase), y);
  return ts;
}

double ScoreTrialBaseline(const SpeakerModel &claimant, const AcousticModel &ubm,
                          const FeatureMatrix &y) {
  return ModelLlr(claimant.model, ubm, y);
}

void SavePbmSet(const std::string &dir, const PbmSet &pbms) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "flavor " << FlavorName(pbms.flavor()) << "\n";
  manifest << "owner " << pbms.owner().value_or("-") << "\n";
  manifest << "family " << FamilyName(pbms.family()) << "\n";
  manifest << "root_hash " << pbms.RootHash() << "\n";
  for (const auto &[phrase, model] : pbms.entries()) {
    std::string file = phrase + ".mdl";
    SaveModel((fs::path(dir) / file).string(), model);
    manifest << "phrase " << phrase << " " << file << " " << ModelHash(model) << "\n";
  }
  WriteFileAtomic((fs::path(dir) / "manifest").string(), manifest.str());
}

PbmSet LoadPbmSet(const std::string &dir, const AcousticModel &ubm) {
  const std::string path = (fs::path(dir) / "manifest").string();
  std::istringstream in(ReadFile(path));
  std::string line, flavor, owner = "-", family, root_hash;
  std::map<std::string, AcousticModel> entries;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto bad = [&]() {
      return ValidationError(path + ":" + std::to_string(lineno) + ": malformed line");
    };
    if (key == "flavor") {
      if (!(ss >> flavor)) throw bad();
    } else if (key == "owner") {
      if (!(ss >> owner)) throw bad();
    } else if (key == "family") {
      if (!(ss >> family)) throw bad();
    } else if (key == "root_hash") {
      if (!(ss >> root_hash)) throw bad();
    } else if (key == "phrase") {
      std::string phrase, file, hash;
      if (!(ss >> phrase >> file >> hash)) throw bad();
      AcousticModel m = LoadModel((fs::path(dir) / file).string());
      if (ModelHash(m) != hash)
        throw ValidationError(path + ": model for phrase '" + phrase +
                              "' does not match its recorded hash");
      entries.emplace(phrase, std::move(m));
    } else {
      throw bad();
    }
  }
  if (root_hash != ModelHash(ubm))
    throw ValidationError(path + ": PBM set was built from a different background model");
  if (ParseFamily(family) != FamilyOf(ubm))
    throw ValidationError(path + ": PBM family does not match the background model");
  PbmFlavor fl = ParseFlavor(flavor);
  std::optional<std::string> own;
  if (owner != "-") own = owner;
  return PbmSet(ubm, std::move(entries), fl, own);
}

SdPbmCache::SdPbmCache(std::string dir, AcousticModel ubm, AdaptConfig cfg)
    : dir_(std::move(dir)), ubm_(std::move(ubm)), cfg_(cfg), ubm_hash_(ModelHash(ubm_)) {
  cfg_.Validate();
}

AcousticModel SdPbmCache::GetOrBuild(const std::string &owner, const std::string &phrase_id,
                                     const UtteranceRefs &pooled) {
  ValidateId(owner, "owner id");
  ValidateId(phrase_id, "phrase id");
  std::ostringstream key;
  key.precision(17);
  key << ubm_hash_ << "\n" << cfg_.relevance_factor << " " << cfg_.iterations << " "
      << cfg_.hmm_pbm_update_transitions << "\n";
  for (const FeatureMatrix &u : pooled)
    key << u.utterance_id << " " << u.NumFrames() << "\n";
  const std::string key_hash = Sha256Hex(key.str());
  const fs::path base = fs::path(dir_) / owner;
  const fs::path model_path = base / (phrase_id + ".mdl");
  const fs::path key_path = base / (phrase_id + ".key");
  if (fs::exists(model_path) && fs::exists(key_path) && ReadFile(key_path.string()) == key_hash) {
    ++hits_;
    return LoadModel(model_path.string());
  }
  ++misses_;
  AcousticModel m = AdaptBackground(ubm_, pooled, cfg_);
  SaveModel(model_path.string(), m);
  WriteFileAtomic(key_path.string(), key_hash);
  return m;
}

PbmSet SdPbmCache::BuildSet(const PhraseGroups &dev, const PhraseGroups &target_training,
                            const std::string &owner) {
  ValidateId(owner, "owner id");
  CheckGroups(dev);
  PhraseGroups pooled = PoolWithTarget(dev, target_training);
  std::map<std::string, AcousticModel> entries;
  for (const auto &[phrase, utts] : pooled)
    entries.emplace(phrase, GetOrBuild(owner, phrase, utts));
  return PbmSet(ubm_, std::move(entries), PbmFlavor::kSD, owner);
}

}  // namespace pbmsv
