// src/pipeline.cc

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

#include "pbmsv/pipeline.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "pbmsv/binary-io.h"
#include "pbmsv/error.h"

namespace pbmsv {

namespace fs = std::filesystem;

namespace {

std::string Trim(const std::string &s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void BadValue(const std::string &key, const std::string &value) {
  throw ValidationError("config: bad value '" + value + "' for " + key);
}

long ParseLong(const std::string &key, const std::string &v) {
  try {
    size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) BadValue(key, v);
    return x;
  } catch (const std::logic_error &) {
    BadValue(key, v);
  }
}

int ParseInt(const std::string &key, const std::string &v) {
  long x = ParseLong(key, v);
  if (x < INT32_MIN || x > INT32_MAX) BadValue(key, v);
  return static_cast<int>(x);
}

uint64_t ParseU64(const std::string &key, const std::string &v) {
  try {
    size_t pos = 0;
    if (v.empty() || v[0] == '-') BadValue(key, v);
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) BadValue(key, v);
    return x;
  } catch (const std::logic_error &) {
    BadValue(key, v);
  }
}

double ParseDouble(const std::string &key, const std::string &v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) BadValue(key, v);
    return x;
  } catch (const std::logic_error &) {
    BadValue(key, v);
  }
}

bool ParseBool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  BadValue(key, v);
}

std::string Fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string Fmt(bool b) { return b ? "true" : "false"; }

struct Option {
  const char *key;
  std::function<std::string(const PipelineConfig &)> get;
  std::function<void(PipelineConfig &, const std::string &)> set;
};

#define PBMSV_INT(KEY, FIELD)                                                        \
  Option{KEY, [](const PipelineConfig &c) { return std::to_string(c.FIELD); },        \
         [](PipelineConfig &c, const std::string &v) { c.FIELD = ParseInt(KEY, v); }}
#define PBMSV_U64(KEY, FIELD)                                                        \
  Option{KEY, [](const PipelineConfig &c) { return std::to_string(c.FIELD); },        \
         [](PipelineConfig &c, const std::string &v) { c.FIELD = ParseU64(KEY, v); }}
#define PBMSV_DBL(KEY, FIELD)                                                        \
  Option{KEY, [](const PipelineConfig &c) { return Fmt(c.FIELD); },                   \
         [](PipelineConfig &c, const std::string &v) { c.FIELD = ParseDouble(KEY, v); }}
#define PBMSV_BOOL(KEY, FIELD)                                                       \
  Option{KEY, [](const PipelineConfig &c) { return Fmt(c.FIELD); },                   \
         [](PipelineConfig &c, const std::string &v) { c.FIELD = ParseBool(KEY, v); }}
#define PBMSV_STR(KEY, FIELD)                                                        \
  Option{KEY, [](const PipelineConfig &c) { return c.FIELD; },                        \
         [](PipelineConfig &c, const std::string &v) { c.FIELD = v; }}

const std::vector<Option> &Options() {
  static const std::vector<Option> options = {
      PBMSV_DBL("features.window_ms", features.window_ms),
      PBMSV_DBL("features.hop_ms", features.hop_ms),
      PBMSV_INT("features.num_static", features.num_static),
      PBMSV_INT("features.num_mel_filters", features.num_mel_filters),
      PBMSV_INT("features.fft_size", features.fft_size),
      PBMSV_INT("features.sample_rate", features.sample_rate),
      PBMSV_DBL("features.preemphasis", features.preemphasis),
      PBMSV_INT("features.delta_window", features.delta_window),
      PBMSV_DBL("features.vad_threshold_db", features.vad_threshold_db),
      PBMSV_BOOL("features.rasta", features.rasta_enabled),
      PBMSV_BOOL("features.vad", features.vad_enabled),
      PBMSV_BOOL("features.cmvn", features.cmvn_enabled),
      Option{"ubm.family", [](const PipelineConfig &c) { return FamilyName(c.family); },
             [](PipelineConfig &c, const std::string &v) { c.family = ParseFamily(v); }},
      PBMSV_INT("ubm.components", gmm.num_components),
      PBMSV_INT("ubm.split_iterations", gmm.split_iterations),
      PBMSV_INT("ubm.em_iterations", gmm.final_iterations),
      PBMSV_DBL("ubm.variance_floor_ratio", gmm.variance_floor_ratio),
      PBMSV_DBL("ubm.split_perturbation", gmm.split_perturbation),
      PBMSV_U64("ubm.seed", gmm.seed),
      PBMSV_INT("hmm.states", hmm.num_states),
      PBMSV_INT("hmm.components_per_state", hmm.components_per_state),
      PBMSV_INT("hmm.bw_iterations", hmm.bw_iterations),
      PBMSV_DBL("hmm.initial_self_loop", hmm.initial_self_loop),
      PBMSV_DBL("map.relevance_factor", adapt.relevance_factor),
      PBMSV_INT("map.iterations", adapt.iterations),
      PBMSV_BOOL("map.hmm_pbm_transitions", adapt.hmm_pbm_update_transitions),
      Option{"pbm.systems",
             [](const PipelineConfig &c) {
               std::string s;
               for (SystemKind k : c.pbm_systems) s += (s.empty() ? "" : ",") + SystemKindName(k);
               return s.empty() ? std::string("none") : s;
             },
             [](PipelineConfig &c, const std::string &v) {
               c.pbm_systems.clear();
               if (v == "none" || v == "baseline") return;
               std::stringstream ss(v);
               std::string item;
               while (std::getline(ss, item, ',')) {
                 SystemKind k = ParseSystemKind(Trim(item));
                 if (k == SystemKind::kBaseline) BadValue("pbm.systems", v);
                 c.pbm_systems.push_back(k);
               }
             }},
      PBMSV_BOOL("ivector.enabled", ivector_enabled),
      PBMSV_INT("ivector.rank", tv.rank),
      PBMSV_INT("ivector.t_iterations", tv.iterations),
      PBMSV_U64("ivector.seed", tv.seed),
      PBMSV_INT("ivector.sph_iterations", sph_iterations),
      PBMSV_INT("ivector.plda_speaker_rank", plda.speaker_rank),
      PBMSV_INT("ivector.plda_channel_rank", plda.channel_rank),
      PBMSV_INT("ivector.plda_iterations", plda.iterations),
      PBMSV_U64("ivector.plda_seed", plda.seed),
      PBMSV_DBL("dcf.c_miss", dcf.c_miss),
      PBMSV_DBL("dcf.c_fa", dcf.c_fa),
      PBMSV_DBL("dcf.p_target", dcf.p_target),
      PBMSV_STR("paths.manifest", manifest),
      PBMSV_STR("paths.trials", trials),
      PBMSV_STR("paths.workdir", workdir),
  };
  return options;
}

#undef PBMSV_INT
#undef PBMSV_U64
#undef PBMSV_DBL
#undef PBMSV_BOOL
#undef PBMSV_STR

}  // namespace

std::string SystemKindName(SystemKind k) {
  switch (k) {
    case SystemKind::kBaseline: return "baseline";
    case SystemKind::kSI: return "SI";
    case SystemKind::kSD: return "SD";
  }
  return "";
}

SystemKind ParseSystemKind(const std::string &name) {
  if (name == "baseline" || name == "none") return SystemKind::kBaseline;
  if (name == "SI" || name == "si") return SystemKind::kSI;
  if (name == "SD" || name == "sd") return SystemKind::kSD;
  throw ValidationError("unknown system '" + name + "' (expected baseline, SI or SD)");
}

PipelineConfig::PipelineConfig() {
  plda.speaker_rank = 0;
  plda.channel_rank = 0;
}

void PipelineConfig::Set(const std::string &key, const std::string &value) {
  const std::string k = key == "pbm.flavor" ? "pbm.systems" : key;
  for (const Option &o : Options())
    if (k == o.key) {
      o.set(*this, value);
      return;
    }
  throw ValidationError("config: unknown key '" + key + "'");
}

void PipelineConfig::SetAssignment(const std::string &assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ValidationError("config: expected key=value, got '" + assignment + "'");
  Set(Trim(assignment.substr(0, eq)), Trim(assignment.substr(eq + 1)));
}

void PipelineConfig::Validate() const {
  features.Validate();
  gmm.Validate();
  if (family == ModelFamily::kHmm) hmm.Validate();
  adapt.Validate();
  dcf.Validate();
  std::set<SystemKind> seen;
  for (SystemKind k : pbm_systems)
    Require(seen.insert(k).second, "config: PBM system listed twice");
  if (ivector_enabled) {
    Require(family == ModelFamily::kGmm,
            "config: the i-vector path needs the gmm family for its posteriors");
    tv.Validate();
    Require(sph_iterations >= 1, "config: ivector.sph_iterations must be >= 1");
    Require(plda.speaker_rank >= 0 && plda.speaker_rank <= tv.rank &&
                plda.channel_rank >= 0 && plda.channel_rank <= tv.rank,
            "config: PLDA ranks must be in [0, ivector.rank]");
    Require(plda.iterations >= 0, "config: ivector.plda_iterations must be >= 0");
  }
}

std::string PipelineConfig::ToText() const { return SectionText({}); }

std::string PipelineConfig::SectionText(const std::vector<std::string> &prefixes) const {
  std::string text;
  for (const Option &o : Options()) {
    std::string key = o.key;
    bool keep = prefixes.empty();
    for (const auto &p : prefixes) keep = keep || key.rfind(p, 0) == 0;
    if (keep) text += key + "=" + o.get(*this) + "\n";
  }
  return text;
}

PipelineConfig LoadPipelineConfig(const std::string &path) {
  std::istringstream in(ReadFile(path));
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = Trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      cfg.SetAssignment(t);
    } catch (const ValidationError &e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

Corpus::Corpus(CorpusManifest manifest, std::vector<FeatureMatrix> features)
    : manifest_(std::move(manifest)), features_(std::move(features)) {
  const auto &utts = manifest_.utterances();
  Require(utts.size() == features_.size(), "corpus: feature count does not match manifest");
  std::string digest;
  int dim = -1;
  for (size_t i = 0; i < utts.size(); ++i) {
    FeatureMatrix &f = features_[i];
    f.utterance_id = utts[i].utterance_id;
    f.speaker_id = utts[i].speaker_id;
    f.phrase_id = utts[i].phrase_id;
    if (dim < 0) dim = f.Dim();
    Require(f.Dim() == dim, "corpus: inconsistent feature dimension for " + f.utterance_id);
    Require(f.NumFrames() > 0, "corpus: empty utterance " + f.utterance_id);
    index_.emplace(f.utterance_id, i);
    BinaryWriter w;
    w.Str(f.utterance_id);
    w.Str(f.speaker_id);
    w.Str(f.phrase_id);
    w.Str(utts[i].split);
    w.U64(f.frames.rows());
    w.U64(f.frames.cols());
    for (long r = 0; r < f.frames.rows(); ++r)
      for (long c = 0; c < f.frames.cols(); ++c) w.F64(f.frames(r, c));
    digest += Sha256Hex(w.bytes());
  }
  hash_ = Sha256Hex(digest);
}

Corpus Corpus::Load(const CorpusManifest &manifest, const FeatureConfig &cfg) {
  std::vector<FeatureMatrix> feats;
  feats.reserve(manifest.utterances().size());
  for (const UttInfo &u : manifest.utterances()) {
    Require(!u.path.empty(), "corpus: no file for utterance " + u.utterance_id);
    std::string ext = fs::path(u.path).extension().string();
    if (ext == ".wav" || ext == ".WAV")
      feats.push_back(ExtractFeatures(LoadAudio(u.path, cfg.sample_rate), cfg));
    else
      feats.push_back(ReadFeatureFile(u.path));
  }
  return Corpus(manifest, std::move(feats));
}

const FeatureMatrix &Corpus::Get(const std::string &utterance_id) const {
  auto it = index_.find(utterance_id);
  if (it == index_.end()) throw ValidationError("corpus: unknown utterance " + utterance_id);
  return features_[it->second];
}

UtteranceRefs Corpus::Refs(const std::string &split) const {
  UtteranceRefs refs;
  const auto &utts = manifest_.utterances();
  for (size_t i = 0; i < utts.size(); ++i)
    if (utts[i].split == split) refs.push_back(std::cref(features_[i]));
  return refs;
}

PhraseGroups Corpus::GroupByPhrase(const std::string &split, const std::string &speaker) const {
  PhraseGroups groups;
  const auto &utts = manifest_.utterances();
  for (size_t i = 0; i < utts.size(); ++i)
    if (utts[i].split == split && (speaker.empty() || utts[i].speaker_id == speaker))
      groups[utts[i].phrase_id].push_back(std::cref(features_[i]));
  return groups;
}

AcousticModel TrainBackgroundModel(const PipelineConfig &cfg, const Corpus &corpus) {
  UtteranceRefs data = corpus.Refs("ubm");
  Require(!data.empty(), "train-ubm: the manifest has no ubm split");
  if (cfg.family == ModelFamily::kGmm) return TrainUbm(data, cfg.gmm);
  HmmTrainConfig hc = cfg.hmm;
  hc.state_init = cfg.gmm;
  return TrainHmmUbm(data, hc);
}

IvectorBackend TrainIvectorBackend(const PipelineConfig &cfg, const Corpus &corpus,
                                   const DiagGmm &ubm) {
  std::vector<const FeatureMatrix *> utts;
  for (const char *split : {"ubm", "dev"})
    for (const FeatureMatrix &f : corpus.Refs(split)) utts.push_back(&f);
  Require(!utts.empty(), "i-vector training: no ubm or dev utterances");
  std::vector<SuffStats> stats;
  stats.reserve(utts.size());
  for (const FeatureMatrix *f : utts) stats.push_back(AccumulateStats(ubm, ubm, *f));
  IvectorBackend b;
  b.ubm = ubm;
  b.tv = TrainTMatrix(ubm, stats, cfg.tv);
  std::vector<Vector> raw;
  raw.reserve(stats.size());
  for (const SuffStats &s : stats) raw.push_back(ExtractIvector(b.tv, s).values);
  const std::string hash = GmmHash(ubm);
  b.sph = TrainSph(raw, cfg.sph_iterations, hash);
  std::map<std::pair<std::string, std::string>, std::vector<Vector>> by_class;
  for (size_t i = 0; i < utts.size(); ++i) {
    IVector w;
    w.values = raw[i];
    by_class[{utts[i]->speaker_id, utts[i]->phrase_id}].push_back(b.sph.Apply(w).values);
  }
  PldaClasses classes;
  for (auto &kv : by_class) classes.push_back(std::move(kv.second));
  PldaTrainConfig pc = cfg.plda;
  if (pc.speaker_rank == 0) pc.speaker_rank = cfg.tv.rank;
  if (pc.channel_rank == 0) pc.channel_rank = cfg.tv.rank;
  b.plda = TrainPlda(classes, pc, nullptr, hash);
  return b;
}

PbmSet BuildSiSet(const PipelineConfig &cfg, const Corpus &corpus, const AcousticModel &ubm) {
  return BuildSiPbms(ubm, corpus.GroupByPhrase("dev"), cfg.adapt);
}

std::map<std::string, PbmSet> BuildSdSets(const PipelineConfig &cfg, const Corpus &corpus,
                                          const AcousticModel &ubm, const std::string &cache_dir) {
  PhraseGroups dev = corpus.GroupByPhrase("dev");
  std::map<std::string, PbmSet> sets;
  std::optional<SdPbmCache> cache;
  if (!cache_dir.empty()) cache.emplace(cache_dir, ubm, cfg.adapt);
  for (const std::string &spk : corpus.manifest().Speakers("enroll")) {
    PhraseGroups own = corpus.GroupByPhrase("enroll", spk);
    if (cache)
      sets.emplace(spk, cache->BuildSet(dev, own, spk));
    else
      sets.emplace(spk, BuildSdPbms(ubm, dev, own, spk, cfg.adapt));
  }
  return sets;
}

const PbmSet *Backgrounds::For(const std::string &speaker) const {
  switch (kind) {
    case SystemKind::kBaseline: return nullptr;
    case SystemKind::kSI:
      Require(si.has_value(), "no SI PBM set loaded");
      return &*si;
    case SystemKind::kSD: {
      auto it = sd.find(speaker);
      if (it == sd.end()) throw ValidationError("no SD PBM set for speaker " + speaker);
      return &it->second;
    }
  }
  return nullptr;
}

std::map<std::string, SpeakerModel> EnrollAcoustic(const PipelineConfig &cfg,
                                                   const Corpus &corpus,
                                                   const AcousticModel &ubm,
                                                   const Backgrounds &bg) {
  std::map<std::string, SpeakerModel> models;
  for (const std::string &spk : corpus.manifest().Speakers("enroll"))
    for (const auto &[phrase, utts] : corpus.GroupByPhrase("enroll", spk)) {
      const PbmSet *set = bg.For(spk);
      models.emplace(MakeModelId(spk, phrase),
                     set ? EnrollTarget(*set, phrase, utts, cfg.adapt, spk)
                         : EnrollBaseline(ubm, phrase, utts, cfg.adapt, spk));
    }
  Require(!models.empty(), "enroll: the manifest has no enroll split");
  return models;
}

std::map<std::string, IVector> EnrollIvectors(const Corpus &corpus, const IvectorBackend &backend,
                                              const Backgrounds &bg) {
  std::map<std::string, IVector> models;
  for (const std::string &spk : corpus.manifest().Speakers("enroll"))
    for (const auto &[phrase, utts] : corpus.GroupByPhrase("enroll", spk)) {
      const PbmSet *set = bg.For(spk);
      const DiagGmm &post = set ? std::get<DiagGmm>(set->Entry(phrase)) : backend.ubm;
      std::string id = MakeModelId(spk, phrase);
      models.emplace(id, backend.sph.Apply(
                             EnrollTargetIvector(backend.tv, backend.ubm, post, utts, id)));
    }
  Require(!models.empty(), "enroll: the manifest has no enroll split");
  return models;
}

namespace {

// Trials grouped by test utterance, in order of first appearance.
std::vector<std::pair<std::string, std::vector<size_t>>> GroupTrials(const TrialList &trials) {
  std::vector<std::pair<std::string, std::vector<size_t>>> groups;
  std::map<std::string, size_t> where;
  for (size_t i = 0; i < trials.size(); ++i) {
    auto [it, fresh] = where.emplace(trials[i].utterance_id, groups.size());
    if (fresh) groups.push_back({trials[i].utterance_id, {}});
    groups[it->second].second.push_back(i);
  }
  return groups;
}

}  // namespace

ScoreSet ScoreAcoustic(const std::string &system_id, const Corpus &corpus,
                       const TrialList &trials, const AcousticModel &ubm,
                       const Backgrounds &bg, const std::map<std::string, SpeakerModel> &models) {
  std::vector<ScoreEntry> out(trials.size());
  for (const auto &[utt, idx] : GroupTrials(trials)) {
    const FeatureMatrix &y = corpus.Get(utt);
    // Per background set: evaluation of the selected entry and its phrase.
    std::map<const PbmSet *, std::pair<UttEval, std::string>> backgrounds;
    for (size_t i : idx) {
      const Trial &t = trials[i];
      auto mit = models.find(t.model_id);
      if (mit == models.end()) throw ValidationError("no enrolled model " + t.model_id);
      const SpeakerModel &m = mit->second;
      const PbmSet *set = bg.For(m.speaker_id);
      auto bit = backgrounds.find(set);
      if (bit == backgrounds.end()) {
        std::pair<UttEval, std::string> b;
        if (!set) {
          b.first = EvaluateModel(ubm, y);
        } else {
          std::map<std::string, UttEval> evals;
          for (const auto &[phrase, model] : set->entries())
            evals.emplace(phrase, EvaluateModel(model, y));
          b.second = SelectPbm(evals).phrase_id;
          b.first = std::move(evals.at(b.second));
        }
        bit = backgrounds.emplace(set, std::move(b)).first;
      }
      out[i] = {t.model_id, t.utterance_id,
                LlrFromEvals(EvaluateModel(m.model, y), bit->second.first), bit->second.second};
    }
  }
  ScoreSet set(system_id);
  for (auto &e : out) set.Add(std::move(e));
  return set;
}

ScoreSet ScoreIvector(const std::string &system_id, const Corpus &corpus,
                      const TrialList &trials, const IvectorBackend &backend,
                      const Backgrounds &bg, const std::map<std::string, IVector> &models) {
  std::vector<ScoreEntry> out(trials.size());
  for (const auto &[utt, idx] : GroupTrials(trials)) {
    const FeatureMatrix &y = corpus.Get(utt);
    std::map<const PbmSet *, std::pair<IVector, std::string>> tests;
    for (size_t i : idx) {
      const Trial &t = trials[i];
      auto mit = models.find(t.model_id);
      if (mit == models.end()) throw ValidationError("no enrolled model " + t.model_id);
      const PbmSet *set = bg.For(SplitModelId(t.model_id).first);
      auto tit = tests.find(set);
      if (tit == tests.end()) {
        std::string phrase;
        IVector w = TestIvector(backend, set, y, &phrase);
        tit = tests.emplace(set, std::make_pair(std::move(w), phrase)).first;
      }
      const IVector &claimant = mit->second;
      IVector model = claimant.normalized ? claimant : backend.sph.Apply(claimant);
      double s = backend.plda.Score(model.values, tit->second.first.values);
      out[i] = {t.model_id, t.utterance_id, s, tit->second.second};
    }
  }
  ScoreSet set(system_id);
  for (auto &e : out) set.Add(std::move(e));
  return set;
}

std::string SystemId(ModelFamily family, bool ivector, SystemKind kind) {
  std::string base = ivector ? "ivector" : FamilyName(family);
  switch (kind) {
    case SystemKind::kBaseline: return base + "-baseline";
    case SystemKind::kSI: return base + "-si-pbm";
    case SystemKind::kSD: return base + "-sd-pbm";
  }
  return base;
}

void WriteStageMeta(const std::string &path, const std::map<std::string, std::string> &kv) {
  std::string text;
  for (const auto &[k, v] : kv) text += k + " " + v + "\n";
  WriteFileAtomic(path, text);
}

std::map<std::string, std::string> ReadStageMeta(const std::string &path) {
  std::istringstream in(ReadFile(path));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string k, v;
    if (ss >> k) {
      std::getline(ss, v);
      kv[k] = Trim(v);
    }
  }
  return kv;
}

void SaveBackgrounds(const std::string &dir, const Backgrounds &bg) {
  switch (bg.kind) {
    case SystemKind::kBaseline: return;
    case SystemKind::kSI:
      Require(bg.si.has_value(), "save: no SI set");
      SavePbmSet((fs::path(dir) / "SI").string(), *bg.si);
      return;
    case SystemKind::kSD:
      for (const auto &[spk, set] : bg.sd) SavePbmSet((fs::path(dir) / "SD" / spk).string(), set);
      return;
  }
}

Backgrounds LoadBackgrounds(const std::string &dir, SystemKind kind, const AcousticModel &ubm) {
  Backgrounds bg;
  bg.kind = kind;
  if (kind == SystemKind::kSI) {
    bg.si = LoadPbmSet((fs::path(dir) / "SI").string(), ubm);
  } else if (kind == SystemKind::kSD) {
    fs::path root = fs::path(dir) / "SD";
    Require(fs::is_directory(root), "no SD PBM sets under " + dir);
    std::vector<std::string> speakers;
    for (const auto &e : fs::directory_iterator(root))
      if (e.is_directory()) speakers.push_back(e.path().filename().string());
    std::sort(speakers.begin(), speakers.end());
    for (const auto &spk : speakers) {
      PbmSet set = LoadPbmSet((root / spk).string(), ubm);
      Require(set.owner() == spk, "SD PBM set under " + spk + " belongs to another speaker");
      bg.sd.emplace(spk, std::move(set));
    }
  }
  return bg;
}

void SaveSpeakerModels(const std::string &dir, const std::map<std::string, SpeakerModel> &models) {
  std::string index;
  for (const auto &[id, m] : models) {
    fs::path rel = fs::path(m.speaker_id) / (m.phrase_id + ".mdl");
    SaveModel((fs::path(dir) / rel).string(), m.model);
    index += id + " " + rel.string() + " " + ModelHash(m.model) + " " + m.source_hash + "\n";
  }
  WriteFileAtomic((fs::path(dir) / "models").string(), index);
}

std::map<std::string, SpeakerModel> LoadSpeakerModels(const std::string &dir,
                                                      const AcousticModel &ubm,
                                                      const Backgrounds &bg) {
  const std::string index_path = (fs::path(dir) / "models").string();
  std::istringstream in(ReadFile(index_path));
  const std::string ubm_hash = ModelHash(ubm);
  std::map<std::string, SpeakerModel> models;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string id, rel, hash, source;
    if (!(ss >> id)) continue;
    if (!(ss >> rel >> hash >> source))
      throw ValidationError(index_path + ":" + std::to_string(lineno) + ": malformed line");
    auto [spk, phrase] = SplitModelId(id);
    SpeakerModel m;
    m.speaker_id = spk;
    m.phrase_id = phrase;
    m.model = LoadModel((fs::path(dir) / rel).string());
    if (ModelHash(m.model) != hash)
      throw ValidationError(index_path + ": model " + id + " does not match its recorded hash");
    const PbmSet *set = bg.For(spk);
    const std::string expected = set ? set->Hash() : ubm_hash;
    if (source != expected)
      throw ValidationError(index_path + ": model " + id +
                            " was enrolled from a different background model");
    m.source_hash = source;
    if (set) m.source_phrase = phrase;
    models.emplace(id, std::move(m));
  }
  return models;
}

void SaveIvectorBackend(const std::string &dir, const IvectorBackend &backend) {
  fs::create_directories(dir);
  SaveTvSpace((fs::path(dir) / "tv.bin").string(), backend.tv);
  SaveSph((fs::path(dir) / "sph.bin").string(), backend.sph);
  SavePlda((fs::path(dir) / "plda.bin").string(), backend.plda);
}

IvectorBackend LoadIvectorBackend(const std::string &dir, const DiagGmm &ubm) {
  IvectorBackend b;
  b.ubm = ubm;
  const std::string hash = GmmHash(ubm);
  b.tv = LoadTvSpace((fs::path(dir) / "tv.bin").string(), hash);
  b.sph = LoadSph((fs::path(dir) / "sph.bin").string(), hash);
  b.plda = LoadPlda((fs::path(dir) / "plda.bin").string(), hash);
  b.Validate();
  return b;
}

std::string CompareSystems(const ScoreSet &a, const ScoreSet &b, const TrialList &trials,
                           const DcfParams &dcf) {
  auto ra = BreakdownByNontarget(a, trials, dcf);
  auto rb = BreakdownByNontarget(b, trials, dcf);
  auto diff = LlrDifferenceReport(a, b, trials);
  const std::string na = a.system_id().empty() ? "A" : a.system_id();
  const std::string nb = b.system_id().empty() ? "B" : b.system_id();
  std::string text = "Non-target type [%EER/(MinDCF x 100)]: " + na + " vs " + nb + "\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-18s %16s %16s %10s %10s %14s\n", "nontarget", "A", "B",
                "dEER", "dDCFx100", "lower_in_B(%)");
  text += buf;
  for (TrialLabel l : NontargetLabels()) {
    if (!ra.count(l) || !rb.count(l)) continue;
    char ca[64], cb[64];
    std::snprintf(ca, sizeof(ca), "%.2f/%.3f", 100 * ra[l].eer, 100 * ra[l].min_dcf);
    std::snprintf(cb, sizeof(cb), "%.2f/%.3f", 100 * rb[l].eer, 100 * rb[l].min_dcf);
    std::snprintf(buf, sizeof(buf), "%-18s %16s %16s %+10.2f %+10.3f %14.2f\n",
                  LabelName(l).c_str(), ca, cb, 100 * (rb[l].eer - ra[l].eer),
                  100 * (rb[l].min_dcf - ra[l].min_dcf), 100 * diff[l].fraction);
    text += buf;
  }
  if (diff.count(TrialLabel::kTarget)) {
    std::snprintf(buf, sizeof(buf), "%-18s %16s %16s %10s %10s %14.2f\n", "target", "-", "-", "-",
                  "-", 100 * diff[TrialLabel::kTarget].fraction);
    text += buf;
  }
  return text;
}

namespace {

using Clock = std::chrono::steady_clock;

class StageLog {
 public:
  explicit StageLog(bool verbose) : verbose_(verbose) {}
  void Begin(const std::string &stage) {
    stage_ = stage;
    start_ = Clock::now();
  }
  void End() {
    if (!verbose_) return;
    double s = std::chrono::duration<double>(Clock::now() - start_).count();
    std::fprintf(stderr, "[%s] done in %.1f s\n", stage_.c_str(), s);
  }
  const std::string &stage() const { return stage_; }

 private:
  bool verbose_;
  std::string stage_;
  Clock::time_point start_;
};

template <class E>
[[noreturn]] void Rethrow(const StageLog &log, const E &e) {
  throw E("stage " + log.stage() + ": " + e.what());
}

}  // namespace

PipelineResult RunPipeline(const PipelineConfig &cfg, bool verbose) {
  cfg.Validate();
  Require(!cfg.manifest.empty(), "run: paths.manifest is not set");
  Require(!cfg.workdir.empty(), "run: paths.workdir is not set");
  const fs::path w(cfg.workdir);
  fs::create_directories(w);
  WriteFileAtomic((w / "config.txt").string(), cfg.ToText());
  PipelineResult res;
  StageLog log(verbose);
  try {
    log.Begin("features");
    CorpusManifest manifest = LoadManifest(cfg.manifest);
    Corpus corpus = Corpus::Load(manifest, cfg.features);
    WriteStageMeta((w / "features.meta").string(),
                   {{"input", Sha256Hex(ReadFile(cfg.manifest) + cfg.SectionText({"features."}))},
                    {"output", corpus.Hash()}});
    log.End();

    log.Begin("train-ubm");
    const std::string ubm_input =
        Sha256Hex(corpus.Hash() + cfg.SectionText({"ubm.", "hmm."}));
    AcousticModel ubm = TrainBackgroundModel(cfg, corpus);
    res.ubm_hash = ModelHash(ubm);
    SaveModel((w / "ubm" / "ubm.mdl").string(), ubm);
    WriteStageMeta((w / "ubm" / "meta").string(), {{"input", ubm_input}, {"output", res.ubm_hash}});
    log.End();

    std::optional<IvectorBackend> backend;
    if (cfg.ivector_enabled) {
      log.Begin("train-ivector");
      backend = TrainIvectorBackend(cfg, corpus, std::get<DiagGmm>(ubm));
      SaveIvectorBackend((w / "ivector").string(), *backend);
      WriteStageMeta((w / "ivector" / "meta").string(),
                     {{"input", Sha256Hex(res.ubm_hash + corpus.Hash() + cfg.SectionText({"ivector."}))},
                      {"tv", TvSpaceHash(backend->tv)},
                      {"ubm", res.ubm_hash}});
      log.End();
    }

    log.Begin("make-trials");
    TrialList trials = cfg.trials.empty() ? MakeAllTrials(manifest) : LoadTrials(cfg.trials, manifest);
    Require(!trials.empty(), "run: no trials");
    WriteTrials((w / "trials.txt").string(), trials);
    log.End();

    std::vector<SystemKind> kinds = {SystemKind::kBaseline};
    kinds.insert(kinds.end(), cfg.pbm_systems.begin(), cfg.pbm_systems.end());
    std::map<std::string, std::string> baseline_of;
    for (SystemKind kind : kinds) {
      log.Begin(std::string("build-pbm ") + SystemKindName(kind));
      Backgrounds bg;
      bg.kind = kind;
      if (kind == SystemKind::kSI) bg.si = BuildSiSet(cfg, corpus, ubm);
      if (kind == SystemKind::kSD)
        bg.sd = BuildSdSets(cfg, corpus, ubm, (w / "pbm" / "sd-cache").string());
      SaveBackgrounds((w / "pbm").string(), bg);
      log.End();

      std::vector<bool> paths = {false};
      if (backend) paths.push_back(true);
      for (bool iv : paths) {
        const std::string id = SystemId(cfg.family, iv, kind);
        log.Begin("enroll+score " + id);
        ScoreSet scores;
        if (!iv) {
          auto models = EnrollAcoustic(cfg, corpus, ubm, bg);
          SaveSpeakerModels((w / "enroll" / id).string(), models);
          scores = ScoreAcoustic(id, corpus, trials, ubm, bg, models);
        } else {
          auto models = EnrollIvectors(corpus, *backend, bg);
          std::vector<IVector> arc;
          for (const auto &kv : models) arc.push_back(kv.second);
          SaveIvectors((w / "enroll" / (id + ".ivec")).string(), arc);
          scores = ScoreIvector(id, corpus, trials, *backend, bg, models);
        }
        WriteScores((w / "scores" / (id + ".scores")).string(), scores);
        if (kind == SystemKind::kSI) res.pbm_hashes[id] = bg.si->Hash();
        if (kind != SystemKind::kBaseline) {
          res.phrase_accuracy[id] = PhraseIdAccuracy(scores, trials, manifest);
          const std::string base = SystemId(cfg.family, iv, SystemKind::kBaseline);
          res.llr_difference[id] = LlrDifferenceReport(res.scores.at(base), scores, trials);
          baseline_of[id] = base;
        }
        auto rows = MakeReport(id, BreakdownByNontarget(scores, trials, cfg.dcf));
        res.report.insert(res.report.end(), rows.begin(), rows.end());
        res.systems.push_back(id);
        res.scores.emplace(id, std::move(scores));
        log.End();
      }
    }

    log.Begin("evaluate");
    WriteFileAtomic((w / "report.tsv").string(), FormatReportTsv(res.report));
    std::string text = FormatReportTable(res.report);
    if (!res.phrase_accuracy.empty()) {
      text += "\nPass-phrase identification accuracy (%)\n";
      char buf[160];
      for (const auto &[id, acc] : res.phrase_accuracy) {
        std::snprintf(buf, sizeof(buf), "%-20s %.2f\n", id.c_str(), 100 * acc);
        text += buf;
      }
    }
    WriteFileAtomic((w / "report.txt").string(), text);
    std::string comparison;
    for (const auto &[id, base] : baseline_of)
      comparison += CompareSystems(res.scores.at(base), res.scores.at(id), trials, cfg.dcf) + "\n";
    WriteFileAtomic((w / "comparison.txt").string(), comparison);
    log.End();
  } catch (const ValidationError &e) {
    Rethrow(log, e);
  } catch (const NumericalError &e) {
    Rethrow(log, e);
  }
  return res;
}

}  // namespace pbmsv
