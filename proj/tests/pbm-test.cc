// tests/pbm-test.cc

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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "pbmsv/corpus.h"
#include "pbmsv/error.h"
#include "pbmsv/pbm.h"
#include "test-util.h"

namespace pbmsv {
namespace {

using testing::Rng;

// A small synthetic corpus and a GMM-UBM trained on its ubm split, shared
// by the tests below.
struct World {
  SyntheticCorpus corpus;
  DiagGmm ubm;
  AdaptConfig adapt;

  World() {
    SyntheticSpec spec;
    spec.num_phrases = 3;
    spec.num_speakers = 3;
    spec.num_dev_speakers = 4;
    spec.num_ubm_speakers = 6;
    spec.num_background_phrases = 4;
    spec.frames_per_utterance = 60;
    spec.dim = 4;
    spec.num_phones = 8;
    spec.phones_per_phrase = 4;
    spec.seed = 7;
    corpus = GenerateSyntheticCorpus(spec);
    GmmTrainConfig cfg;
    cfg.num_components = 8;
    ubm = TrainUbm(Refs("ubm"), cfg);
  }

  UtteranceRefs Refs(const std::string &split, const std::string &speaker = "",
                     const std::string &phrase = "") const {
    UtteranceRefs out;
    const auto &utts = corpus.manifest.utterances();
    for (size_t i = 0; i < utts.size(); ++i)
      if (utts[i].split == split && (speaker.empty() || utts[i].speaker_id == speaker) &&
          (phrase.empty() || utts[i].phrase_id == phrase))
        out.push_back(std::cref(corpus.features[i]));
    return out;
  }

  PhraseGroups Groups(const std::string &split, const std::string &speaker = "") const {
    PhraseGroups g;
    for (const FeatureMatrix &u : Refs(split, speaker)) g[u.phrase_id].push_back(std::cref(u));
    return g;
  }
};

const World &TheWorld() {
  static const World w;
  return w;
}

const DiagGmm &Gmm(const AcousticModel &m) { return std::get<DiagGmm>(m); }

double MeanShift(const DiagGmm &a, const DiagGmm &b) {
  return (a.means() - b.means()).rowwise().norm().maxCoeff();
}

TEST_CASE("SI PBMs adapt one model per phrase, means only") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  CHECK(si.size() == 3);
  CHECK(si.flavor() == PbmFlavor::kSI);
  CHECK_FALSE(si.owner().has_value());
  CHECK(si.family() == ModelFamily::kGmm);
  CHECK(si.PhraseIds() == std::vector<std::string>{"p000", "p001", "p002"});
  for (const auto &[phrase, m] : si.entries()) {
    CHECK(Gmm(m).weights() == w.ubm.weights());
    CHECK(Gmm(m).variances() == w.ubm.variances());
    // Each entry is exactly the relevance-MAP of the UBM on that phrase.
    MapConfig mc;
    DiagGmm oracle = MapAdapt(w.ubm, w.Groups("dev").at(phrase), mc);
    CHECK(Gmm(m).means() == oracle.means());
  }
}

TEST_CASE("A PBM adapted on the UBM's own data stays close to the UBM") {
  const World &w = TheWorld();
  PhraseGroups g;
  g["all"] = w.Refs("ubm");
  PbmSet self = BuildSiPbms(w.ubm, g, w.adapt);
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  double own = MeanShift(Gmm(self.Entry("all")), w.ubm);
  double other = MeanShift(Gmm(si.Entry("p000")), w.ubm);
  CHECK(own < 0.1 * other);
}

TEST_CASE("PBMs of different phrases differ by more than resampling jitter") {
  const World &w = TheWorld();
  PhraseGroups split_a, split_b;
  for (const auto &[phrase, utts] : w.Groups("dev"))
    for (size_t i = 0; i < utts.size(); ++i) (i % 2 ? split_b : split_a)[phrase].push_back(utts[i]);
  PbmSet a = BuildSiPbms(w.ubm, split_a, w.adapt);
  PbmSet b = BuildSiPbms(w.ubm, split_b, w.adapt);
  for (const std::string &p : a.PhraseIds()) {
    double jitter = (Gmm(a.Entry(p)).means() - Gmm(b.Entry(p)).means()).norm();
    for (const std::string &q : a.PhraseIds()) {
      if (q == p) continue;
      double between = (Gmm(a.Entry(p)).means() - Gmm(a.Entry(q)).means()).norm();
      CHECK(between > jitter);
    }
  }
}

TEST_CASE("PBM construction rejects empty phrase groups") {
  const World &w = TheWorld();
  PhraseGroups g = w.Groups("dev");
  g["p001"].clear();
  CHECK_THROWS_AS(BuildSiPbms(w.ubm, g, w.adapt), ValidationError);
  FeatureMatrix empty;
  empty.frames.resize(0, 4);
  PhraseGroups z;
  z["p000"] = {std::cref(empty)};
  CHECK_THROWS_AS(BuildSiPbms(w.ubm, z, w.adapt), ValidationError);
  CHECK_THROWS_AS(BuildSiPbms(w.ubm, PhraseGroups{}, w.adapt), ValidationError);
}

TEST_CASE("SD PBMs without target data are the SI PBMs") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  PbmSet sd = BuildSdPbms(w.ubm, w.Groups("dev"), PhraseGroups{}, "spk000", w.adapt);
  CHECK(sd.flavor() == PbmFlavor::kSD);
  CHECK(sd.owner() == std::optional<std::string>("spk000"));
  for (const std::string &p : si.PhraseIds()) {
    CHECK(Gmm(sd.Entry(p)).means() == Gmm(si.Entry(p)).means());
    CHECK(ModelHash(sd.Entry(p)) == ModelHash(si.Entry(p)));
  }
}

TEST_CASE("SD PBMs pool development data with the target's own") {
  const World &w = TheWorld();
  PhraseGroups target = w.Groups("enroll", "spk001");
  target.erase("p002");
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  PbmSet sd = BuildSdPbms(w.ubm, w.Groups("dev"), target, "spk001", w.adapt);
  CHECK(ModelHash(sd.Entry("p002")) == ModelHash(si.Entry("p002")));
  UtteranceRefs pooled = w.Groups("dev").at("p000");
  for (auto u : target.at("p000")) pooled.push_back(u);
  CHECK(Gmm(sd.Entry("p000")).means() == MapAdapt(w.ubm, pooled, MapConfig()).means());
  CHECK(ModelHash(sd.Entry("p000")) != ModelHash(si.Entry("p000")));

  PhraseGroups unknown;
  unknown["zzz"] = target.at("p000");
  CHECK_THROWS_WITH_AS(BuildSdPbms(w.ubm, w.Groups("dev"), unknown, "spk001", w.adapt),
                       doctest::Contains("no development data"), ValidationError);
}

TEST_CASE("Target-dominated SD PBMs move towards the target") {
  const World &w = TheWorld();
  PhraseGroups dev;
  dev["p000"] = {w.Groups("dev").at("p000").front()};
  PhraseGroups target;
  const UtteranceRefs own = w.Refs("enroll", "spk000", "p000");
  for (int copy = 0; copy < 20; ++copy)
    for (auto u : own) target["p000"].push_back(u);
  PbmSet si = BuildSiPbms(w.ubm, dev, w.adapt);
  PbmSet sd = BuildSdPbms(w.ubm, dev, target, "spk000", w.adapt);
  // Average log likelihood of the target's test data goes up.
  for (const FeatureMatrix &y : w.Refs("test", "spk000", "p000"))
    CHECK(AvgLogLikelihood(Gmm(sd.Entry("p000")), y) > AvgLogLikelihood(Gmm(si.Entry("p000")), y));
}

TEST_CASE("Enrollment adapts the chosen PBM and never touches the set") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  const std::string before = si.Hash();
  UtteranceRefs train = w.Refs("enroll", "spk000", "p001");
  SpeakerModel sm = EnrollTarget(si, "p001", train, w.adapt, "spk000");
  CHECK(si.Hash() == before);
  CHECK(sm.speaker_id == "spk000");
  CHECK(sm.phrase_id == "p001");
  CHECK(sm.source_hash == si.Hash());
  CHECK(sm.source_phrase == "p001");
  CHECK(Gmm(sm.model).means() == MapAdapt(Gmm(si.Entry("p001")), train, MapConfig()).means());
  CHECK(Gmm(sm.model).variances() == Gmm(si.Entry("p001")).variances());
  CHECK_THROWS_WITH_AS(EnrollTarget(si, "p009", train, w.adapt), doctest::Contains("unknown phrase"),
                       ValidationError);
  CHECK_THROWS_AS(EnrollTarget(si, "p001", UtteranceRefs{}, w.adapt), ValidationError);
}

TEST_CASE("Enrolling on the PBM's own data moves less than building the PBM did") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  SpeakerModel sm = EnrollTarget(si, "p000", w.Groups("dev").at("p000"), w.adapt);
  CHECK(MeanShift(Gmm(sm.model), Gmm(si.Entry("p000"))) <
        MeanShift(Gmm(si.Entry("p000")), w.ubm));
}

TEST_CASE("Single-frame enrollment moves components by their occupancy") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  FeatureMatrix one;
  one.frames = w.Refs("enroll", "spk002", "p002").front().get().frames.topRows(1);
  AdaptConfig cfg;
  cfg.iterations = 1;
  SpeakerModel sm = EnrollTarget(si, "p002", UtteranceRefs{std::cref(one)}, cfg);
  const DiagGmm &prior = Gmm(si.Entry("p002"));
  Vector post = prior.ComponentPosteriors(one.frames.row(0).transpose());
  for (int c = 0; c < prior.NumComponents(); ++c) {
    RowVector expect = prior.means().row(c) +
                       post(c) * (one.frames.row(0) - prior.means().row(c)) / (post(c) + 10.0);
    CHECK((Gmm(sm.model).means().row(c) - expect).norm() < 1e-12);
  }
}

TEST_CASE("PBM selection is the maximum likelihood entry") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  int correct = 0, total = 0;
  for (const FeatureMatrix &y : w.Refs("test")) {
    PbmSelection sel = SelectPbm(si, y);
    std::string best;
    double best_ll = -1e300;
    for (const std::string &p : si.PhraseIds()) {
      double ll = AvgLogLikelihood(Gmm(si.Entry(p)), y);
      CHECK(sel.all.at(p) == ll);
      if (ll > best_ll) {
        best_ll = ll;
        best = p;
      }
    }
    CHECK(sel.phrase_id == best);
    CHECK(sel.score == best_ll);
    correct += sel.phrase_id == y.phrase_id;
    ++total;
  }
  CHECK(correct >= 0.9 * total);
}

TEST_CASE("PBM selection ignores frame order") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  Rng rng(5);
  for (const FeatureMatrix &y : w.Refs("test", "spk000")) {
    FeatureMatrix shuffled = y;
    std::vector<int> order(y.NumFrames());
    for (int i = 0; i < y.NumFrames(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < y.NumFrames(); ++i) shuffled.frames.row(i) = y.frames.row(order[i]);
    CHECK(SelectPbm(si, shuffled).phrase_id == SelectPbm(si, y).phrase_id);
  }
}

TEST_CASE("PBM selection tie-break and degenerate sets") {
  const World &w = TheWorld();
  std::map<std::string, AcousticModel> same = {{"b", w.ubm}, {"a", w.ubm}, {"c", w.ubm}};
  PbmSet ties(w.ubm, same, PbmFlavor::kSI);
  const FeatureMatrix &y = w.Refs("test").front();
  CHECK(SelectPbm(ties, y).phrase_id == "a");
  PbmSet single(w.ubm, {{"only", w.ubm}}, PbmFlavor::kSI);
  CHECK(SelectPbm(single, y).phrase_id == "only");
  FeatureMatrix empty;
  empty.frames.resize(0, 4);
  CHECK_THROWS_AS(SelectPbm(single, empty), ValidationError);
}

TEST_CASE("Trial scoring uses the selected PBM as the alternative") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  SpeakerModel sm = EnrollTarget(si, "p000", w.Refs("enroll", "spk000", "p000"), w.adapt);
  for (const FeatureMatrix &y : w.Refs("test")) {
    TrialScore ts = ScoreTrial(sm, si, y);
    CHECK(ts.selected_phrase == SelectPbm(si, y).phrase_id);
    CHECK(ts.llr == AvgLlr(Gmm(sm.model), Gmm(si.Entry(ts.selected_phrase)), y));
    for (const std::string &p : si.PhraseIds())
      CHECK(ts.llr <= AvgLlr(Gmm(sm.model), Gmm(si.Entry(p)), y) + 1e-12);
    // The per-utterance evaluation path gives the same bits.
    std::map<std::string, UttEval> evals;
    for (const std::string &p : si.PhraseIds()) evals[p] = EvaluateModel(si.Entry(p), y);
    PbmSelection sel = SelectPbm(evals);
    CHECK(sel.phrase_id == ts.selected_phrase);
    CHECK(LlrFromEvals(EvaluateModel(sm.model, y), evals.at(sel.phrase_id)) == ts.llr);
  }
}

TEST_CASE("Trial scoring reductions") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  SpeakerModel copy;
  copy.model = si.Entry("p001");
  for (const FeatureMatrix &y : w.Refs("test", "spk001")) {
    TrialScore ts = ScoreTrial(copy, si, y);
    if (ts.selected_phrase == "p001") CHECK(ts.llr == 0.0);
  }
  PbmSet single(w.ubm, {{"p000", w.ubm}}, PbmFlavor::kSI);
  SpeakerModel base = EnrollBaseline(w.ubm, "p000", w.Refs("enroll", "spk000", "p000"), w.adapt);
  CHECK(base.source_hash == ModelHash(w.ubm));
  for (const FeatureMatrix &y : w.Refs("test", "spk000")) {
    double via_set = ScoreTrial(base, single, y).llr;
    double baseline = ScoreTrialBaseline(base, w.ubm, y);
    CHECK(std::abs(via_set - baseline) <= 1e-12);
    CHECK(baseline == AvgLlr(Gmm(base.model), w.ubm, y));
    SpeakerModel ubm_model;
    ubm_model.model = w.ubm;
    CHECK(ScoreTrialBaseline(ubm_model, w.ubm, y) == 0.0);
    CHECK(ModelLlr(w.ubm, base.model, y) == -baseline);
  }
}

TEST_CASE("Right phrase outscores wrong phrase for the same voice") {
  const World &w = TheWorld();
  PbmSet si = BuildSiPbms(w.ubm, w.Groups("dev"), w.adapt);
  int wins = 0, pairs = 0;
  for (const std::string spk : {"spk000", "spk001", "spk002"}) {
    SpeakerModel sm = EnrollTarget(si, "p000", w.Refs("enroll", spk, "p000"), w.adapt);
    auto right = w.Refs("test", spk, "p000");
    auto wrong = w.Refs("test", spk, "p001");
    for (size_t i = 0; i < std::min(right.size(), wrong.size()); ++i) {
      wins += ScoreTrial(sm, si, right[i]).llr > ScoreTrial(sm, si, wrong[i]).llr;
      ++pairs;
    }
  }
  CHECK(wins == pairs);
}

TEST_CASE("PbmSet invariants") {
  const World &w = TheWorld();
  CHECK_THROWS_AS(PbmSet(w.ubm, {}, PbmFlavor::kSI), ValidationError);
  CHECK_THROWS_AS(PbmSet(w.ubm, {{"a", w.ubm}}, PbmFlavor::kSD), ValidationError);
  CHECK_THROWS_AS(PbmSet(w.ubm, {{"a", w.ubm}}, PbmFlavor::kSI, "spk"), ValidationError);
  Rng rng(3);
  DiagGmm other = testing::RandomGmm(&rng, 4, 4);
  CHECK_THROWS_AS(PbmSet(w.ubm, {{"a", other}}, PbmFlavor::kSI), ValidationError);
  HmmModel h(Matrix::Ones(1, 1), {w.ubm});
  CHECK_THROWS_AS(PbmSet(w.ubm, {{"a", h}}, PbmFlavor::kSI), ValidationError);
  SpeakerModel sm;
  sm.model = h;
  PbmSet si(w.ubm, {{"a", w.ubm}}, PbmFlavor::kSI);
  CHECK_THROWS_AS(ScoreTrial(sm, si, w.Refs("test").front()), ValidationError);
}

TEST_CASE("HMM PBMs adapt transitions, HMM targets do not") {
  const World &w = TheWorld();
  HmmTrainConfig cfg;
  cfg.num_states = 3;
  cfg.components_per_state = 2;
  cfg.bw_iterations = 2;
  HmmModel ubm = TrainHmmUbm(w.Refs("ubm"), cfg);
  PbmSet si = BuildSiPbms(ubm, w.Groups("dev"), w.adapt);
  CHECK(si.family() == ModelFamily::kHmm);
  const HmmModel &pbm = std::get<HmmModel>(si.Entry("p000"));
  CHECK(pbm.transitions() != ubm.transitions());
  SpeakerModel sm = EnrollTarget(si, "p000", w.Refs("enroll", "spk000", "p000"), w.adapt);
  CHECK(std::get<HmmModel>(sm.model).transitions() == pbm.transitions());
  const FeatureMatrix &y = w.Refs("test", "spk000", "p000").front();
  TrialScore ts = ScoreTrial(sm, si, y);
  CHECK(ts.llr == HmmLlr(std::get<HmmModel>(sm.model),
                         std::get<HmmModel>(si.Entry(ts.selected_phrase)), y));
  CHECK(SelectPbm(si, y).all.at("p001") == ViterbiLogLik(std::get<HmmModel>(si.Entry("p001")), y));

  AdaptConfig keep;
  keep.hmm_pbm_update_transitions = false;
  PbmSet fixed = BuildSiPbms(ubm, w.Groups("dev"), keep);
  CHECK(std::get<HmmModel>(fixed.Entry("p000")).transitions() == ubm.transitions());
}

TEST_CASE("PBM sets round-trip through disk and check their provenance") {
  const World &w = TheWorld();
  testing::ScratchDir dir("pbmset");
  PbmSet sd = BuildSdPbms(w.ubm, w.Groups("dev"), w.Groups("enroll", "spk000"), "spk000", w.adapt);
  SavePbmSet(dir.Path("sd"), sd);
  PbmSet back = LoadPbmSet(dir.Path("sd"), w.ubm);
  CHECK(back.Hash() == sd.Hash());
  CHECK(back.owner() == sd.owner());
  CHECK(back.flavor() == PbmFlavor::kSD);

  Rng rng(4);
  DiagGmm other = testing::RandomGmm(&rng, 8, 4);
  CHECK_THROWS_WITH_AS(LoadPbmSet(dir.Path("sd"), other), doctest::Contains("different background"),
                       ValidationError);
  SaveModel(dir.Path("sd/p001.mdl"), w.ubm);
  CHECK_THROWS_WITH_AS(LoadPbmSet(dir.Path("sd"), w.ubm), doctest::Contains("recorded hash"),
                       ValidationError);
}

TEST_CASE("Model files detect their family") {
  const World &w = TheWorld();
  testing::ScratchDir dir("models");
  HmmModel h(Matrix::Ones(1, 1), {w.ubm});
  SaveModel(dir.Path("g.mdl"), w.ubm);
  SaveModel(dir.Path("h.mdl"), h);
  CHECK(FamilyOf(LoadModel(dir.Path("g.mdl"))) == ModelFamily::kGmm);
  CHECK(FamilyOf(LoadModel(dir.Path("h.mdl"))) == ModelFamily::kHmm);
  CHECK(ModelHash(LoadModel(dir.Path("h.mdl"))) == ModelHash(h));
  std::ofstream(dir.Path("x.mdl")) << "JUNKJUNK";
  CHECK_THROWS_AS(LoadModel(dir.Path("x.mdl")), ValidationError);
  CHECK(ParseFamily("hmm") == ModelFamily::kHmm);
  CHECK_THROWS_AS(ParseFamily("dnn"), ValidationError);
  CHECK(ParseFlavor(FlavorName(PbmFlavor::kSD)) == PbmFlavor::kSD);
  CHECK_THROWS_AS(ParseFlavor("XX"), ValidationError);
}

TEST_CASE("SD cache hits, rebuilds stale entries and matches direct building") {
  const World &w = TheWorld();
  testing::ScratchDir dir("sdcache");
  PhraseGroups dev = w.Groups("dev"), target = w.Groups("enroll", "spk002");
  SdPbmCache cache(dir.Path(), w.ubm, w.adapt);
  PbmSet first = cache.BuildSet(dev, target, "spk002");
  CHECK(cache.misses() == 3);
  CHECK(cache.hits() == 0);
  PbmSet direct = BuildSdPbms(w.ubm, dev, target, "spk002", w.adapt);
  CHECK(first.Hash() == direct.Hash());

  SdPbmCache again(dir.Path(), w.ubm, w.adapt);
  PbmSet second = again.BuildSet(dev, target, "spk002");
  CHECK(again.hits() == 3);
  CHECK(second.Hash() == direct.Hash());

  target["p000"].pop_back();
  SdPbmCache stale(dir.Path(), w.ubm, w.adapt);
  PbmSet third = stale.BuildSet(dev, target, "spk002");
  CHECK(stale.misses() == 1);
  CHECK(stale.hits() == 2);
  CHECK(third.Hash() == BuildSdPbms(w.ubm, dev, target, "spk002", w.adapt).Hash());
  CHECK(std::filesystem::exists(dir.Path("spk002/p000.mdl")));
}

TEST_CASE("Ids used as file names are validated") {
  CHECK_NOTHROW(ValidateId("spk_01-a.b", "speaker id"));
  for (const std::string &bad :
       std::vector<std::string>{"", "a b", "a/b", "a:b", "a\\b", "a\tb", std::string("a\x01")})
    CHECK_THROWS_AS(ValidateId(bad, "speaker id"), ValidationError);
  const World &w = TheWorld();
  CHECK_THROWS_AS(BuildSdPbms(w.ubm, w.Groups("dev"), PhraseGroups{}, "bad/owner", w.adapt),
                  ValidationError);
}

}  // namespace
}  // namespace pbmsv
