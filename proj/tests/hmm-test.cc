// tests/hmm-test.cc

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

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "doctest.h"
#include "pbmsv/diag-gmm.h"
#include "pbmsv/error.h"
#include "pbmsv/hmm-ubm.h"
#include "test-util.h"

namespace pbmsv {
namespace {

using testing::Rng;

TEST_CASE("Viterbi matches exhaustive path enumeration") {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    int S = testing::UniformInt(&rng, 1, 3);
    int L = testing::UniformInt(&rng, S, 8);
    HmmModel h = testing::RandomHmm(&rng, S, testing::UniformInt(&rng, 1, 3), 2);
    FeatureMatrix x = testing::RandomUtt(&rng, L, 2, 2.0);
    Matrix b = h.EmissionLogLikes(x.frames);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> best_path;
    double total = -std::numeric_limits<double>::infinity();
    testing::EnumeratePaths(L, S, [&](const std::vector<int> &p) {
      double v = testing::PathScore(h, b, p);
      if (v > best) {
        best = v;
        best_path = p;
      }
      double mx = std::max(total, v);
      total = mx + std::log(std::exp(total - mx) + std::exp(v - mx));
    });
    std::vector<int> align;
    double score = ViterbiScore(h, b, &align);
    CHECK(std::abs(score - best) < 1e-10);
    CHECK(align == best_path);
    CHECK(ViterbiLogLik(h, x) == doctest::Approx(best / L).epsilon(1e-12));
    double fwd = ForwardLogLik(h, x);
    CHECK(std::abs(fwd - total) < 1e-10);
    CHECK(score <= fwd + 1e-12);
  }
}

TEST_CASE("Single state with a certain self-loop is the GMM average") {
  Rng rng(42);
  DiagGmm g = testing::RandomGmm(&rng, 4, 3);
  HmmModel h(Matrix::Ones(1, 1), {g});
  FeatureMatrix x = testing::RandomUtt(&rng, 37, 3);
  CHECK(ViterbiLogLik(h, x) == doctest::Approx(AvgLogLikelihood(g, x)).epsilon(1e-12));
}

TEST_CASE("Viterbi on duplicated frames stays finite") {
  Rng rng(43);
  HmmModel h = testing::RandomHmm(&rng, 4, 2, 3);
  FeatureMatrix x = testing::RandomUtt(&rng, 20, 3);
  FeatureMatrix twice;
  twice.frames.resize(40, 3);
  for (int t = 0; t < 20; ++t) {
    twice.frames.row(2 * t) = x.frames.row(t);
    twice.frames.row(2 * t + 1) = x.frames.row(t);
  }
  CHECK(std::isfinite(ViterbiLogLik(h, x)));
  CHECK(std::isfinite(ViterbiLogLik(h, twice)));
}

TEST_CASE("Short utterances are rejected") {
  Rng rng(44);
  HmmModel h = testing::RandomHmm(&rng, 5, 1, 2);
  FeatureMatrix x = testing::RandomUtt(&rng, 4, 2);
  CHECK_THROWS_AS(ViterbiLogLik(h, x), ValidationError);
  CHECK_THROWS_AS(HmmLlr(h, h, x), ValidationError);
  HmmTrainConfig cfg;
  cfg.num_states = 5;
  cfg.components_per_state = 1;
  CHECK_THROWS_AS(TrainHmmUbm(UtteranceRefs{std::cref(x)}, cfg), ValidationError);
  CHECK_THROWS_AS(TrainHmmUbm(UtteranceRefs{}, cfg), ValidationError);
}

TEST_CASE("Topology and row sums are enforced") {
  Rng rng(45);
  std::vector<DiagGmm> em = {testing::RandomGmm(&rng, 1, 2), testing::RandomGmm(&rng, 1, 2),
                             testing::RandomGmm(&rng, 1, 2)};
  Matrix skip = Matrix::Zero(3, 3);
  skip(0, 0) = 0.5;
  skip(0, 2) = 0.5;
  skip(1, 1) = 1.0;
  skip(2, 2) = 1.0;
  CHECK_THROWS_AS(HmmModel(skip, em), ValidationError);
  Matrix back = Matrix::Identity(3, 3);
  back(1, 1) = 0.5;
  back(1, 0) = 0.5;
  CHECK_THROWS_AS(HmmModel(back, em), ValidationError);
  Matrix loose = Matrix::Identity(3, 3);
  loose(0, 0) = 0.9;
  CHECK_THROWS_AS(HmmModel(loose, em), ValidationError);
}

TEST_CASE("HMM LLR identities") {
  Rng rng(46);
  HmmModel a = testing::RandomHmm(&rng, 3, 2, 2), b = testing::RandomHmm(&rng, 3, 2, 2);
  FeatureMatrix x = testing::RandomUtt(&rng, 30, 2);
  CHECK(HmmLlr(a, a, x) == 0.0);
  CHECK(HmmLlr(a, b, x) == -HmmLlr(b, a, x));
  HmmModel c = testing::RandomHmm(&rng, 4, 2, 2);
  CHECK_THROWS_AS(HmmLlr(a, c, x), ValidationError);
}

TEST_CASE("Data from the target HMM scores positive against a distant background") {
  Rng rng(47);
  HmmModel target = testing::RandomHmm(&rng, 4, 2, 3);
  std::vector<DiagGmm> far;
  for (const DiagGmm &g : target.emissions()) {
    Matrix mu = g.means();
    mu.array() += 5.0;
    far.push_back(g.WithMeans(mu));
  }
  HmmModel background(target.transitions(), far);
  double sum = 0.0;
  for (int i = 0; i < 50; ++i) sum += HmmLlr(target, background, testing::SampleHmm(&rng, target, 40));
  CHECK(sum / 50 > 0.0);
}

std::vector<FeatureMatrix> HmmCorpus(Rng *rng, const HmmModel &truth, int n, int L) {
  std::vector<FeatureMatrix> utts;
  for (int i = 0; i < n; ++i) utts.push_back(testing::SampleHmm(rng, truth, L));
  return utts;
}

void CheckStructure(const HmmModel &h) {
  for (int i = 0; i < h.NumStates(); ++i) {
    CHECK(std::abs(h.transitions().row(i).sum() - 1.0) <= 1e-10);
    for (int j = 0; j < h.NumStates(); ++j)
      if (j != i && j != i + 1) CHECK(h.transitions()(i, j) == 0.0);
  }
}

TEST_CASE("Baum-Welch likelihood never decreases and the topology holds") {
  Rng rng(48);
  HmmModel truth = testing::RandomHmm(&rng, 4, 2, 3, 3.0);
  std::vector<FeatureMatrix> utts = HmmCorpus(&rng, truth, 30, 60);
  HmmTrainConfig cfg;
  cfg.num_states = 4;
  cfg.components_per_state = 2;
  cfg.bw_iterations = 8;
  HmmTrainTrace trace;
  HmmModel h = TrainHmmUbm(RefsOf(utts), cfg, &trace);
  REQUIRE(trace.loglik.size() == 9);
  for (size_t i = 1; i < trace.loglik.size(); ++i)
    CHECK(trace.loglik[i] >= trace.loglik[i - 1] - 1e-8 * std::abs(trace.loglik[i - 1]));
  CheckStructure(h);
  CHECK(h.NumStates() == 4);
  CHECK(h.emission(0).NumComponents() == 2);
}

TEST_CASE("Identical utterances converge to uniform-duration self-loops") {
  Rng rng(49);
  HmmModel truth = testing::RandomHmm(&rng, 3, 1, 2, 6.0);
  FeatureMatrix u = testing::SampleHmm(&rng, truth, 45);
  std::vector<FeatureMatrix> utts(10, u);
  HmmTrainConfig cfg;
  cfg.num_states = 3;
  cfg.components_per_state = 1;
  cfg.bw_iterations = 15;
  HmmTrainTrace trace;
  HmmModel h = TrainHmmUbm(RefsOf(utts), cfg, &trace);
  CHECK(std::isfinite(trace.loglik.back()));
  CheckStructure(h);
}

TEST_CASE("One state reduces to GMM training") {
  Rng rng(50);
  DiagGmm truth = testing::RandomGmm(&rng, 4, 3, 3.0);
  std::vector<FeatureMatrix> utts;
  for (int i = 0; i < 6; ++i) utts.push_back(testing::SampleGmm(&rng, truth, 150));
  HmmTrainConfig hcfg;
  hcfg.num_states = 1;
  hcfg.components_per_state = 4;
  hcfg.bw_iterations = 3;
  hcfg.state_init.final_iterations = 4;
  hcfg.state_init.seed = 9;
  HmmModel h = TrainHmmUbm(RefsOf(utts), hcfg);
  GmmTrainConfig gcfg = hcfg.state_init;
  gcfg.num_components = 4;
  gcfg.final_iterations = 7;
  DiagGmm g = TrainUbm(RefsOf(utts), gcfg);
  CHECK(testing::MaxAbsDiff(h.emission(0).means(), g.means()) < 1e-6);
  CHECK(testing::MaxAbsDiff(h.emission(0).variances(), g.variances()) < 1e-6);
  CHECK((h.emission(0).weights() - g.weights()).cwiseAbs().maxCoeff() < 1e-6);
  FeatureMatrix x = testing::SampleGmm(&rng, truth, 50);
  CHECK(std::abs(ViterbiLogLik(h, x) - AvgLogLikelihood(g, x)) < 1e-6);
}

TEST_CASE("One state MAP equals GMM MAP on the pooled data") {
  Rng rng(51);
  DiagGmm g = testing::RandomGmm(&rng, 4, 2);
  HmmModel h(Matrix::Ones(1, 1), {g});
  std::vector<FeatureMatrix> data;
  for (int i = 0; i < 3; ++i) data.push_back(testing::RandomUtt(&rng, 20, 2));
  HmmMapConfig hcfg;
  HmmModel ha = MapAdaptHmm(h, RefsOf(data), hcfg);
  DiagGmm ga = MapAdapt(g, RefsOf(data), MapConfig());
  CHECK(testing::MaxAbsDiff(ha.emission(0).means(), ga.means()) < 1e-12);
  CHECK(ha.transitions() == h.transitions());
}

TEST_CASE("HMM MAP keeps the prior transitions unless asked") {
  Rng rng(52);
  HmmModel prior = testing::RandomHmm(&rng, 3, 2, 2);
  std::vector<FeatureMatrix> data = HmmCorpus(&rng, prior, 4, 30);
  HmmMapConfig cfg;
  HmmModel a = MapAdaptHmm(prior, RefsOf(data), cfg);
  CHECK(a.transitions() == prior.transitions());
  for (int s = 0; s < 3; ++s) {
    CHECK(a.emission(s).weights() == prior.emission(s).weights());
    CHECK(a.emission(s).variances() == prior.emission(s).variances());
  }
  cfg.update_transitions = true;
  HmmModel b = MapAdaptHmm(prior, RefsOf(data), cfg);
  CheckStructure(b);
  CHECK(b.transitions() != prior.transitions());
  // Interpolated counts stay between the prior and the data.
  CHECK(b.transitions()(2, 2) == 1.0);
}

TEST_CASE("HMM MAP leaves unvisited components in place") {
  Rng rng(53);
  HmmModel prior = testing::RandomHmm(&rng, 2, 2, 2);
  std::vector<DiagGmm> em = prior.emissions();
  Matrix mu = em[1].means();
  mu.row(1).setConstant(1e4);
  em[1] = em[1].WithMeans(mu);
  prior = HmmModel(prior.transitions(), em);
  std::vector<FeatureMatrix> data = {testing::RandomUtt(&rng, 30, 2)};
  HmmModel a = MapAdaptHmm(prior, RefsOf(data), HmmMapConfig());
  CHECK(a.emission(1).means().row(1) == prior.emission(1).means().row(1));
  CHECK(a.emission(1).means().row(0) != prior.emission(1).means().row(0));
}

TEST_CASE("HMM MAP rejects empty data") {
  Rng rng(54);
  HmmModel prior = testing::RandomHmm(&rng, 2, 1, 2);
  CHECK_THROWS_AS(MapAdaptHmm(prior, UtteranceRefs{}, HmmMapConfig()), ValidationError);
  HmmMapConfig bad;
  bad.relevance_factor = -1;
  FeatureMatrix x = testing::RandomUtt(&rng, 10, 2);
  CHECK_THROWS_AS(MapAdaptHmm(prior, UtteranceRefs{std::cref(x)}, bad), ValidationError);
}

TEST_CASE("HMM files round-trip") {
  testing::ScratchDir dir("hmm");
  Rng rng(55);
  HmmModel h = testing::RandomHmm(&rng, 3, 2, 2);
  SaveHmm(dir.Path("h.mdl"), h);
  HmmModel r = LoadHmm(dir.Path("h.mdl"));
  CHECK(r.transitions() == h.transitions());
  for (int s = 0; s < 3; ++s) CHECK(GmmHash(r.emission(s)) == GmmHash(h.emission(s)));
  CHECK(HmmHash(r) == HmmHash(h));
}

}  // namespace
}  // namespace pbmsv
