// tests/test-util.h

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

// Small helpers shared by the unit tests: seeded generators for frames and
// models, and a scratch directory that cleans itself up.

#ifndef PBMSV_TESTS_TEST_UTIL_H_
#define PBMSV_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "pbmsv/diag-gmm.h"
#include "pbmsv/eval.h"
#include "pbmsv/hmm-ubm.h"
#include "pbmsv/types.h"

namespace pbmsv {
namespace testing {

using Rng = std::mt19937_64;

inline double Gauss(Rng *rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(*rng);
}

inline double Uniform(Rng *rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return u(*rng);
}

inline int UniformInt(Rng *rng, int lo, int hi) {
  std::uniform_int_distribution<int> u(lo, hi);
  return u(*rng);
}

inline FeatureMatrix RandomUtt(Rng *rng, int frames, int dim, double scale = 1.0,
                               const std::string &id = "u") {
  FeatureMatrix m;
  m.utterance_id = id;
  m.frames.resize(frames, dim);
  for (int t = 0; t < frames; ++t)
    for (int d = 0; d < dim; ++d) m.frames(t, d) = scale * Gauss(rng);
  return m;
}

/// Frames drawn from `gmm` itself.
inline FeatureMatrix SampleGmm(Rng *rng, const DiagGmm &gmm, int frames,
                               const std::string &id = "u") {
  std::discrete_distribution<int> pick(gmm.weights().data(),
                                       gmm.weights().data() + gmm.NumComponents());
  FeatureMatrix m;
  m.utterance_id = id;
  m.frames.resize(frames, gmm.Dim());
  for (int t = 0; t < frames; ++t) {
    int c = pick(*rng);
    for (int d = 0; d < gmm.Dim(); ++d)
      m.frames(t, d) = gmm.means()(c, d) + std::sqrt(gmm.variances()(c, d)) * Gauss(rng);
  }
  return m;
}

inline DiagGmm RandomGmm(Rng *rng, int components, int dim, double spread = 2.0) {
  Vector w(components);
  for (int c = 0; c < components; ++c) w(c) = Uniform(rng, 0.2, 1.0);
  w /= w.sum();
  Matrix mu(components, dim), var(components, dim);
  for (int c = 0; c < components; ++c)
    for (int d = 0; d < dim; ++d) {
      mu(c, d) = spread * Gauss(rng);
      var(c, d) = Uniform(rng, 0.5, 2.0);
    }
  return DiagGmm(w, mu, var);
}

/// Plain density evaluation, no log-domain shortcuts.
inline double ComponentDensity(const DiagGmm &g, int c, const Vector &x) {
  double p = 1.0;
  for (int d = 0; d < g.Dim(); ++d) {
    double v = g.variances()(c, d);
    double diff = x(d) - g.means()(c, d);
    p *= std::exp(-0.5 * diff * diff / v) / std::sqrt(2.0 * M_PI * v);
  }
  return p;
}

inline double DirectLogLikelihood(const DiagGmm &g, const Vector &x) {
  double s = 0.0;
  for (int c = 0; c < g.NumComponents(); ++c) s += g.weights()(c) * ComponentDensity(g, c, x);
  return std::log(s);
}

inline Vector DirectPosteriors(const DiagGmm &g, const Vector &x) {
  Vector p(g.NumComponents());
  for (int c = 0; c < g.NumComponents(); ++c) p(c) = g.weights()(c) * ComponentDensity(g, c, x);
  return p / p.sum();
}

inline double MaxAbsDiff(const Matrix &a, const Matrix &b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline HmmModel RandomHmm(Rng *rng, int S, int G, int F, double spread = 2.0) {
  Matrix a = Matrix::Zero(S, S);
  for (int s = 0; s + 1 < S; ++s) {
    a(s, s) = Uniform(rng, 0.2, 0.9);
    a(s, s + 1) = 1.0 - a(s, s);
  }
  a(S - 1, S - 1) = 1.0;
  std::vector<DiagGmm> em;
  for (int s = 0; s < S; ++s) em.push_back(RandomGmm(rng, G, F, spread));
  return HmmModel(a, em);
}

// Draws a state sequence from the chain (forced to reach the last state)
// and frames from the state emissions.
inline FeatureMatrix SampleHmm(Rng *rng, const HmmModel &h, int L) {
  std::vector<int> states;
  int s = 0;
  for (int t = 0; t < L; ++t) {
    int remaining = L - t;
    int needed = h.NumStates() - 1 - s;
    if (t > 0) {
      bool advance = needed >= remaining ||
                     (s + 1 < h.NumStates() && Uniform(rng, 0, 1) < h.transitions()(s, s + 1));
      if (advance) ++s;
    }
    states.push_back(s);
  }
  FeatureMatrix m;
  m.frames.resize(L, h.Dim());
  for (int t = 0; t < L; ++t) m.frames.row(t) = SampleGmm(rng, h.emission(states[t]), 1).frames.row(0);
  return m;
}

// Visits every monotone path that starts in state 0, stays or advances one
// state per frame and ends in the last state.
inline void EnumeratePaths(int L, int S, const std::function<void(const std::vector<int> &)> &visit) {
  std::vector<int> path(L, 0);
  std::function<void(int)> rec = [&](int t) {
    if (t == L) {
      if (path[L - 1] == S - 1) visit(path);
      return;
    }
    for (int step = 0; step <= 1; ++step) {
      int s = path[t - 1] + step;
      if (s >= S) continue;
      path[t] = s;
      rec(t + 1);
    }
  };
  rec(1);
}

inline double PathScore(const HmmModel &h, const Matrix &b, const std::vector<int> &path) {
  double v = b(0, path[0]);
  for (size_t t = 1; t < path.size(); ++t)
    v += std::log(h.transitions()(path[t - 1], path[t])) + b(static_cast<long>(t), path[t]);
  return v;
}

// Threshold sweep by direct counting: candidate thresholds are +inf, the
// midpoints between distinct pooled scores and -inf, scanned from the top.
struct Sweep {
  std::vector<double> p_miss, p_fa;
};

inline Sweep BruteSweep(const std::vector<double> &tar, const std::vector<double> &non) {
  std::set<double, std::greater<double>> distinct(tar.begin(), tar.end());
  distinct.insert(non.begin(), non.end());
  std::vector<double> sorted(distinct.begin(), distinct.end());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> thresholds = {inf};
  for (size_t i = 0; i + 1 < sorted.size(); ++i) thresholds.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  thresholds.push_back(-inf);
  Sweep s;
  for (double th : thresholds) {
    size_t miss = 0, fa = 0;
    for (double x : tar) miss += x < th;
    for (double x : non) fa += x > th;
    s.p_miss.push_back(static_cast<double>(miss) / tar.size());
    s.p_fa.push_back(static_cast<double>(fa) / non.size());
  }
  return s;
}

inline double BruteEer(const std::vector<double> &tar, const std::vector<double> &non) {
  Sweep s = BruteSweep(tar, non);
  for (size_t k = 1; k < s.p_miss.size(); ++k) {
    double d_k = s.p_miss[k] - s.p_fa[k];
    if (d_k > 0) continue;
    double d_p = s.p_miss[k - 1] - s.p_fa[k - 1];
    double alpha = d_p / (d_p - d_k);
    return s.p_fa[k - 1] + alpha * (s.p_fa[k] - s.p_fa[k - 1]);
  }
  return 1.0;
}

inline double BruteMinDcf(const std::vector<double> &tar, const std::vector<double> &non,
                   const DcfParams &p) {
  Sweep s = BruteSweep(tar, non);
  double best = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < s.p_miss.size(); ++k)
    best = std::min(best, p.c_miss * s.p_miss[k] * p.p_target + p.c_fa * s.p_fa[k] * (1 - p.p_target));
  return best;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string &tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pbmsv-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir &) = delete;
  ScratchDir &operator=(const ScratchDir &) = delete;

  std::string Path(const std::string &name = "") const {
    return name.empty() ? path_.string() : (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
}  // namespace pbmsv

#endif  // PBMSV_TESTS_TEST_UTIL_H_
