// src/hmm-ubm.cc

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

#include "pbmsv/hmm-ubm.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pbmsv/error.h"

namespace pbmsv {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Frames whose state posterior is below this are skipped when accumulating
// emission statistics.
constexpr double kMinGamma = 1e-12;

double LogAdd(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double mx = std::max(a, b);
  return mx + std::log1p(std::exp(std::min(a, b) - mx));
}

void CheckLength(const HmmModel &hmm, long L) {
  if (L < hmm.NumStates())
    throw ValidationError("hmm: utterance of " + std::to_string(L) +
                          " frames is shorter than the " +
                          std::to_string(hmm.NumStates()) + "-state model");
}

// Emission statistics for every state, with frames weighted by their state
// posterior.
void AccumulateStates(const HmmModel &hmm, const FrameMatrix &x,
                      const Matrix &gamma, bool need_second,
                      std::vector<GmmStats> *stats) {
  const int S = hmm.NumStates();
  for (int s = 0; s < S; ++s) {
    std::vector<long> rows;
    for (long t = 0; t < x.rows(); ++t)
      if (gamma(t, s) > kMinGamma) rows.push_back(t);
    if (rows.empty()) continue;
    if (static_cast<long>(rows.size()) == x.rows()) {
      Vector w = gamma.col(s);
      (*stats)[s].Accumulate(hmm.emission(s), x, &w, need_second);
      continue;
    }
    FrameMatrix sub(static_cast<long>(rows.size()), x.cols());
    Vector w(static_cast<long>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<long>(i)) = x.row(rows[i]);
      w(static_cast<long>(i)) = gamma(rows[i], s);
    }
    (*stats)[s].Accumulate(hmm.emission(s), sub, &w, need_second);
  }
}

Matrix RenormalizedTransitions(const Matrix &counts, const Matrix &fallback) {
  Matrix a = fallback;
  for (long i = 0; i < counts.rows(); ++i) {
    double total = counts.row(i).sum();
    if (total > 0) a.row(i) = counts.row(i) / total;
  }
  return a;
}

}  // namespace

HmmModel::HmmModel(Matrix transitions, std::vector<DiagGmm> emissions)
    : transitions_(std::move(transitions)), emissions_(std::move(emissions)) {
  const long S = static_cast<long>(emissions_.size());
  Require(S >= 1, "hmm: no states");
  Require(transitions_.rows() == S && transitions_.cols() == S,
          "hmm: transition matrix shape does not match the state count");
  for (long i = 0; i < S; ++i) {
    Require(emissions_[i].Dim() == emissions_[0].Dim(),
            "hmm: emission dimensions differ between states");
    for (long j = 0; j < S; ++j) {
      double a = transitions_(i, j);
      Require(std::isfinite(a) && a >= 0.0, "hmm: invalid transition probability");
      if (j != i && j != i + 1)
        Require(a == 0.0, "hmm: transition violates the left-to-right topology");
    }
    Require(std::abs(transitions_.row(i).sum() - 1.0) <= 1e-10,
            "hmm: transition row does not sum to 1");
  }
  log_transitions_ = transitions_.array().log();
}

Matrix HmmModel::EmissionLogLikes(const FrameMatrix &x) const {
  Matrix out(x.rows(), NumStates());
  for (int s = 0; s < NumStates(); ++s) out.col(s) = emissions_[s].FrameLogLikes(x);
  return out;
}

StateOccupancy ForwardBackward(const HmmModel &hmm, const Matrix &b) {
  const long L = b.rows();
  const int S = hmm.NumStates();
  CheckLength(hmm, L);
  const Matrix &la = hmm.log_transitions();
  Matrix alpha = Matrix::Constant(L, S, kNegInf);
  Matrix beta = Matrix::Constant(L, S, kNegInf);
  alpha(0, 0) = b(0, 0);
  for (long t = 1; t < L; ++t) {
    for (int j = 0; j < S; ++j) {
      double v = alpha(t - 1, j) + la(j, j);
      if (j > 0) v = LogAdd(v, alpha(t - 1, j - 1) + la(j - 1, j));
      alpha(t, j) = v + b(t, j);
    }
  }
  beta(L - 1, S - 1) = 0.0;
  for (long t = L - 2; t >= 0; --t) {
    for (int i = 0; i < S; ++i) {
      double v = la(i, i) + b(t + 1, i) + beta(t + 1, i);
      if (i + 1 < S) v = LogAdd(v, la(i, i + 1) + b(t + 1, i + 1) + beta(t + 1, i + 1));
      beta(t, i) = v;
    }
  }
  StateOccupancy occ;
  occ.loglik = alpha(L - 1, S - 1);
  if (!std::isfinite(occ.loglik))
    throw NumericalError("hmm: non-finite forward likelihood");
  occ.gamma = (alpha + beta).array() - occ.loglik;
  occ.gamma = occ.gamma.array().exp();
  occ.transitions = Matrix::Zero(S, S);
  for (long t = 0; t + 1 < L; ++t) {
    for (int i = 0; i < S; ++i) {
      if (alpha(t, i) == kNegInf) continue;
      for (int j = i; j <= std::min(i + 1, S - 1); ++j) {
        double v = alpha(t, i) + la(i, j) + b(t + 1, j) + beta(t + 1, j) - occ.loglik;
        if (v > kNegInf) occ.transitions(i, j) += std::exp(v);
      }
    }
  }
  return occ;
}

double ViterbiScore(const HmmModel &hmm, const Matrix &b, std::vector<int> *alignment) {
  const long L = b.rows();
  const int S = hmm.NumStates();
  CheckLength(hmm, L);
  const Matrix &la = hmm.log_transitions();
  Matrix delta = Matrix::Constant(L, S, kNegInf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Zero(L, S);
  delta(0, 0) = b(0, 0);
  for (long t = 1; t < L; ++t) {
    for (int j = 0; j < S; ++j) {
      double stay = delta(t - 1, j) + la(j, j);
      double best = stay;
      int from = j;
      if (j > 0) {
        double adv = delta(t - 1, j - 1) + la(j - 1, j);
        if (adv > stay) {
          best = adv;
          from = j - 1;
        }
      }
      delta(t, j) = best + b(t, j);
      back(t, j) = from;
    }
  }
  double score = delta(L - 1, S - 1);
  if (std::isnan(score)) throw NumericalError("hmm: NaN in Viterbi score");
  if (alignment) {
    alignment->assign(L, 0);
    int s = S - 1;
    for (long t = L - 1; t >= 0; --t) {
      (*alignment)[t] = s;
      s = back(t, s);
    }
  }
  return score;
}

double ViterbiLogLik(const HmmModel &hmm, const FeatureMatrix &x, std::vector<int> *alignment) {
  Require(x.Dim() == hmm.Dim(), "hmm: feature dimension mismatch");
  CheckLength(hmm, x.NumFrames());
  return ViterbiScore(hmm, hmm.EmissionLogLikes(x.frames), alignment) / x.NumFrames();
}

double ForwardLogLik(const HmmModel &hmm, const FeatureMatrix &x) {
  Require(x.Dim() == hmm.Dim(), "hmm: feature dimension mismatch");
  return ForwardBackward(hmm, hmm.EmissionLogLikes(x.frames)).loglik;
}

double HmmLlr(const HmmModel &target, const HmmModel &background, const FeatureMatrix &x) {
  Require(target.NumStates() == background.NumStates() && target.Dim() == background.Dim(),
          "hmm llr: incompatible models");
  return ViterbiLogLik(target, x) - ViterbiLogLik(background, x);
}

void HmmTrainConfig::Validate() const {
  Require(num_states >= 1, "hmm training: need at least one state");
  Require(components_per_state >= 1 &&
              (components_per_state & (components_per_state - 1)) == 0,
          "hmm training: components per state must be a power of two");
  Require(bw_iterations >= 0, "hmm training: bw_iterations must be >= 0");
  Require(initial_self_loop > 0 && initial_self_loop < 1,
          "hmm training: initial self-loop must be in (0, 1)");
}

HmmModel TrainHmmUbm(const UtteranceRefs &corpus, const HmmTrainConfig &cfg,
                     HmmTrainTrace *trace) {
  cfg.Validate();
  Require(!corpus.empty(), "insufficient data: empty corpus");
  const int S = cfg.num_states;
  for (const FeatureMatrix &u : corpus)
    if (u.NumFrames() < S)
      throw ValidationError("hmm training: utterance '" + u.utterance_id +
                            "' is shorter than " + std::to_string(S) + " frames");
  const Vector floor = GlobalVarianceFloor(corpus, cfg.state_init.variance_floor_ratio);

  // Uniform segmentation into S chunks per utterance.
  std::vector<std::vector<FeatureMatrix>> chunks(S);
  for (const FeatureMatrix &u : corpus) {
    const long L = u.NumFrames();
    for (int s = 0; s < S; ++s) {
      long begin = s * L / S, end = (s + 1) * L / S;
      FeatureMatrix c;
      c.frames = u.frames.middleRows(begin, end - begin);
      chunks[s].push_back(std::move(c));
    }
  }
  GmmTrainConfig init = cfg.state_init;
  init.num_components = cfg.components_per_state;
  std::vector<DiagGmm> emissions;
  for (int s = 0; s < S; ++s) {
    init.seed = cfg.state_init.seed + static_cast<uint64_t>(1000 * s);
    emissions.push_back(TrainDiagGmm(RefsOf(chunks[s]), init, floor));
  }
  Matrix a = Matrix::Zero(S, S);
  for (int s = 0; s + 1 < S; ++s) {
    a(s, s) = cfg.initial_self_loop;
    a(s, s + 1) = 1.0 - cfg.initial_self_loop;
  }
  a(S - 1, S - 1) = 1.0;
  HmmModel hmm(a, std::move(emissions));

  auto estep = [&](const HmmModel &h, std::vector<GmmStats> *stats, Matrix *counts) {
    double total = 0.0;
    for (const FeatureMatrix &u : corpus) {
      StateOccupancy occ = ForwardBackward(h, h.EmissionLogLikes(u.frames));
      total += occ.loglik;
      if (stats) {
        AccumulateStates(h, u.frames, occ.gamma, true, stats);
        *counts += occ.transitions;
      }
    }
    if (!std::isfinite(total)) throw NumericalError("hmm training: non-finite likelihood");
    return total;
  };

  for (int it = 0; it < cfg.bw_iterations; ++it) {
    std::vector<GmmStats> stats;
    for (int s = 0; s < S; ++s) stats.emplace_back(cfg.components_per_state, hmm.Dim());
    Matrix counts = Matrix::Zero(S, S);
    double ll = estep(hmm, &stats, &counts);
    if (trace) trace->loglik.push_back(ll);
    std::vector<DiagGmm> updated;
    for (int s = 0; s < S; ++s) {
      if (stats[s].occupancy.sum() > 0)
        updated.push_back(MlUpdate(hmm.emission(s), stats[s], floor));
      else
        updated.push_back(hmm.emission(s));
    }
    hmm = HmmModel(RenormalizedTransitions(counts, hmm.transitions()), std::move(updated));
  }
  if (trace) trace->loglik.push_back(estep(hmm, nullptr, nullptr));
  return hmm;
}

void HmmMapConfig::Validate() const {
  Require(relevance_factor > 0, "hmm map: relevance factor must be > 0");
  Require(iterations >= 1, "hmm map: iterations must be >= 1");
}

HmmModel MapAdaptHmm(const HmmModel &prior, const UtteranceRefs &data,
                     const HmmMapConfig &cfg) {
  cfg.Validate();
  Require(!data.empty() && TotalFrames(data) > 0, "hmm map: empty adaptation data");
  const int S = prior.NumStates();
  MapConfig gcfg;
  gcfg.relevance_factor = cfg.relevance_factor;
  gcfg.iterations = 1;
  HmmModel cur = prior;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<GmmStats> stats;
    for (int s = 0; s < S; ++s)
      stats.emplace_back(prior.emission(s).NumComponents(), prior.Dim());
    Matrix counts = Matrix::Zero(S, S);
    for (const FeatureMatrix &u : data) {
      Require(u.Dim() == prior.Dim(), "hmm map: feature dimension mismatch");
      StateOccupancy occ = ForwardBackward(cur, cur.EmissionLogLikes(u.frames));
      AccumulateStates(cur, u.frames, occ.gamma, false, &stats);
      counts += occ.transitions;
    }
    std::vector<DiagGmm> emissions;
    for (int s = 0; s < S; ++s) emissions.push_back(MapUpdate(prior.emission(s), stats[s], gcfg));
    Matrix a = prior.transitions();
    if (cfg.update_transitions) {
      const double r = cfg.relevance_factor;
      for (int i = 0; i < S; ++i) {
        double n_i = counts.row(i).sum();
        for (int j = 0; j < S; ++j)
          a(i, j) = (counts(i, j) + r * prior.transitions()(i, j)) / (n_i + r);
        a.row(i) /= a.row(i).sum();
      }
    }
    cur = HmmModel(a, std::move(emissions));
  }
  return cur;
}

void WriteHmm(BinaryWriter *out, const HmmModel &hmm) {
  out->Magic("PBMH");
  out->U32(1);
  out->U32(static_cast<uint32_t>(hmm.NumStates()));
  out->Mat(hmm.transitions());
  for (const DiagGmm &g : hmm.emissions()) WriteGmm(out, g);
}

HmmModel ReadHmm(BinaryReader *in) {
  in->ExpectMagic("PBMH");
  uint32_t version = in->U32();
  Require(version == 1, "hmm: unsupported version " + std::to_string(version));
  long S = in->U32();
  Matrix a = in->Mat(S, S);
  std::vector<DiagGmm> emissions;
  for (long s = 0; s < S; ++s) emissions.push_back(ReadGmm(in));
  return HmmModel(a, std::move(emissions));
}

void SaveHmm(const std::string &path, const HmmModel &hmm) {
  BinaryWriter out;
  WriteHmm(&out, hmm);
  WriteFileAtomic(path, out.bytes());
}

HmmModel LoadHmm(const std::string &path) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "hmm file " + path);
  HmmModel h = ReadHmm(&in);
  in.ExpectEnd();
  return h;
}

std::string HmmHash(const HmmModel &hmm) {
  BinaryWriter out;
  WriteHmm(&out, hmm);
  return Sha256Hex(out.bytes());
}

}  // namespace pbmsv
