// src/diag-gmm.cc

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

#include "pbmsv/diag-gmm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "pbmsv/error.h"

namespace pbmsv {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr double kMinOccupancy = 1e-10;

bool IsPowerOfTwo(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

DiagGmm::DiagGmm(Vector weights, Matrix means, Matrix variances)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      variances_(std::move(variances)) {
  const long C = weights_.size();
  Require(C > 0, "gmm: no components");
  Require(means_.rows() == C && variances_.rows() == C,
          "gmm: weights/means/variances disagree on the component count");
  Require(means_.cols() > 0 && means_.cols() == variances_.cols(),
          "gmm: means/variances disagree on the dimension");
  Require(weights_.allFinite() && means_.allFinite() && variances_.allFinite(),
          "gmm: non-finite parameters");
  Require((weights_.array() >= 0.0).all(), "gmm: negative weight");
  Require(std::abs(weights_.sum() - 1.0) <= 1e-10, "gmm: weights do not sum to 1");
  Require((variances_.array() > 0.0).all(), "gmm: non-positive variance");

  const long F = means_.cols();
  inv_vars_ = variances_.cwiseInverse();
  means_invvars_ = means_.cwiseProduct(inv_vars_);
  gconsts_.resize(C);
  for (long c = 0; c < C; ++c) {
    double g = std::log(weights_(c)) - 0.5 * F * kLog2Pi;
    g -= 0.5 * variances_.row(c).array().log().sum();
    g -= 0.5 * means_.row(c).dot(means_invvars_.row(c));
    gconsts_(c) = g;
  }
}

DiagGmm DiagGmm::WithMeans(Matrix means) const {
  return DiagGmm(weights_, std::move(means), variances_);
}

void DiagGmm::CheckDim(long dim) const {
  if (dim != Dim())
    throw ValidationError("gmm: dimension mismatch (model " +
                          std::to_string(Dim()) + ", data " +
                          std::to_string(dim) + ")");
}

Vector DiagGmm::ComponentLogLikelihood(const Eigen::Ref<const Vector> &x) const {
  CheckDim(x.size());
  const long C = NumComponents(), F = Dim();
  Vector out(C);
  for (long c = 0; c < C; ++c) {
    double quad = 0.0, logdet = 0.0;
    for (long f = 0; f < F; ++f) {
      double d = x(f) - means_(c, f);
      quad += d * d / variances_(c, f);
      logdet += std::log(variances_(c, f));
    }
    out(c) = std::log(weights_(c)) - 0.5 * (F * kLog2Pi + logdet + quad);
  }
  return out;
}

Matrix DiagGmm::ComponentLogLikes(const FrameMatrix &x) const {
  CheckDim(x.cols());
  Matrix out = x * means_invvars_.transpose();
  out.noalias() -= 0.5 * (x.array().square().matrix() * inv_vars_.transpose());
  out.rowwise() += gconsts_.transpose();
  return out;
}

Vector LogSumExpRows(const Matrix &m) {
  Vector out(m.rows());
  for (long r = 0; r < m.rows(); ++r) {
    double mx = m.row(r).maxCoeff();
    if (!std::isfinite(mx)) {
      out(r) = mx;
      continue;
    }
    out(r) = mx + std::log((m.row(r).array() - mx).exp().sum());
  }
  return out;
}

double DiagGmm::LogLikelihood(const Eigen::Ref<const Vector> &x) const {
  Vector lc = ComponentLogLikelihood(x);
  double mx = lc.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((lc.array() - mx).exp().sum());
}

Vector DiagGmm::FrameLogLikes(const FrameMatrix &x) const {
  return LogSumExpRows(ComponentLogLikes(x));
}

Vector DiagGmm::ComponentPosteriors(const Eigen::Ref<const Vector> &x) const {
  Vector lc = ComponentLogLikelihood(x);
  double mx = lc.maxCoeff();
  Vector p = (lc.array() - mx).exp().matrix();
  return p / p.sum();
}

Matrix DiagGmm::Posteriors(const FrameMatrix &x, Vector *frame_loglikes) const {
  Matrix lc = ComponentLogLikes(x);
  Vector ll = LogSumExpRows(lc);
  for (long t = 0; t < lc.rows(); ++t) {
    lc.row(t) = (lc.row(t).array() - ll(t)).exp();
    // Renormalize so each row sums to 1 to machine precision.
    lc.row(t) /= lc.row(t).sum();
  }
  if (frame_loglikes) *frame_loglikes = std::move(ll);
  return lc;
}

GmmStats::GmmStats(int num_components, int dim)
    : occupancy(Vector::Zero(num_components)),
      first(Matrix::Zero(num_components, dim)),
      second(Matrix::Zero(num_components, dim)) {}

void GmmStats::Accumulate(const DiagGmm &gmm, const FrameMatrix &x,
                          const Vector *frame_weights, bool need_second) {
  if (x.rows() == 0) return;
  Vector ll;
  Matrix post = gmm.Posteriors(x, &ll);
  if (frame_weights) {
    Require(frame_weights->size() == x.rows(), "gmm stats: frame weight length mismatch");
    post = frame_weights->asDiagonal() * post;
    loglik += frame_weights->dot(ll);
    frames += frame_weights->sum();
  } else {
    loglik += ll.sum();
    frames += static_cast<double>(x.rows());
  }
  occupancy += post.colwise().sum().transpose();
  first.noalias() += post.transpose() * x;
  if (need_second) second.noalias() += post.transpose() * x.array().square().matrix();
}

void GmmStats::Add(const GmmStats &other) {
  occupancy += other.occupancy;
  first += other.first;
  second += other.second;
  loglik += other.loglik;
  frames += other.frames;
}

void GmmTrainConfig::Validate() const {
  Require(IsPowerOfTwo(num_components),
          "gmm training: component count must be a power of two");
  Require(split_iterations >= 0 && final_iterations >= 0,
          "gmm training: iteration counts must be >= 0");
  Require(variance_floor_ratio > 0, "gmm training: variance floor ratio must be > 0");
}

Vector GlobalVarianceFloor(const UtteranceRefs &data, double ratio) {
  DiagGmm g = GlobalGaussian(data, Vector());
  return ratio * g.variances().row(0).transpose();
}

DiagGmm GlobalGaussian(const UtteranceRefs &data, const Vector &var_floor) {
  Require(!data.empty(), "insufficient data");
  const long F = data.front().get().Dim();
  Vector sum = Vector::Zero(F), sum2 = Vector::Zero(F);
  double n = 0;
  for (const FeatureMatrix &u : data) {
    Require(u.Dim() == F, "gmm: utterances disagree on the feature dimension");
    sum += u.frames.colwise().sum().transpose();
    sum2 += u.frames.array().square().colwise().sum().matrix().transpose();
    n += u.NumFrames();
  }
  Require(n > 0, "insufficient data");
  Vector mean = sum / n;
  Vector var = (sum2 / n - mean.cwiseProduct(mean)).cwiseMax(0.0);
  if (var_floor.size() == F)
    var = var.cwiseMax(var_floor);
  else
    var = var.cwiseMax(1e-12);
  return DiagGmm(Vector::Ones(1), mean.transpose(), var.transpose());
}

DiagGmm SplitComponents(const DiagGmm &gmm, double perturbation, uint64_t seed) {
  const int C = gmm.NumComponents(), F = gmm.Dim();
  Vector w = gmm.weights();
  Matrix mu = gmm.means(), var = gmm.variances();

  // Re-seed collapsed components from the heaviest one.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  for (int c = 0; c < C; ++c) {
    if (w(c) > 1e-8) continue;
    Eigen::Index heavy;
    w.maxCoeff(&heavy);
    Vector dir(F);
    for (int f = 0; f < F; ++f) dir(f) = normal(rng);
    dir.normalize();
    Vector step = perturbation * var.row(heavy).cwiseSqrt().transpose().cwiseProduct(dir);
    mu.row(c) = mu.row(heavy) + step.transpose();
    mu.row(heavy) -= step.transpose();
    var.row(c) = var.row(heavy);
    w(c) = w(heavy) / 2;
    w(heavy) /= 2;
  }

  Vector w2(2 * C);
  Matrix mu2(2 * C, F), var2(2 * C, F);
  for (int c = 0; c < C; ++c) {
    Eigen::Index d;
    var.row(c).maxCoeff(&d);
    double step = perturbation * std::sqrt(var(c, d));
    for (int s = 0; s < 2; ++s) {
      int k = 2 * c + s;
      w2(k) = w(c) / 2;
      mu2.row(k) = mu.row(c);
      mu2(k, d) += s == 0 ? -step : step;
      var2.row(k) = var.row(c);
    }
  }
  w2 /= w2.sum();
  return DiagGmm(w2, mu2, var2);
}

DiagGmm MlUpdate(const DiagGmm &old, const GmmStats &stats, const Vector &var_floor) {
  const int C = old.NumComponents(), F = old.Dim();
  const double total = stats.occupancy.sum();
  if (!(total > 0)) throw NumericalError("gmm update: no occupancy");
  Vector w = stats.occupancy / total;
  Matrix mu = old.means(), var = old.variances();
  for (int c = 0; c < C; ++c) {
    const double n = stats.occupancy(c);
    if (n < kMinOccupancy) continue;
    mu.row(c) = stats.first.row(c) / n;
    var.row(c) = stats.second.row(c) / n - mu.row(c).cwiseProduct(mu.row(c));
    for (int f = 0; f < F; ++f) var(c, f) = std::max(var(c, f), var_floor(f));
  }
  if (!mu.allFinite() || !var.allFinite())
    throw NumericalError("gmm update: non-finite parameters");
  w /= w.sum();
  return DiagGmm(w, mu, var);
}

DiagGmm TrainDiagGmm(const UtteranceRefs &data, const GmmTrainConfig &cfg,
                     const Vector &var_floor, GmmTrainTrace *trace) {
  cfg.Validate();
  DiagGmm gmm = GlobalGaussian(data, var_floor);
  Require(var_floor.size() == gmm.Dim(), "gmm training: variance floor dimension mismatch");

  auto estep = [&data](const DiagGmm &g) {
    GmmStats stats(g.NumComponents(), g.Dim());
    for (const FeatureMatrix &u : data) stats.Accumulate(g, u.frames);
    if (!std::isfinite(stats.loglik))
      throw NumericalError(
          "gmm training: non-finite likelihood (check the variance floor)");
    return stats;
  };

  for (int level = 0;; ++level) {
    const bool last = gmm.NumComponents() == cfg.num_components;
    const int iters = last ? cfg.final_iterations : cfg.split_iterations;
    std::vector<double> lls;
    for (int it = 0; it < iters; ++it) {
      GmmStats stats = estep(gmm);
      lls.push_back(stats.loglik);
      gmm = MlUpdate(gmm, stats, var_floor);
    }
    if (trace) {
      lls.push_back(estep(gmm).loglik);
      trace->level_components.push_back(gmm.NumComponents());
      trace->loglik.push_back(std::move(lls));
    }
    if (last) break;
    gmm = SplitComponents(gmm, cfg.split_perturbation,
                          cfg.seed + static_cast<uint64_t>(level));
  }
  return gmm;
}

DiagGmm TrainUbm(const UtteranceRefs &corpus, const GmmTrainConfig &cfg,
                 GmmTrainTrace *trace) {
  cfg.Validate();
  const long frames = TotalFrames(corpus);
  if (corpus.empty() || frames < 10L * cfg.num_components)
    throw ValidationError("insufficient data: " + std::to_string(frames) +
                          " frames for " + std::to_string(cfg.num_components) +
                          " components");
  Vector floor = GlobalVarianceFloor(corpus, cfg.variance_floor_ratio);
  return TrainDiagGmm(corpus, cfg, floor, trace);
}

void MapConfig::Validate() const {
  Require(relevance_factor > 0, "map: relevance factor must be > 0");
  Require(iterations >= 1, "map: iterations must be >= 1");
}

DiagGmm MapUpdate(const DiagGmm &prior, const GmmStats &stats, const MapConfig &cfg) {
  const int C = prior.NumComponents(), F = prior.Dim();
  Require(stats.occupancy.size() == C && stats.first.cols() == F,
          "map: statistics do not match the prior model");
  const double r = cfg.relevance_factor;
  const Vector &n = stats.occupancy;
  Matrix mu = prior.means();
  Matrix var = prior.variances();
  Vector w = prior.weights();

  if (cfg.update_means) {
    for (int c = 0; c < C; ++c) {
      if (n(c) <= 0.0) continue;
      mu.row(c) += (stats.first.row(c) - n(c) * prior.means().row(c)) / (n(c) + r);
    }
  }
  if (cfg.update_variances) {
    for (int c = 0; c < C; ++c) {
      if (n(c) <= 0.0) continue;
      double alpha = n(c) / (n(c) + r);
      for (int f = 0; f < F; ++f) {
        double m0 = prior.means()(c, f), v0 = prior.variances()(c, f);
        double ex2 = stats.second(c, f) / n(c);
        double v = alpha * ex2 + (1 - alpha) * (v0 + m0 * m0) - mu(c, f) * mu(c, f);
        var(c, f) = std::max(v, 1e-3 * v0);
      }
    }
  }
  if (cfg.update_weights) {
    const double total = n.sum();
    if (total > 0) {
      for (int c = 0; c < C; ++c) {
        double alpha = n(c) / (n(c) + r);
        w(c) = alpha * n(c) / total + (1 - alpha) * w(c);
      }
      w /= w.sum();
    }
  }
  if (!mu.allFinite() || !var.allFinite())
    throw NumericalError("map: non-finite adapted parameters");
  return DiagGmm(w, mu, var);
}

DiagGmm MapAdapt(const DiagGmm &prior, const UtteranceRefs &data, const MapConfig &cfg) {
  cfg.Validate();
  Require(!data.empty() && TotalFrames(data) > 0, "map: empty adaptation data");
  DiagGmm cur = prior;
  for (int it = 0; it < cfg.iterations; ++it) {
    GmmStats stats(prior.NumComponents(), prior.Dim());
    for (const FeatureMatrix &u : data)
      stats.Accumulate(cur, u.frames, nullptr, cfg.update_variances);
    cur = MapUpdate(prior, stats, cfg);
  }
  return cur;
}

DiagGmm MapAdapt(const DiagGmm &prior, const FeatureMatrix &data, const MapConfig &cfg) {
  return MapAdapt(prior, UtteranceRefs{std::cref(data)}, cfg);
}

double AvgLlr(const DiagGmm &target, const DiagGmm &background, const FeatureMatrix &x) {
  Require(target.Dim() == background.Dim(), "llr: model dimension mismatch");
  Require(x.NumFrames() > 0, "llr: empty utterance");
  return AvgLlrFromFrameLogLikes(target.FrameLogLikes(x.frames),
                                 background.FrameLogLikes(x.frames));
}

double AvgLlrFromFrameLogLikes(const Vector &target, const Vector &background) {
  Require(target.size() == background.size() && target.size() > 0,
          "llr: frame count mismatch");
  double sum = 0.0;
  for (long t = 0; t < target.size(); ++t) sum += target(t) - background(t);
  return sum / static_cast<double>(target.size());
}

double AvgLogLikelihood(const DiagGmm &gmm, const FeatureMatrix &x) {
  Require(x.NumFrames() > 0, "empty utterance");
  return gmm.FrameLogLikes(x.frames).sum() / x.NumFrames();
}

void WriteGmm(BinaryWriter *out, const DiagGmm &gmm) {
  out->Magic("PBMG");
  out->U32(1);
  out->U32(static_cast<uint32_t>(gmm.NumComponents()));
  out->U32(static_cast<uint32_t>(gmm.Dim()));
  out->Vec(gmm.weights());
  out->Mat(gmm.means());
  out->Mat(gmm.variances());
}

DiagGmm ReadGmm(BinaryReader *in) {
  in->ExpectMagic("PBMG");
  uint32_t version = in->U32();
  Require(version == 1, "gmm: unsupported version " + std::to_string(version));
  long C = in->U32(), F = in->U32();
  Vector w = in->Vec(C);
  Matrix mu = in->Mat(C, F);
  Matrix var = in->Mat(C, F);
  return DiagGmm(w, mu, var);
}

void SaveGmm(const std::string &path, const DiagGmm &gmm) {
  BinaryWriter out;
  WriteGmm(&out, gmm);
  WriteFileAtomic(path, out.bytes());
}

DiagGmm LoadGmm(const std::string &path) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "gmm file " + path);
  DiagGmm g = ReadGmm(&in);
  in.ExpectEnd();
  return g;
}

std::string GmmHash(const DiagGmm &gmm) {
  BinaryWriter out;
  WriteGmm(&out, gmm);
  return Sha256Hex(out.bytes());
}

}  // namespace pbmsv
