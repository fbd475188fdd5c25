// include/pbmsv/diag-gmm.h

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

#ifndef PBMSV_DIAG_GMM_H_
#define PBMSV_DIAG_GMM_H_

#include <cstdint>
#include <string>
#include <vector>

#include "pbmsv/binary-io.h"
#include "pbmsv/types.h"

namespace pbmsv {

/// Diagonal-covariance Gaussian mixture. Immutable once constructed; the
/// per-component normalizers are cached at construction.
class DiagGmm {
 public:
  DiagGmm() = default;
  /// Validates: weights >= 0 summing to 1 (within 1e-10), variances > 0,
  /// consistent shapes, finite entries.
  DiagGmm(Vector weights, Matrix means, Matrix variances);

  int NumComponents() const { return static_cast<int>(weights_.size()); }
  int Dim() const { return static_cast<int>(means_.cols()); }
  const Vector &weights() const { return weights_; }
  const Matrix &means() const { return means_; }
  const Matrix &variances() const { return variances_; }

  /// Same weights and variances, new means.
  DiagGmm WithMeans(Matrix means) const;

  /// log(w_c p_c(x)) for one frame, computed term by term.
  Vector ComponentLogLikelihood(const Eigen::Ref<const Vector> &x) const;
  /// L x C matrix of log(w_c p_c(x_t)) for a block of frames.
  Matrix ComponentLogLikes(const FrameMatrix &x) const;

  /// log sum_c w_c p_c(x).
  double LogLikelihood(const Eigen::Ref<const Vector> &x) const;
  /// Per-frame log likelihood of every row of `x`.
  Vector FrameLogLikes(const FrameMatrix &x) const;
  /// Pr(c | x) for one frame; sums to one.
  Vector ComponentPosteriors(const Eigen::Ref<const Vector> &x) const;
  /// L x C posteriors; each row sums to one. If `frame_loglikes` is given it
  /// receives the per-frame log likelihoods.
  Matrix Posteriors(const FrameMatrix &x, Vector *frame_loglikes = nullptr) const;

 private:
  void CheckDim(long dim) const;

  Vector weights_;
  Matrix means_;
  Matrix variances_;
  Matrix inv_vars_;
  Matrix means_invvars_;
  Vector gconsts_;  // log w_c - 0.5 (F log 2pi + sum log var + sum mu^2/var)
};

/// Row-wise log-sum-exp with max shift; rows of all -inf give -inf.
Vector LogSumExpRows(const Matrix &m);

/// Sufficient statistics for one GMM: occupancies, first and second order
/// sums (weighted by per-frame weights when supplied).
struct GmmStats {
  Vector occupancy;  // C
  Matrix first;      // C x F, sum_t g_ct x_t
  Matrix second;     // C x F, sum_t g_ct x_t^2
  double loglik = 0.0;
  double frames = 0.0;

  GmmStats() = default;
  GmmStats(int num_components, int dim);
  /// E-step over `x`; `frame_weights` (length L) scales each frame's
  /// posteriors, as when frames are softly assigned to an HMM state.
  void Accumulate(const DiagGmm &gmm, const FrameMatrix &x,
                  const Vector *frame_weights = nullptr,
                  bool need_second = true);
  void Add(const GmmStats &other);
};

struct GmmTrainConfig {
  int num_components = 512;
  int split_iterations = 5;
  int final_iterations = 10;
  double variance_floor_ratio = 1e-4;
  double split_perturbation = 0.2;  // in standard deviations
  uint64_t seed = 0;

  void Validate() const;
};

/// Log likelihood after each EM iteration, one list per split level (the
/// first entry of each list is the model entering that level).
struct GmmTrainTrace {
  std::vector<int> level_components;
  std::vector<std::vector<double>> loglik;
};

/// Per-dimension variance floor: `ratio` x the pooled variance of `data`.
Vector GlobalVarianceFloor(const UtteranceRefs &data, double ratio);

/// Single Gaussian with the pooled mean and (floored) variance.
DiagGmm GlobalGaussian(const UtteranceRefs &data, const Vector &var_floor);

/// Doubles the component count: each component is split along its highest
/// variance dimension by +-`perturbation` standard deviations. Components
/// whose weight has collapsed are first re-seeded from the heaviest one.
DiagGmm SplitComponents(const DiagGmm &gmm, double perturbation, uint64_t seed);

/// Maximum-likelihood M-step. Components without occupancy keep their
/// parameters (their weight becomes zero).
DiagGmm MlUpdate(const DiagGmm &old, const GmmStats &stats, const Vector &var_floor);

/// Binary-splitting EM with a caller-supplied variance floor and no data
/// sufficiency check. Used by UBM training and HMM state initialization.
DiagGmm TrainDiagGmm(const UtteranceRefs &data, const GmmTrainConfig &cfg,
                     const Vector &var_floor, GmmTrainTrace *trace = nullptr);

/// Trains the text-independent UBM. Requires a power-of-two component count
/// and at least 10 frames per component ("insufficient data" otherwise).
DiagGmm TrainUbm(const UtteranceRefs &corpus, const GmmTrainConfig &cfg,
                 GmmTrainTrace *trace = nullptr);

struct MapConfig {
  double relevance_factor = 10.0;
  int iterations = 3;
  bool update_means = true;
  bool update_weights = false;
  bool update_variances = false;

  void Validate() const;
};

/// Relevance MAP from statistics gathered against the current iterate.
/// `prior` is the model being adapted; parameters not flagged stay
/// identical. Zero-occupancy components keep their prior mean exactly.
DiagGmm MapUpdate(const DiagGmm &prior, const GmmStats &stats, const MapConfig &cfg);

/// Iterated MAP: each iteration re-aligns the data with the previous
/// iterate and interpolates against the original prior.
DiagGmm MapAdapt(const DiagGmm &prior, const UtteranceRefs &data, const MapConfig &cfg);
DiagGmm MapAdapt(const DiagGmm &prior, const FeatureMatrix &data, const MapConfig &cfg);

/// sum_t (a_t - b_t) / L from per-frame log likelihoods.
double AvgLlrFromFrameLogLikes(const Vector &target, const Vector &background);

/// Average per-frame log likelihood ratio between two models.
double AvgLlr(const DiagGmm &target, const DiagGmm &background, const FeatureMatrix &x);

/// Mean per-frame log likelihood of an utterance.
double AvgLogLikelihood(const DiagGmm &gmm, const FeatureMatrix &x);

// Binary format: "PBMG", version, C, F, then weights, means and variances
// as float64 (means/variances row-major).
void WriteGmm(BinaryWriter *out, const DiagGmm &gmm);
DiagGmm ReadGmm(BinaryReader *in);
void SaveGmm(const std::string &path, const DiagGmm &gmm);
DiagGmm LoadGmm(const std::string &path);
std::string GmmHash(const DiagGmm &gmm);

}  // namespace pbmsv

#endif  // PBMSV_DIAG_GMM_H_
