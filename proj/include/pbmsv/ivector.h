// include/pbmsv/ivector.h

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

// Total-variability modelling: Baum-Welch statistics, T-matrix training and
// i-vector extraction. Statistics may be aligned with a pass-phrase model
// while always being centred on the UBM means, which is how PBM-based
// i-vectors are obtained.

#ifndef PBMSV_IVECTOR_H_
#define PBMSV_IVECTOR_H_

#include <cstdint>
#include <string>
#include <vector>

#include "pbmsv/diag-gmm.h"

namespace pbmsv {

/// Zeroth order and centred first order statistics of one utterance.
struct SuffStats {
  Vector zero;   // C, N_c
  Matrix first;  // C x F, sum_t g_ct (x_t - m_c)
  std::string source_model_id;  // hash of the model giving the posteriors

  int NumComponents() const { return static_cast<int>(zero.size()); }
  int Dim() const { return static_cast<int>(first.cols()); }
};

/// Posteriors from `posterior_model`, centring on `centralize_model`'s means.
SuffStats AccumulateStats(const DiagGmm &posterior_model, const DiagGmm &centralize_model,
                          const FeatureMatrix &x);

/// T (CF x R, supervector index c * F + f) and the diagonal residual
/// covariance Sigma (CF). Per-component products are cached.
class TvSpace {
 public:
  TvSpace() = default;
  TvSpace(Matrix t, Vector sigma, int num_components, std::string ubm_hash);

  int Rank() const { return static_cast<int>(t_.cols()); }
  int NumComponents() const { return num_components_; }
  int Dim() const { return num_components_ == 0 ? 0 : static_cast<int>(t_.rows()) / num_components_; }
  const Matrix &t() const { return t_; }
  const Vector &sigma() const { return sigma_; }
  const std::string &ubm_hash() const { return ubm_hash_; }

  /// I + sum_c N_c T_c' Sigma_c^-1 T_c.
  Matrix Precision(const Vector &zero) const;
  /// T' Sigma^-1 F~.
  Vector Linear(const Matrix &first) const;

 private:
  Matrix t_;
  Vector sigma_;
  int num_components_ = 0;
  std::string ubm_hash_;
  Matrix t_sinv_;      // R x CF, T' Sigma^-1
  Matrix blocks_;      // R*R x C, column c is vec(T_c' Sigma_c^-1 T_c)
};

struct IVector {
  Vector values;
  std::string id;
  bool normalized = false;
};

/// Posterior mean of w: (I + T' Sigma^-1 N T)^-1 T' Sigma^-1 F~.
IVector ExtractIvector(const TvSpace &tv, const SuffStats &s, const std::string &id = "");

struct TvTrainConfig {
  int rank = 400;
  int iterations = 5;
  uint64_t seed = 0;

  void Validate() const;
};

/// Per-iteration value of sum_u (b_u' L_u^-1 b_u - log|L_u|) / 2, the part
/// of the statistics' log likelihood that depends on T; the last entry is
/// for the returned space.
struct TvTrainTrace {
  std::vector<double> objective;
};

/// Evaluates the objective above for a given space.
double TvObjective(const TvSpace &tv, const std::vector<SuffStats> &stats);

/// EM training of T with Sigma fixed at the UBM variances. T starts from a
/// seeded Gaussian scaled by the UBM standard deviations.
TvSpace TrainTMatrix(const DiagGmm &ubm, const std::vector<SuffStats> &stats,
                     const TvTrainConfig &cfg, TvTrainTrace *trace = nullptr);

/// One EM step from `tv`. Components with no occupancy keep their block.
TvSpace TvEmStep(const TvSpace &tv, const std::vector<SuffStats> &stats);

/// Average of the per-file i-vectors, with posteriors from
/// `posterior_model` (a PBM or the UBM itself) and centring on the UBM.
IVector EnrollTargetIvector(const TvSpace &tv, const DiagGmm &ubm,
                            const DiagGmm &posterior_model, const UtteranceRefs &training,
                            const std::string &id = "");

// Binary formats. All record the UBM hash; loading against another UBM
// fails.
void SaveTvSpace(const std::string &path, const TvSpace &tv);
TvSpace LoadTvSpace(const std::string &path, const std::string &expected_ubm_hash);
std::string TvSpaceHash(const TvSpace &tv);

/// Table of (id, normalized flag, R float64 values).
void SaveIvectors(const std::string &path, const std::vector<IVector> &ivectors);
std::vector<IVector> LoadIvectors(const std::string &path);

}  // namespace pbmsv

#endif  // PBMSV_IVECTOR_H_
