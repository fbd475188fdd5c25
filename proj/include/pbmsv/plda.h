// include/pbmsv/plda.h

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

// Spherical normalization and PLDA for i-vectors, and the i-vector trial
// scorer that ties them to the T space and (optionally) a PBM set.
//
// PLDA model: w = mu + Phi y + Gamma z + eps, y ~ N(0, I), z ~ N(0, I),
// eps ~ N(0, D) with D diagonal. Phi is the speaker subspace, Gamma the
// channel subspace.

#ifndef PBMSV_PLDA_H_
#define PBMSV_PLDA_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbmsv/ivector.h"
#include "pbmsv/pbm.h"

namespace pbmsv {

class SphNormalizer {
 public:
  struct Stage {
    Vector mean;
    Matrix whitening;
  };

  SphNormalizer() = default;
  explicit SphNormalizer(std::vector<Stage> stages, std::string ubm_hash = "");

  int Dim() const { return stages_.empty() ? 0 : static_cast<int>(stages_.front().mean.size()); }
  int iterations() const { return static_cast<int>(stages_.size()); }
  const std::vector<Stage> &stages() const { return stages_; }
  const std::string &ubm_hash() const { return ubm_hash_; }

  /// Centre, whiten and length-normalize with every stage in order.
  IVector Apply(const IVector &w) const;

 private:
  std::vector<Stage> stages_;
  std::string ubm_hash_;
};

/// Each iteration estimates the mean and the symmetric inverse square root
/// of the covariance (eigenvalues floored at 1e-8) from the current
/// vectors, applies them and length-normalizes.
SphNormalizer TrainSph(const std::vector<Vector> &ivectors, int iterations = 2,
                       const std::string &ubm_hash = "");

class PldaModel {
 public:
  PldaModel() = default;
  /// `noise` is the diagonal of D.
  PldaModel(Vector mu, Matrix phi, Matrix gamma, Vector noise, std::string ubm_hash = "");

  int Dim() const { return static_cast<int>(mu_.size()); }
  const Vector &mu() const { return mu_; }
  const Matrix &phi() const { return phi_; }
  const Matrix &gamma() const { return gamma_; }
  const Vector &noise() const { return noise_; }
  const std::string &ubm_hash() const { return ubm_hash_; }

  /// Phi Phi'.
  Matrix BetweenCovariance() const;
  /// Gamma Gamma' + D.
  Matrix WithinCovariance() const;

  /// log p(w1, w2 | same class) - log p(w1) - log p(w2). Symmetric.
  double Score(const Vector &w1, const Vector &w2) const;

 private:
  Vector mu_;
  Matrix phi_;
  Matrix gamma_;
  Vector noise_;
  std::string ubm_hash_;
  // Score(a, b) = -0.5 (a'Q a + b'Q b) - 0.5 (a'P b + b'P a) + const_,
  // with a, b centred on mu.
  Matrix q_;
  Matrix p_;
  double const_ = 0.0;
};

struct PldaTrainConfig {
  int speaker_rank = 400;
  int channel_rank = 400;
  int iterations = 10;
  double noise_floor = 1e-6;
  uint64_t seed = 0;

  void Validate() const;
};

/// Data log likelihood before each EM iteration plus the final model's.
struct PldaTrainTrace {
  std::vector<double> loglik;
};

using PldaClasses = std::vector<std::vector<Vector>>;

/// Total log likelihood of the classes under `model`.
double PldaLogLikelihood(const PldaModel &model, const PldaClasses &classes);

/// Initialization: mu is the global mean; Phi and Gamma are the leading
/// scaled eigenvectors of the between-class and half the within-class
/// scatter, plus a small seeded perturbation; D is half the within-class
/// scatter's diagonal.
PldaModel InitPlda(const PldaClasses &classes, const PldaTrainConfig &cfg);

/// EM over the generative model. Needs >= 2 classes and at least one class
/// with >= 2 examples. With zero iterations the initialization is returned.
PldaModel TrainPlda(const PldaClasses &classes, const PldaTrainConfig &cfg,
                    PldaTrainTrace *trace = nullptr, const std::string &ubm_hash = "");

/// The trained i-vector back end, shared by the baseline and PBM paths.
struct IvectorBackend {
  DiagGmm ubm;
  TvSpace tv;
  SphNormalizer sph;
  PldaModel plda;

  /// Checks that every component was trained against `ubm`.
  void Validate() const;
};

struct IvectorTrialResult {
  double score = 0.0;
  std::string selected_phrase;
};

/// Selects the PBM for `y` (or uses the UBM when `pbms` is null), gathers
/// statistics with its posteriors centred on the UBM, extracts, normalizes
/// and PLDA-scores against the claimant. The claimant is normalized first
/// if it is not already.
IvectorTrialResult IvectorTrialScore(const IvectorBackend &backend, const PbmSet *pbms,
                                     const IVector &claimant, const FeatureMatrix &y);

/// Test-side normalized i-vector and the phrase whose model aligned it.
IVector TestIvector(const IvectorBackend &backend, const PbmSet *pbms, const FeatureMatrix &y,
                    std::string *selected_phrase = nullptr);

void SaveSph(const std::string &path, const SphNormalizer &sph);
SphNormalizer LoadSph(const std::string &path, const std::string &expected_ubm_hash);
void SavePlda(const std::string &path, const PldaModel &plda);
PldaModel LoadPlda(const std::string &path, const std::string &expected_ubm_hash);

}  // namespace pbmsv

#endif  // PBMSV_PLDA_H_
