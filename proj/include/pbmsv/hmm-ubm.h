// include/pbmsv/hmm-ubm.h

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

// Unsupervised left-to-right HMM background model. Every utterance is
// treated as one instance of a single dummy word: paths start in state 0,
// may only stay or advance by one state per frame, and must end in the last
// state.

#ifndef PBMSV_HMM_UBM_H_
#define PBMSV_HMM_UBM_H_

#include <string>
#include <vector>

#include "pbmsv/diag-gmm.h"

namespace pbmsv {

class HmmModel {
 public:
  HmmModel() = default;
  /// Validates row sums (1e-10), the left-to-right zero pattern and that all
  /// emissions share one feature dimension.
  HmmModel(Matrix transitions, std::vector<DiagGmm> emissions);

  int NumStates() const { return static_cast<int>(emissions_.size()); }
  int Dim() const { return emissions_.empty() ? 0 : emissions_.front().Dim(); }
  const Matrix &transitions() const { return transitions_; }
  const Matrix &log_transitions() const { return log_transitions_; }
  const std::vector<DiagGmm> &emissions() const { return emissions_; }
  const DiagGmm &emission(int s) const { return emissions_[s]; }

  /// L x S matrix of per-state emission log likelihoods.
  Matrix EmissionLogLikes(const FrameMatrix &x) const;

 private:
  Matrix transitions_;
  Matrix log_transitions_;
  std::vector<DiagGmm> emissions_;
};

/// Posterior state occupancies of one utterance.
struct StateOccupancy {
  Matrix gamma;        // L x S
  Matrix transitions;  // S x S expected transition counts
  double loglik = 0.0;
};

StateOccupancy ForwardBackward(const HmmModel &hmm, const Matrix &emission_loglikes);

/// Best-path log likelihood (unnormalized) from precomputed emissions;
/// optionally returns the state of every frame.
double ViterbiScore(const HmmModel &hmm, const Matrix &emission_loglikes,
                    std::vector<int> *alignment = nullptr);

/// Best-path joint log likelihood divided by L. Requires L >= S.
double ViterbiLogLik(const HmmModel &hmm, const FeatureMatrix &x,
                     std::vector<int> *alignment = nullptr);

/// Total (all-path) log likelihood, not normalized.
double ForwardLogLik(const HmmModel &hmm, const FeatureMatrix &x);

/// ViterbiLogLik(target) - ViterbiLogLik(background).
double HmmLlr(const HmmModel &target, const HmmModel &background, const FeatureMatrix &x);

struct HmmTrainConfig {
  int num_states = 14;
  int components_per_state = 8;
  int bw_iterations = 10;
  double initial_self_loop = 0.8;
  // Per-state GMM initialization on the uniform segmentation. Its
  // num_components is overridden by components_per_state.
  GmmTrainConfig state_init;

  void Validate() const;
};

/// Corpus log likelihood before each Baum-Welch iteration plus the final
/// model's.
struct HmmTrainTrace {
  std::vector<double> loglik;
};

HmmModel TrainHmmUbm(const UtteranceRefs &corpus, const HmmTrainConfig &cfg,
                     HmmTrainTrace *trace = nullptr);

struct HmmMapConfig {
  double relevance_factor = 10.0;
  int iterations = 3;
  bool update_transitions = false;

  void Validate() const;
};

/// Relevance MAP of the emission means (per state, occupancy weighted) and,
/// when enabled, of the transitions: a_ij <- (n_ij + r a_ij) / (n_i + r).
HmmModel MapAdaptHmm(const HmmModel &prior, const UtteranceRefs &data,
                     const HmmMapConfig &cfg);

// Binary format: "PBMH", version, S, transitions (float64, row-major), then
// S embedded GMMs in the GMM format.
void WriteHmm(BinaryWriter *out, const HmmModel &hmm);
HmmModel ReadHmm(BinaryReader *in);
void SaveHmm(const std::string &path, const HmmModel &hmm);
HmmModel LoadHmm(const std::string &path);
std::string HmmHash(const HmmModel &hmm);

}  // namespace pbmsv

#endif  // PBMSV_HMM_UBM_H_
