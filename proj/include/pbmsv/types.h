// include/pbmsv/types.h

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

#ifndef PBMSV_TYPES_H_
#define PBMSV_TYPES_H_

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pbmsv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

// Frames are stored one per row, L x F.
using FrameMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Features of one utterance. Empty phrase/speaker ids mean "unknown".
struct FeatureMatrix {
  FrameMatrix frames;
  std::string utterance_id;
  std::string phrase_id;
  std::string speaker_id;

  int NumFrames() const { return static_cast<int>(frames.rows()); }
  int Dim() const { return static_cast<int>(frames.cols()); }
};

/// Non-owning list of utterances used wherever data from several files is
/// pooled (UBM training, PBM construction, enrollment).
using UtteranceRefs = std::vector<std::reference_wrapper<const FeatureMatrix>>;

inline UtteranceRefs RefsOf(const std::vector<FeatureMatrix> &utts) {
  return UtteranceRefs(utts.begin(), utts.end());
}

inline long TotalFrames(const UtteranceRefs &utts) {
  long n = 0;
  for (const FeatureMatrix &u : utts) n += u.NumFrames();
  return n;
}

}  // namespace pbmsv

#endif  // PBMSV_TYPES_H_
