// src/ivector.cc

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

#include "pbmsv/ivector.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "pbmsv/error.h"

namespace pbmsv {

SuffStats AccumulateStats(const DiagGmm &posterior_model, const DiagGmm &centralize_model,
                          const FeatureMatrix &x) {
  Require(posterior_model.NumComponents() == centralize_model.NumComponents() &&
              posterior_model.Dim() == centralize_model.Dim(),
          "statistics: posterior and centring models differ in shape");
  Require(x.Dim() == posterior_model.Dim(), "statistics: feature dimension mismatch");
  Require(x.NumFrames() > 0, "statistics: empty utterance");
  Matrix post = posterior_model.Posteriors(x.frames);  // L x C
  SuffStats s;
  s.zero = post.colwise().sum().transpose();
  s.first = post.transpose() * x.frames;
  s.first -= s.zero.asDiagonal() * centralize_model.means();
  return s;
}

TvSpace::TvSpace(Matrix t, Vector sigma, int num_components, std::string ubm_hash)
    : t_(std::move(t)), sigma_(std::move(sigma)), num_components_(num_components),
      ubm_hash_(std::move(ubm_hash)) {
  Require(num_components_ > 0 && t_.rows() > 0 && t_.rows() % num_components_ == 0,
          "tv space: T rows must be a multiple of the component count");
  Require(sigma_.size() == t_.rows(), "tv space: Sigma size does not match T");
  Require(t_.cols() >= 1 && t_.cols() <= t_.rows(), "tv space: rank must be in [1, CF]");
  Require(t_.allFinite(), "tv space: non-finite T");
  Require(sigma_.allFinite() && sigma_.minCoeff() > 0, "tv space: Sigma must be positive");
  const int R = Rank(), F = Dim();
  t_sinv_ = t_.transpose() * sigma_.cwiseInverse().asDiagonal();
  blocks_.resize(static_cast<long>(R) * R, num_components_);
  for (int c = 0; c < num_components_; ++c) {
    Matrix m = t_sinv_.middleCols(static_cast<long>(c) * F, F) * t_.middleRows(static_cast<long>(c) * F, F);
    m = 0.5 * (m + m.transpose());
    blocks_.col(c) = Eigen::Map<const Vector>(m.data(), m.size());
  }
}

Matrix TvSpace::Precision(const Vector &zero) const {
  Require(zero.size() == num_components_, "tv space: statistics component count mismatch");
  const int R = Rank();
  Vector flat = blocks_ * zero;
  Matrix l = Eigen::Map<const Matrix>(flat.data(), R, R);
  l.diagonal().array() += 1.0;
  return l;
}

Vector TvSpace::Linear(const Matrix &first) const {
  Require(first.rows() == num_components_ && first.cols() == Dim(),
          "tv space: statistics shape mismatch");
  // Row-major flattening gives the c * F + f supervector order.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = first;
  return t_sinv_ * Eigen::Map<const Vector>(rm.data(), rm.size());
}

namespace {

void CheckStats(const TvSpace &tv, const SuffStats &s) {
  Require(s.NumComponents() == tv.NumComponents() && s.Dim() == tv.Dim(),
          "i-vector: statistics do not match the T space");
  if (!s.zero.allFinite() || !s.first.allFinite())
    throw ValidationError("i-vector: non-finite statistics");
}

Eigen::LLT<Matrix> Factor(const Matrix &l) {
  Eigen::LLT<Matrix> llt(l);
  if (llt.info() != Eigen::Success)
    throw NumericalError("i-vector: posterior precision is not positive definite");
  return llt;
}

}  // namespace

IVector ExtractIvector(const TvSpace &tv, const SuffStats &s, const std::string &id) {
  CheckStats(tv, s);
  IVector w;
  w.id = id;
  w.values = Factor(tv.Precision(s.zero)).solve(tv.Linear(s.first));
  if (!w.values.allFinite()) throw NumericalError("i-vector: non-finite result");
  return w;
}

void TvTrainConfig::Validate() const {
  Require(rank >= 1, "tv training: rank must be >= 1");
  Require(iterations >= 0, "tv training: iterations must be >= 0");
}

double TvObjective(const TvSpace &tv, const std::vector<SuffStats> &stats) {
  double total = 0.0;
  for (const SuffStats &s : stats) {
    CheckStats(tv, s);
    auto llt = Factor(tv.Precision(s.zero));
    Vector b = tv.Linear(s.first);
    double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    total += 0.5 * b.dot(llt.solve(b)) - 0.5 * logdet;
  }
  return total;
}

TvSpace TvEmStep(const TvSpace &tv, const std::vector<SuffStats> &stats) {
  Require(!stats.empty(), "tv training: no statistics");
  const int R = tv.Rank(), C = tv.NumComponents(), F = tv.Dim();
  const long RR = static_cast<long>(R) * R;
  Matrix acc_a = Matrix::Zero(RR, C);   // column c: vec(sum_u N_c E[ww'])
  Matrix acc_c = Matrix::Zero(static_cast<long>(C) * F, R);
  Vector occ = Vector::Zero(C);
  const int kBatch = 32;
  Matrix ew_batch(RR, kBatch);
  Matrix n_batch(kBatch, C);
  int filled = 0;
  auto flush = [&]() {
    if (filled == 0) return;
    acc_a.noalias() += ew_batch.leftCols(filled) * n_batch.topRows(filled);
    filled = 0;
  };
  for (const SuffStats &s : stats) {
    CheckStats(tv, s);
    auto llt = Factor(tv.Precision(s.zero));
    Vector w = llt.solve(tv.Linear(s.first));
    Matrix ew = llt.solve(Matrix::Identity(R, R));
    ew += w * w.transpose();
    ew = 0.5 * (ew + ew.transpose());
    ew_batch.col(filled) = Eigen::Map<const Vector>(ew.data(), RR);
    n_batch.row(filled) = s.zero.transpose();
    if (++filled == kBatch) flush();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = s.first;
    acc_c.noalias() += Eigen::Map<const Vector>(rm.data(), rm.size()) * w.transpose();
    occ += s.zero;
  }
  flush();
  Matrix t = tv.t();
  for (int c = 0; c < C; ++c) {
    if (occ(c) < 1e-10) continue;
    Matrix a = Eigen::Map<const Matrix>(acc_a.col(c).data(), R, R);
    Eigen::LDLT<Matrix> ldlt(a);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("tv training: singular accumulator for component " + std::to_string(c));
    t.middleRows(static_cast<long>(c) * F, F) =
        ldlt.solve(acc_c.middleRows(static_cast<long>(c) * F, F).transpose()).transpose();
  }
  if (!t.allFinite()) throw NumericalError("tv training: non-finite T");
  return TvSpace(std::move(t), tv.sigma(), C, tv.ubm_hash());
}

TvSpace TrainTMatrix(const DiagGmm &ubm, const std::vector<SuffStats> &stats,
                     const TvTrainConfig &cfg, TvTrainTrace *trace) {
  cfg.Validate();
  Require(!stats.empty(), "tv training: no statistics");
  const int C = ubm.NumComponents(), F = ubm.Dim();
  const long CF = static_cast<long>(C) * F;
  Require(cfg.rank <= CF, "tv training: rank exceeds supervector dimension");
  if (static_cast<long>(stats.size()) < cfg.rank)
    Warn("tv training: fewer utterances (" + std::to_string(stats.size()) +
         ") than the rank (" + std::to_string(cfg.rank) + ")");
  Vector sigma(CF);
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < F; ++f) sigma(static_cast<long>(c) * F + f) = ubm.variances()(c, f);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix t(CF, cfg.rank);
  for (long i = 0; i < CF; ++i) {
    double sd = std::sqrt(sigma(i));
    for (int r = 0; r < cfg.rank; ++r) t(i, r) = sd * gauss(rng);
  }
  TvSpace tv(std::move(t), std::move(sigma), C, GmmHash(ubm));
  for (int it = 0; it < cfg.iterations; ++it) {
    if (trace) trace->objective.push_back(TvObjective(tv, stats));
    tv = TvEmStep(tv, stats);
  }
  if (trace) trace->objective.push_back(TvObjective(tv, stats));
  return tv;
}

IVector EnrollTargetIvector(const TvSpace &tv, const DiagGmm &ubm,
                            const DiagGmm &posterior_model, const UtteranceRefs &training,
                            const std::string &id) {
  Require(!training.empty(), "i-vector enrollment: empty training set");
  IVector avg;
  avg.id = id;
  avg.values = Vector::Zero(tv.Rank());
  for (const FeatureMatrix &u : training)
    avg.values += ExtractIvector(tv, AccumulateStats(posterior_model, ubm, u)).values;
  avg.values /= static_cast<double>(training.size());
  return avg;
}

namespace {

const uint32_t kTvVersion = 1;
const uint32_t kIvecVersion = 1;

std::string SerializeTv(const TvSpace &tv) {
  BinaryWriter out;
  out.Magic("PBMT");
  out.U32(kTvVersion);
  out.Str(tv.ubm_hash());
  out.U32(tv.NumComponents());
  out.U32(tv.Dim());
  out.U32(tv.Rank());
  out.Vec(tv.sigma());
  out.Mat(tv.t());
  return out.Take();
}

}  // namespace

void SaveTvSpace(const std::string &path, const TvSpace &tv) {
  WriteFileAtomic(path, SerializeTv(tv));
}

TvSpace LoadTvSpace(const std::string &path, const std::string &expected_ubm_hash) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "T-matrix file " + path);
  in.ExpectMagic("PBMT");
  if (in.U32() != kTvVersion) throw ValidationError(path + ": unsupported T-matrix version");
  std::string hash = in.Str();
  if (hash != expected_ubm_hash)
    throw ValidationError(path + ": T matrix was trained against a different UBM");
  uint32_t C = in.U32(), F = in.U32(), R = in.U32();
  long CF = static_cast<long>(C) * F;
  Vector sigma = in.Vec(CF);
  Matrix t = in.Mat(CF, R);
  in.ExpectEnd();
  return TvSpace(std::move(t), std::move(sigma), static_cast<int>(C), hash);
}

std::string TvSpaceHash(const TvSpace &tv) { return Sha256Hex(SerializeTv(tv)); }

void SaveIvectors(const std::string &path, const std::vector<IVector> &ivectors) {
  BinaryWriter out;
  out.Magic("PBMI");
  out.U32(kIvecVersion);
  out.U64(ivectors.size());
  out.U32(ivectors.empty() ? 0 : static_cast<uint32_t>(ivectors.front().values.size()));
  for (const IVector &w : ivectors) {
    Require(w.values.size() == ivectors.front().values.size(),
            "i-vector archive: inconsistent dimensions");
    out.Str(w.id);
    out.U32(w.normalized ? 1 : 0);
    out.Vec(w.values);
  }
  WriteFileAtomic(path, out.bytes());
}

std::vector<IVector> LoadIvectors(const std::string &path) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "i-vector archive " + path);
  in.ExpectMagic("PBMI");
  if (in.U32() != kIvecVersion) throw ValidationError(path + ": unsupported archive version");
  uint64_t n = in.U64();
  uint32_t R = in.U32();
  in.Need(std::min<uint64_t>(n, bytes.size()) * 8);
  std::vector<IVector> out;
  out.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    IVector w;
    w.id = in.Str();
    w.normalized = in.U32() != 0;
    w.values = in.Vec(R);
    out.push_back(std::move(w));
  }
  in.ExpectEnd();
  return out;
}

}  // namespace pbmsv
