// src/plda.cc

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

#include "pbmsv/plda.h"

#include <cmath>
#include <numbers>
#include <random>

#include "pbmsv/error.h"

namespace pbmsv {

namespace {

Matrix Symmetrize(const Matrix &m) { return 0.5 * (m + m.transpose()); }

// Inverse and log determinant of a symmetric positive definite matrix.
Matrix SpdInverse(const Matrix &m, double *logdet, const char *what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  if (logdet) *logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return Symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

}  // namespace

SphNormalizer::SphNormalizer(std::vector<Stage> stages, std::string ubm_hash)
    : stages_(std::move(stages)), ubm_hash_(std::move(ubm_hash)) {
  Require(!stages_.empty(), "sph: at least one stage is required");
  const long r = stages_.front().mean.size();
  for (const Stage &s : stages_) {
    Require(s.mean.size() == r && s.whitening.rows() == r && s.whitening.cols() == r,
            "sph: inconsistent stage dimensions");
    Require(s.mean.allFinite() && s.whitening.allFinite(), "sph: non-finite stage");
  }
}

IVector SphNormalizer::Apply(const IVector &w) const {
  Require(w.values.size() == Dim(), "sph: dimension mismatch");
  Vector v = w.values;
  for (const Stage &s : stages_) {
    v = s.whitening * (v - s.mean);
    double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw ValidationError("zero-length vector cannot be normalized");
    v /= n;
  }
  IVector out;
  out.values = std::move(v);
  out.id = w.id;
  out.normalized = true;
  return out;
}

SphNormalizer TrainSph(const std::vector<Vector> &ivectors, int iterations,
                       const std::string &ubm_hash) {
  Require(iterations >= 1, "sph: iterations must be >= 1");
  Require(ivectors.size() >= 2, "sph: need at least two i-vectors");
  const long r = ivectors.front().size();
  Matrix data(r, static_cast<long>(ivectors.size()));
  for (size_t i = 0; i < ivectors.size(); ++i) {
    Require(ivectors[i].size() == r, "sph: inconsistent i-vector dimensions");
    data.col(static_cast<long>(i)) = ivectors[i];
  }
  if (static_cast<long>(ivectors.size()) < r + 1)
    Warn("sph: fewer training vectors than dimension + 1");
  std::vector<SphNormalizer::Stage> stages;
  for (int it = 0; it < iterations; ++it) {
    SphNormalizer::Stage st;
    st.mean = data.rowwise().mean();
    Matrix centred = data.colwise() - st.mean;
    Matrix cov = Symmetrize(centred * centred.transpose() / static_cast<double>(data.cols()));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError("sph: eigendecomposition failed");
    Vector lambda = eig.eigenvalues();
    int floored = 0;
    for (long i = 0; i < lambda.size(); ++i)
      if (lambda(i) < 1e-8) {
        lambda(i) = 1e-8;
        ++floored;
      }
    if (floored > 0) Warn("sph: " + std::to_string(floored) + " covariance eigenvalues floored");
    st.whitening = Symmetrize(eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose());
    data = st.whitening * centred;
    for (long j = 0; j < data.cols(); ++j) {
      double n = data.col(j).norm();
      if (!(n > 0.0)) throw ValidationError("zero-length vector cannot be normalized");
      data.col(j) /= n;
    }
    stages.push_back(std::move(st));
  }
  return SphNormalizer(std::move(stages), ubm_hash);
}

PldaModel::PldaModel(Vector mu, Matrix phi, Matrix gamma, Vector noise, std::string ubm_hash)
    : mu_(std::move(mu)), phi_(std::move(phi)), gamma_(std::move(gamma)),
      noise_(std::move(noise)), ubm_hash_(std::move(ubm_hash)) {
  const long r = mu_.size();
  Require(r >= 1, "plda: empty model");
  Require(phi_.rows() == r && gamma_.rows() == r && noise_.size() == r,
          "plda: inconsistent dimensions");
  Require(mu_.allFinite() && phi_.allFinite() && gamma_.allFinite() && noise_.allFinite(),
          "plda: non-finite parameters");
  Require(noise_.minCoeff() > 0, "plda: noise variances must be positive");
  Matrix b = BetweenCovariance();
  Matrix t = b + WithinCovariance();
  double logdet_t = 0, logdet_k = 0;
  Matrix t_inv = SpdInverse(t, &logdet_t, "plda total covariance");
  Matrix k = Symmetrize(t - b * t_inv * b);
  Matrix x = SpdInverse(k, &logdet_k, "plda conditional covariance");
  q_ = x - t_inv;
  p_ = -(t_inv * b * x);
  const_ = 0.5 * logdet_t - 0.5 * logdet_k;
}

Matrix PldaModel::BetweenCovariance() const { return Symmetrize(phi_ * phi_.transpose()); }

Matrix PldaModel::WithinCovariance() const {
  Matrix w = Symmetrize(gamma_ * gamma_.transpose());
  w.diagonal() += noise_;
  return w;
}

double PldaModel::Score(const Vector &w1, const Vector &w2) const {
  Require(w1.size() == Dim() && w2.size() == Dim(), "plda: dimension mismatch");
  Vector a = w1 - mu_, b = w2 - mu_;
  double quad = a.dot(q_ * a) + b.dot(q_ * b);
  double cross = a.dot(p_ * b) + b.dot(p_ * a);
  return -0.5 * quad - 0.5 * cross + const_;
}

void PldaTrainConfig::Validate() const {
  Require(speaker_rank >= 1, "plda: speaker rank must be >= 1");
  Require(channel_rank >= 0, "plda: channel rank must be >= 0");
  Require(iterations >= 0, "plda: iterations must be >= 0");
  Require(noise_floor > 0, "plda: noise floor must be positive");
}

namespace {

struct Pooled {
  long dim = 0;
  long total = 0;
  Vector mean;
};

Pooled CheckClasses(const PldaClasses &classes) {
  Require(classes.size() >= 2, "plda: need at least two classes");
  Pooled p;
  bool repeated = false;
  for (const auto &cls : classes) {
    Require(!cls.empty(), "plda: empty class");
    if (cls.size() >= 2) repeated = true;
    for (const Vector &w : cls) {
      if (p.dim == 0) p.dim = w.size();
      Require(w.size() == p.dim && p.dim > 0, "plda: inconsistent i-vector dimensions");
      Require(w.allFinite(), "plda: non-finite i-vector");
      p.mean = p.total == 0 ? w : Vector(p.mean + w);
      ++p.total;
    }
  }
  Require(repeated, "plda: every class is a singleton; speaker and channel subspaces are not identifiable");
  p.mean /= static_cast<double>(p.total);
  return p;
}

// Leading `k` eigenvectors of a symmetric PSD matrix scaled by the square
// roots of their eigenvalues.
Matrix LeadingRoot(const Matrix &s, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Symmetrize(s));
  if (eig.info() != Eigen::Success) throw NumericalError("plda: eigendecomposition failed");
  const long r = s.rows();
  Matrix out(r, k);
  for (int i = 0; i < k; ++i) {
    long idx = r - 1 - i;  // eigenvalues ascend
    out.col(i) = eig.eigenvectors().col(idx) * std::sqrt(std::max(0.0, eig.eigenvalues()(idx)));
  }
  return out;
}

}  // namespace

double PldaLogLikelihood(const PldaModel &model, const PldaClasses &classes) {
  const long r = model.Dim();
  const long ns = model.phi().cols();
  double logdet_w = 0;
  Matrix w_inv = SpdInverse(model.WithinCovariance(), &logdet_w, "plda within-class covariance");
  Matrix a = model.phi().transpose() * w_inv;  // Ns x R
  Matrix m1 = Symmetrize(a * model.phi());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  std::map<size_t, std::pair<Matrix, double>> by_n;
  double total = 0.0;
  for (const auto &cls : classes) {
    const size_t n = cls.size();
    auto it = by_n.find(n);
    if (it == by_n.end()) {
      Matrix py = Matrix::Identity(ns, ns) + static_cast<double>(n) * m1;
      double logdet_py = 0;
      Matrix sy = SpdInverse(py, &logdet_py, "plda speaker posterior precision");
      it = by_n.emplace(n, std::make_pair(std::move(sy), logdet_py)).first;
    }
    Vector s = Vector::Zero(r);
    for (const Vector &w : cls) {
      Vector d = w - model.mu();
      total += -0.5 * d.dot(w_inv * d) - 0.5 * logdet_w - 0.5 * static_cast<double>(r) * log2pi;
      s += d;
    }
    Vector m = a * s;
    total += 0.5 * m.dot(it->second.first * m) - 0.5 * it->second.second;
  }
  return total;
}

PldaModel InitPlda(const PldaClasses &classes, const PldaTrainConfig &cfg) {
  cfg.Validate();
  Pooled p = CheckClasses(classes);
  Require(cfg.speaker_rank <= p.dim && cfg.channel_rank <= p.dim,
          "plda: ranks must not exceed the i-vector dimension");
  Matrix sb = Matrix::Zero(p.dim, p.dim), sw = Matrix::Zero(p.dim, p.dim);
  for (const auto &cls : classes) {
    Vector m = Vector::Zero(p.dim);
    for (const Vector &w : cls) m += w;
    m /= static_cast<double>(cls.size());
    Vector dm = m - p.mean;
    sb += static_cast<double>(cls.size()) * dm * dm.transpose();
    for (const Vector &w : cls) sw += (w - m) * (w - m).transpose();
  }
  sb /= static_cast<double>(p.total);
  sw /= static_cast<double>(p.total);
  Matrix phi = LeadingRoot(sb, cfg.speaker_rank);
  Matrix gamma = LeadingRoot(0.5 * sw, cfg.channel_rank);
  Vector noise = (0.5 * sw.diagonal()).cwiseMax(cfg.noise_floor);
  // Without a perturbation, subspace directions with zero initial scatter
  // would stay at zero forever under EM.
  double scale = 1e-2 * std::sqrt(std::max(sw.trace() / static_cast<double>(p.dim), cfg.noise_floor));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (long j = 0; j < phi.cols(); ++j)
    for (long i = 0; i < phi.rows(); ++i) phi(i, j) += scale * gauss(rng);
  for (long j = 0; j < gamma.cols(); ++j)
    for (long i = 0; i < gamma.rows(); ++i) gamma(i, j) += scale * gauss(rng);
  return PldaModel(p.mean, std::move(phi), std::move(gamma), std::move(noise));
}

namespace {

PldaModel PldaEmStep(const PldaModel &model, const PldaClasses &classes, long total,
                     double noise_floor, const std::string &ubm_hash) {
  const long r = model.Dim();
  const long ns = model.phi().cols(), nc = model.gamma().cols();
  const Matrix &phi = model.phi(), &gamma = model.gamma();
  Matrix w_inv = SpdInverse(model.WithinCovariance(), nullptr, "plda within-class covariance");
  Matrix a = phi.transpose() * w_inv;
  Matrix m1 = Symmetrize(a * phi);
  // z | y, w: precision I + Gamma' D^-1 Gamma, mean G (d - Phi y).
  Matrix gt_dinv = gamma.transpose() * model.noise().cwiseInverse().asDiagonal();  // Nc x R
  Matrix pz_inv = SpdInverse(Matrix::Identity(nc, nc) + Symmetrize(gt_dinv * gamma), nullptr,
                             "plda channel posterior precision");
  Matrix g = pz_inv * gt_dinv;  // Nc x R
  Matrix h = g * phi;           // Nc x Ns

  Matrix dm(r, total), ey(ns, total);
  Matrix sum_sy = Matrix::Zero(ns, ns);  // sum over examples of Cov(y)
  std::map<size_t, Matrix> sy_by_n;
  long col = 0;
  for (const auto &cls : classes) {
    const size_t n = cls.size();
    auto it = sy_by_n.find(n);
    if (it == sy_by_n.end())
      it = sy_by_n.emplace(n, SpdInverse(Matrix::Identity(ns, ns) + static_cast<double>(n) * m1,
                                         nullptr, "plda speaker posterior precision")).first;
    Vector s = Vector::Zero(r);
    long first = col;
    for (const Vector &w : cls) {
      dm.col(col) = w - model.mu();
      s += dm.col(col);
      ++col;
    }
    Vector y = it->second * (a * s);
    for (long j = first; j < col; ++j) ey.col(j) = y;
    sum_sy += static_cast<double>(n) * it->second;
  }
  Matrix ez = g * dm - h * ey;  // Nc x N

  const long k = ns + nc;
  Matrix sxx(k, k);
  sxx.topLeftCorner(ns, ns) = sum_sy + ey * ey.transpose();
  sxx.bottomRightCorner(nc, nc) = static_cast<double>(total) * pz_inv +
                                  h * sum_sy * h.transpose() + ez * ez.transpose();
  Matrix syz = -sum_sy * h.transpose() + ey * ez.transpose();
  sxx.topRightCorner(ns, nc) = syz;
  sxx.bottomLeftCorner(nc, ns) = syz.transpose();
  sxx = Symmetrize(sxx);
  Matrix sdx(r, k);
  sdx.leftCols(ns) = dm * ey.transpose();
  sdx.rightCols(nc) = dm * ez.transpose();

  Eigen::LDLT<Matrix> ldlt(sxx);
  if (ldlt.info() != Eigen::Success) throw NumericalError("plda: singular latent statistics");
  Matrix v = ldlt.solve(sdx.transpose()).transpose();  // R x K
  Vector sdd = dm.rowwise().squaredNorm();
  Vector noise = (sdd - (v.array() * sdx.array()).rowwise().sum().matrix()) /
                 static_cast<double>(total);
  noise = noise.cwiseMax(noise_floor);
  if (!v.allFinite() || !noise.allFinite()) throw NumericalError("plda: non-finite update");
  return PldaModel(model.mu(), v.leftCols(ns), v.rightCols(nc), std::move(noise), ubm_hash);
}

}  // namespace

PldaModel TrainPlda(const PldaClasses &classes, const PldaTrainConfig &cfg,
                    PldaTrainTrace *trace, const std::string &ubm_hash) {
  PldaModel init = InitPlda(classes, cfg);
  PldaModel model(init.mu(), init.phi(), init.gamma(), init.noise(), ubm_hash);
  const long total = CheckClasses(classes).total;
  for (int it = 0; it < cfg.iterations; ++it) {
    if (trace) trace->loglik.push_back(PldaLogLikelihood(model, classes));
    model = PldaEmStep(model, classes, total, cfg.noise_floor, ubm_hash);
  }
  if (trace) trace->loglik.push_back(PldaLogLikelihood(model, classes));
  return model;
}

void IvectorBackend::Validate() const {
  const std::string h = GmmHash(ubm);
  Require(tv.ubm_hash() == h, "i-vector back end: T matrix belongs to a different UBM");
  Require(sph.ubm_hash() == h, "i-vector back end: Sph normalizer belongs to a different UBM");
  Require(plda.ubm_hash() == h, "i-vector back end: PLDA belongs to a different UBM");
  Require(tv.NumComponents() == ubm.NumComponents() && tv.Dim() == ubm.Dim(),
          "i-vector back end: T matrix does not match the UBM shape");
  Require(sph.Dim() == tv.Rank() && plda.Dim() == tv.Rank(),
          "i-vector back end: i-vector dimensions disagree");
}

IVector TestIvector(const IvectorBackend &backend, const PbmSet *pbms, const FeatureMatrix &y,
                    std::string *selected_phrase) {
  Require(y.NumFrames() > 0, "i-vector scoring: empty utterance");
  const DiagGmm *posterior_model = &backend.ubm;
  std::string phrase;
  if (pbms) {
    Require(pbms->family() == ModelFamily::kGmm, "i-vector scoring: PBMs must be GMMs");
    phrase = SelectPbm(*pbms, y).phrase_id;
    posterior_model = &std::get<DiagGmm>(pbms->Entry(phrase));
  }
  if (selected_phrase) *selected_phrase = phrase;
  IVector w = ExtractIvector(backend.tv, AccumulateStats(*posterior_model, backend.ubm, y),
                             y.utterance_id);
  return backend.sph.Apply(w);
}

IvectorTrialResult IvectorTrialScore(const IvectorBackend &backend, const PbmSet *pbms,
                                     const IVector &claimant, const FeatureMatrix &y) {
  IvectorTrialResult res;
  IVector test = TestIvector(backend, pbms, y, &res.selected_phrase);
  IVector model = claimant.normalized ? claimant : backend.sph.Apply(claimant);
  res.score = backend.plda.Score(model.values, test.values);
  if (!std::isfinite(res.score)) throw NumericalError("i-vector scoring: non-finite score");
  return res;
}

namespace {
const uint32_t kSphVersion = 1;
const uint32_t kPldaVersion = 1;

std::string CheckHeader(BinaryReader *in, const std::string &path, const char *magic,
                        uint32_t version, const std::string &expected_ubm_hash,
                        const char *what) {
  in->ExpectMagic(magic);
  if (in->U32() != version) throw ValidationError(path + ": unsupported " + what + " version");
  std::string hash = in->Str();
  if (hash != expected_ubm_hash)
    throw ValidationError(path + ": " + what + " was trained against a different UBM");
  return hash;
}
}  // namespace

void SaveSph(const std::string &path, const SphNormalizer &sph) {
  BinaryWriter out;
  out.Magic("PBMS");
  out.U32(kSphVersion);
  out.Str(sph.ubm_hash());
  out.U32(sph.Dim());
  out.U32(sph.iterations());
  for (const auto &s : sph.stages()) {
    out.Vec(s.mean);
    out.Mat(s.whitening);
  }
  WriteFileAtomic(path, out.bytes());
}

SphNormalizer LoadSph(const std::string &path, const std::string &expected_ubm_hash) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "Sph file " + path);
  std::string hash = CheckHeader(&in, path, "PBMS", kSphVersion, expected_ubm_hash, "Sph normalizer");
  uint32_t r = in.U32(), k = in.U32();
  std::vector<SphNormalizer::Stage> stages;
  for (uint32_t i = 0; i < k; ++i) {
    SphNormalizer::Stage s;
    s.mean = in.Vec(r);
    s.whitening = in.Mat(r, r);
    stages.push_back(std::move(s));
  }
  in.ExpectEnd();
  return SphNormalizer(std::move(stages), hash);
}

void SavePlda(const std::string &path, const PldaModel &plda) {
  BinaryWriter out;
  out.Magic("PBMP");
  out.U32(kPldaVersion);
  out.Str(plda.ubm_hash());
  out.U32(plda.Dim());
  out.U32(static_cast<uint32_t>(plda.phi().cols()));
  out.U32(static_cast<uint32_t>(plda.gamma().cols()));
  out.Vec(plda.mu());
  out.Mat(plda.phi());
  out.Mat(plda.gamma());
  out.Vec(plda.noise());
  WriteFileAtomic(path, out.bytes());
}

PldaModel LoadPlda(const std::string &path, const std::string &expected_ubm_hash) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "PLDA file " + path);
  std::string hash = CheckHeader(&in, path, "PBMP", kPldaVersion, expected_ubm_hash, "PLDA");
  uint32_t r = in.U32(), ns = in.U32(), nc = in.U32();
  Vector mu = in.Vec(r);
  Matrix phi = in.Mat(r, ns);
  Matrix gamma = in.Mat(r, nc);
  Vector noise = in.Vec(r);
  in.ExpectEnd();
  return PldaModel(std::move(mu), std::move(phi), std::move(gamma), std::move(noise), hash);
}

}  // namespace pbmsv
