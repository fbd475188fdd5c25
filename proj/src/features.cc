// src/features.cc

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

#include "pbmsv/features.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include "pbmsv/binary-io.h"
#include "pbmsv/error.h"

namespace pbmsv {

namespace {

constexpr double kSilenceFloorDb = -100.0;

// fftw planning is not thread-safe; execution is.
std::mutex &FftwPlanMutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(FftwPlanMutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard<std::mutex> lock(FftwPlanMutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft &) = delete;
  RealFft &operator=(const RealFft &) = delete;

  double *input() { return in_; }

  // Power spectrum |X_k|^2, k = 0..n/2.
  void PowerSpectrum(std::vector<double> *power) {
    fftw_execute(plan_);
    power->resize(n_ / 2 + 1);
    for (int k = 0; k <= n_ / 2; ++k)
      (*power)[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  int n_;
  double *in_ = nullptr;
  fftw_complex *out_ = nullptr;
  fftw_plan plan_;
};

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// num_filters x (fft_size/2 + 1) triangular weights, equally spaced on the
// mel scale between 20 Hz and Nyquist.
Matrix MelFilterbank(int num_filters, int fft_size, int sample_rate) {
  int num_bins = fft_size / 2 + 1;
  double lo = HzToMel(20.0), hi = HzToMel(sample_rate / 2.0);
  std::vector<double> centers(num_filters + 2);
  for (int i = 0; i < num_filters + 2; ++i)
    centers[i] = MelToHz(lo + (hi - lo) * i / (num_filters + 1));
  Matrix fb = Matrix::Zero(num_filters, num_bins);
  for (int m = 0; m < num_filters; ++m) {
    double left = centers[m], mid = centers[m + 1], right = centers[m + 2];
    for (int k = 0; k < num_bins; ++k) {
      double f = static_cast<double>(k) * sample_rate / fft_size;
      if (f > left && f < mid)
        fb(m, k) = (f - left) / (mid - left);
      else if (f >= mid && f < right)
        fb(m, k) = (right - f) / (right - mid);
    }
  }
  return fb;
}

int NumFrames(size_t num_samples, int window, int hop) {
  if (num_samples < static_cast<size_t>(window))
    throw ValidationError("waveform shorter than one analysis window");
  return static_cast<int>((num_samples - window) / hop) + 1;
}

uint16_t Le16(const unsigned char *p) { return p[0] | (p[1] << 8); }
uint32_t Le32(const unsigned char *p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

int FeatureConfig::WindowSamples() const {
  return static_cast<int>(std::lround(window_ms * sample_rate / 1000.0));
}

int FeatureConfig::HopSamples() const {
  return static_cast<int>(std::lround(hop_ms * sample_rate / 1000.0));
}

void FeatureConfig::Validate() const {
  Require(sample_rate > 0, "feature config: sample_rate must be positive");
  Require(window_ms > 0 && hop_ms > 0, "feature config: window/hop must be > 0");
  Require(hop_ms <= window_ms, "feature config: hop_ms must not exceed window_ms");
  Require(num_static >= 1, "feature config: num_static must be >= 1");
  Require(num_mel_filters > num_static,
          "feature config: need more mel filters than static cepstra");
  Require(fft_size >= WindowSamples(),
          "feature config: fft_size smaller than the analysis window");
  Require(delta_window >= 1, "feature config: delta_window must be >= 1");
}

Waveform LoadAudio(const std::string &path, int target_rate) {
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read audio file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    bytes = ss.str();
  }
  auto unsupported = [&path]() {
    return ValidationError("unsupported encoding: " + path);
  };
  const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
  size_t size = bytes.size();
  if (size < 12 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0)
    throw unsupported();

  int format = -1, channels = 0, bits = 0;
  long rate = 0;
  const unsigned char *data = nullptr;
  size_t data_size = 0;
  bool have_data = false;
  size_t pos = 12;
  while (pos + 8 <= size) {
    std::string id(bytes.data() + pos, 4);
    size_t len = Le32(p + pos + 4);
    size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > size) throw unsupported();
      format = Le16(p + body);
      channels = Le16(p + body + 2);
      rate = Le32(p + body + 4);
      bits = Le16(p + body + 14);
      if (format == 0xFFFE) {
        if (len < 26 || body + 26 > size) throw unsupported();
        format = Le16(p + body + 24);  // sub-format GUID starts with the tag
      }
    } else if (id == "data") {
      data = p + body;
      data_size = std::min(len, size - body);
      have_data = true;
      break;
    }
    pos = body + len + (len & 1);
  }
  if (format < 0 || !have_data || channels <= 0 || rate <= 0) throw unsupported();
  bool int_pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  bool float_pcm = format == 3 && bits == 32;
  if (!int_pcm && !float_pcm) throw unsupported();

  size_t frame_bytes = static_cast<size_t>(channels) * (bits / 8);
  size_t num = data_size / frame_bytes;
  if (num == 0) throw ValidationError("zero-length audio: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(num);
  for (size_t i = 0; i < num; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char *s = data + i * frame_bytes + c * (bits / 8);
      double v = 0.0;
      if (float_pcm) {
        float f;
        std::memcpy(&f, s, 4);
        v = f;
      } else if (bits == 8) {
        v = (static_cast<int>(s[0]) - 128) / 127.0;
      } else if (bits == 16) {
        v = static_cast<int16_t>(Le16(s)) / 32767.0;
      } else if (bits == 24) {
        int32_t x = s[0] | (s[1] << 8) | (s[2] << 16);
        if (x & 0x800000) x -= 0x1000000;
        v = x / 8388607.0;
      } else {
        v = static_cast<int32_t>(Le32(s)) / 2147483647.0;
      }
      acc += std::clamp(v, -1.0, 1.0);
    }
    w.samples[i] = acc / channels;
  }
  if (target_rate > 0 && w.sample_rate != target_rate)
    w = Resample(w, target_rate);
  return w;
}

void WriteWav16(const std::string &path, const Waveform &w) {
  BinaryWriter out;
  uint32_t data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  out.Magic("RIFF");
  out.U32(36 + data_bytes);
  out.Magic("WAVEfmt ");
  out.U32(16);
  out.U16(1);  // PCM
  out.U16(1);  // mono
  out.U32(static_cast<uint32_t>(w.sample_rate));
  out.U32(static_cast<uint32_t>(w.sample_rate) * 2);
  out.U16(2);
  out.U16(16);
  out.Magic("data");
  out.U32(data_bytes);
  for (double s : w.samples)
    out.I16(static_cast<int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0)));
  WriteFileAtomic(path, out.bytes());
}

Waveform Resample(const Waveform &w, int target_rate) {
  Require(target_rate > 0 && w.sample_rate > 0, "resample: rates must be positive");
  if (target_rate == w.sample_rate) return w;
  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const int zeros = 16;
  const double half_width = zeros / cutoff;
  const long n_in = static_cast<long>(w.samples.size());
  const long n_out = static_cast<long>(std::floor(n_in * ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.assign(std::max<long>(n_out, 0), 0.0);
  for (long n = 0; n < n_out; ++n) {
    double t = n / ratio;
    long first = static_cast<long>(std::ceil(t - half_width));
    long last = static_cast<long>(std::floor(t + half_width));
    double acc = 0.0;
    for (long k = std::max(first, 0L); k <= std::min(last, n_in - 1); ++k) {
      double d = t - k;
      double x = cutoff * d;
      double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      double win = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
      acc += w.samples[k] * cutoff * sinc * win;
    }
    out.samples[n] = std::clamp(acc, -1.0, 1.0);
  }
  return out;
}

std::vector<double> FrameLogEnergy(const Waveform &w, const FeatureConfig &cfg) {
  const int window = cfg.WindowSamples(), hop = cfg.HopSamples();
  const int num_frames = NumFrames(w.samples.size(), window, hop);
  std::vector<double> energy(num_frames);
  for (int t = 0; t < num_frames; ++t) {
    double e = 0.0;
    for (int i = 0; i < window; ++i) {
      double s = w.samples[static_cast<size_t>(t) * hop + i];
      e += s * s;
    }
    e /= window;
    energy[t] = std::max(10.0 * std::log10(std::max(e, 1e-300)), kSilenceFloorDb);
  }
  return energy;
}

FrameMatrix ComputeStaticCepstra(const Waveform &w, const FeatureConfig &cfg) {
  cfg.Validate();
  Require(w.sample_rate == cfg.sample_rate,
          "compute_mfcc: waveform rate does not match the feature config");
  const int window = cfg.WindowSamples(), hop = cfg.HopSamples();
  const int num_frames = NumFrames(w.samples.size(), window, hop);
  const int num_filters = cfg.num_mel_filters;
  const Matrix fb = MelFilterbank(num_filters, cfg.fft_size, cfg.sample_rate);

  std::vector<double> hamming(window);
  for (int i = 0; i < window; ++i)
    hamming[i] = window == 1 ? 1.0
                             : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i /
                                                      (window - 1));
  Matrix dct(cfg.num_static, num_filters);
  for (int k = 0; k < cfg.num_static; ++k)
    for (int m = 0; m < num_filters; ++m)
      dct(k, m) = std::sqrt(2.0 / num_filters) *
                  std::cos(std::numbers::pi * (k + 1) * (m + 0.5) / num_filters);

  RealFft fft(cfg.fft_size);
  std::vector<double> power;
  Vector log_mel(num_filters);
  FrameMatrix out(num_frames, cfg.num_static);
  for (int t = 0; t < num_frames; ++t) {
    const double *frame = w.samples.data() + static_cast<size_t>(t) * hop;
    double *in = fft.input();
    // Pre-emphasis within the frame; the first sample uses itself as history.
    for (int i = 0; i < window; ++i) {
      double prev = i > 0 ? frame[i - 1] : frame[0];
      in[i] = (frame[i] - cfg.preemphasis * prev) * hamming[i];
    }
    std::fill(in + window, in + cfg.fft_size, 0.0);
    fft.PowerSpectrum(&power);
    Eigen::Map<const Vector> pw(power.data(), static_cast<long>(power.size()));
    log_mel = (fb * pw).array().max(1e-10).log().matrix();
    out.row(t) = (dct * log_mel).transpose();
  }
  return out;
}

FrameMatrix AppendDeltas(const FrameMatrix &statics, int delta_window) {
  Require(delta_window >= 1, "deltas: window must be >= 1");
  const long L = statics.rows(), D = statics.cols();
  auto regress = [L, D, delta_window](const FrameMatrix &x) {
    double denom = 0.0;
    for (int n = 1; n <= delta_window; ++n) denom += 2.0 * n * n;
    FrameMatrix d = FrameMatrix::Zero(L, D);
    for (long t = 0; t < L; ++t) {
      for (int n = 1; n <= delta_window; ++n) {
        long fwd = std::min(t + n, L - 1), back = std::max(t - n, 0L);
        d.row(t) += n * (x.row(fwd) - x.row(back));
      }
      d.row(t) /= denom;
    }
    return d;
  };
  FrameMatrix delta = regress(statics);
  FrameMatrix delta2 = regress(delta);
  FrameMatrix out(L, 3 * D);
  out << statics, delta, delta2;
  return out;
}

FeatureMatrix ComputeMfcc(const Waveform &w, const FeatureConfig &cfg) {
  FeatureMatrix m;
  m.frames = AppendDeltas(ComputeStaticCepstra(w, cfg), cfg.delta_window);
  return m;
}

FrameMatrix ApplyRasta(const FrameMatrix &m) {
  Require(m.rows() > 0, "rasta: empty feature matrix");
  static constexpr double kNumer[5] = {0.2, 0.1, 0.0, -0.1, -0.2};
  static constexpr double kPole = 0.98;
  const long L = m.rows();
  FrameMatrix y = FrameMatrix::Zero(L, m.cols());
  for (long c = 0; c < m.cols(); ++c) {
    double prev = 0.0;
    for (long t = 4; t < L; ++t) {
      double acc = kPole * prev;
      for (int k = 0; k < 5; ++k) acc += kNumer[k] * m(t - k, c);
      y(t, c) = acc;
      prev = acc;
    }
  }
  return y;
}

FeatureMatrix ApplyRasta(const FeatureMatrix &m) {
  FeatureMatrix out = m;
  out.frames = ApplyRasta(m.frames);
  return out;
}

std::vector<bool> DetectSpeech(std::span<const double> log_energy_db,
                               double threshold_db) {
  Require(!log_energy_db.empty(), "vad: empty energy sequence");
  double max_db = *std::max_element(log_energy_db.begin(), log_energy_db.end());
  std::vector<bool> mask(log_energy_db.size());
  bool any = false;
  for (size_t t = 0; t < log_energy_db.size(); ++t) {
    double e = log_energy_db[t];
    mask[t] = e > kSilenceFloorDb && e >= max_db - threshold_db;
    any = any || mask[t];
  }
  if (!any) throw ValidationError("no speech detected");
  return mask;
}

std::vector<bool> DetectSpeech(const FeatureMatrix &m,
                               std::span<const double> log_energy_db,
                               double threshold_db) {
  Require(static_cast<long>(log_energy_db.size()) == m.frames.rows(),
          "vad: energy length does not match the number of frames");
  return DetectSpeech(log_energy_db, threshold_db);
}

FeatureMatrix SelectFrames(const FeatureMatrix &m, const std::vector<bool> &mask) {
  Require(static_cast<long>(mask.size()) == m.frames.rows(),
          "select frames: mask length mismatch");
  FeatureMatrix out = m;
  long kept = std::count(mask.begin(), mask.end(), true);
  out.frames.resize(kept, m.frames.cols());
  long r = 0;
  for (size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) out.frames.row(r++) = m.frames.row(static_cast<long>(t));
  return out;
}

FeatureMatrix Cmvn(const FeatureMatrix &m) {
  const long L = m.frames.rows();
  Require(L >= 2, "cmvn: need at least two frames");
  FeatureMatrix out = m;
  for (long c = 0; c < m.frames.cols(); ++c) {
    auto col = m.frames.col(c);
    double mean = col.mean();
    double var = (col.array() - mean).square().mean();
    if (var <= 1e-20 * std::max(1.0, mean * mean)) {
      out.frames.col(c).setZero();
      continue;
    }
    double inv_std = 1.0 / std::sqrt(var);
    out.frames.col(c) = (col.array() - mean) * inv_std;
  }
  return out;
}

FeatureMatrix ExtractFeatures(const Waveform &w, const FeatureConfig &cfg) {
  FrameMatrix statics = ComputeStaticCepstra(w, cfg);
  if (cfg.rasta_enabled) statics = ApplyRasta(statics);
  FeatureMatrix m;
  m.frames = AppendDeltas(statics, cfg.delta_window);
  if (cfg.vad_enabled) {
    std::vector<double> energy = FrameLogEnergy(w, cfg);
    m = SelectFrames(m, DetectSpeech(m, energy, cfg.vad_threshold_db));
  }
  if (cfg.cmvn_enabled) m = Cmvn(m);
  return m;
}

void WriteFeatureFile(const std::string &path, const FeatureMatrix &m) {
  BinaryWriter out;
  out.Magic("PBMF");
  out.U32(1);
  out.U64(static_cast<uint64_t>(m.frames.rows()));
  out.U64(static_cast<uint64_t>(m.frames.cols()));
  out.Str(m.utterance_id);
  out.Str(m.phrase_id);
  out.Str(m.speaker_id);
  for (long r = 0; r < m.frames.rows(); ++r)
    for (long c = 0; c < m.frames.cols(); ++c)
      out.F32(static_cast<float>(m.frames(r, c)));
  WriteFileAtomic(path, out.bytes());
}

FeatureMatrix ReadFeatureFile(const std::string &path) {
  std::string bytes = ReadFile(path);
  BinaryReader in(bytes, "feature file " + path);
  in.ExpectMagic("PBMF");
  uint32_t version = in.U32();
  if (version != 1)
    throw ValidationError("feature file " + path + ": unsupported version " +
                          std::to_string(version));
  uint64_t L = in.U64(), F = in.U64();
  FeatureMatrix m;
  m.utterance_id = in.Str();
  m.phrase_id = in.Str();
  m.speaker_id = in.Str();
  in.Need(L * F * sizeof(float));
  m.frames.resize(static_cast<long>(L), static_cast<long>(F));
  for (uint64_t r = 0; r < L; ++r)
    for (uint64_t c = 0; c < F; ++c) {
      float v = in.F32();
      if (!std::isfinite(v))
        throw ValidationError("feature file " + path + ": non-finite value");
      m.frames(static_cast<long>(r), static_cast<long>(c)) = v;
    }
  in.ExpectEnd();
  return m;
}

std::map<std::string, std::string> ReadScp(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scp file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string key, value, extra;
    if (!(ss >> key) || key[0] == '#') continue;
    if (!(ss >> value) || (ss >> extra))
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": expected 'utterance_id path'");
    if (!out.emplace(key, value).second)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": duplicate utterance id " + key);
  }
  return out;
}

void WriteScp(const std::string &path,
              const std::map<std::string, std::string> &entries) {
  std::string text;
  for (const auto &[key, value] : entries) text += key + " " + value + "\n";
  WriteFileAtomic(path, text);
}

}  // namespace pbmsv
