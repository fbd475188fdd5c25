// include/pbmsv/features.h

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

// Acoustic front end: RIFF/PCM loading, MFCC + deltas, RASTA filtering,
// energy VAD and utterance-level CMVN, plus the binary feature cache.

#ifndef PBMSV_FEATURES_H_
#define PBMSV_FEATURES_H_

#include <map>
#include <span>
#include <string>
#include <vector>

#include "pbmsv/types.h"

namespace pbmsv {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

struct FeatureConfig {
  double window_ms = 20.0;
  double hop_ms = 10.0;
  int num_static = 19;
  int num_mel_filters = 24;
  int fft_size = 512;
  int sample_rate = 16000;
  double preemphasis = 0.97;
  int delta_window = 2;
  // Frames more than this many dB below the loudest frame are dropped.
  double vad_threshold_db = 30.0;
  bool rasta_enabled = true;
  bool vad_enabled = true;
  bool cmvn_enabled = true;

  int WindowSamples() const;
  int HopSamples() const;
  int OutputDim() const { return 3 * num_static; }
  void Validate() const;
};

/// Reads an uncompressed RIFF/WAVE file (8/16/24/32-bit integer PCM or
/// 32-bit float). Multi-channel audio is averaged to mono. Audio at another
/// rate than `target_rate` is resampled; pass 0 to keep the file's rate.
Waveform LoadAudio(const std::string &path, int target_rate = 16000);

/// Writes 16-bit mono PCM. Samples are clipped to [-1, 1].
void WriteWav16(const std::string &path, const Waveform &w);

/// Band-limited (windowed-sinc) sample-rate conversion.
Waveform Resample(const Waveform &w, int target_rate);

/// Per-frame log energy in dB (10 log10 of the mean square of the frame),
/// one entry per analysis frame.
std::vector<double> FrameLogEnergy(const Waveform &w, const FeatureConfig &cfg);

/// Static cepstra c1..c{num_static}, one row per frame, no post-processing.
FrameMatrix ComputeStaticCepstra(const Waveform &w, const FeatureConfig &cfg);

/// Appends regression deltas and delta-deltas (window +-cfg.delta_window,
/// edge frames replicated); output width is 3 x input width.
FrameMatrix AppendDeltas(const FrameMatrix &statics, int delta_window = 2);

/// Statics + deltas + delta-deltas with no RASTA, VAD or CMVN. The number of
/// rows is floor((num_samples - window) / hop) + 1.
FeatureMatrix ComputeMfcc(const Waveform &w, const FeatureConfig &cfg);

/// RASTA band-pass filter applied along time to every column of `m`.
/// Difference equation
///   y[t] = 0.98 y[t-1] + 0.2 x[t] + 0.1 x[t-1] - 0.1 x[t-3] - 0.2 x[t-4],
/// with the first four outputs held at zero while the FIR state fills.
FrameMatrix ApplyRasta(const FrameMatrix &m);
FeatureMatrix ApplyRasta(const FeatureMatrix &m);

/// Energy VAD: keeps frames whose log energy is within `threshold_db` of the
/// utterance maximum. Throws "no speech detected" when nothing qualifies
/// (every frame at or below the absolute silence floor).
std::vector<bool> DetectSpeech(std::span<const double> log_energy_db,
                               double threshold_db = 30.0);
std::vector<bool> DetectSpeech(const FeatureMatrix &m,
                               std::span<const double> log_energy_db,
                               double threshold_db = 30.0);

FeatureMatrix SelectFrames(const FeatureMatrix &m, const std::vector<bool> &mask);

/// Per-dimension zero mean / unit variance over the utterance. Columns with
/// (numerically) zero variance become all zeros.
FeatureMatrix Cmvn(const FeatureMatrix &m);

/// Full front end: MFCC statics -> RASTA -> deltas -> VAD -> CMVN, each stage
/// gated by its flag in `cfg`.
FeatureMatrix ExtractFeatures(const Waveform &w, const FeatureConfig &cfg);

// Feature cache: "PBMF" magic, version, L, F, ids, row-major float32 frames.
void WriteFeatureFile(const std::string &path, const FeatureMatrix &m);
FeatureMatrix ReadFeatureFile(const std::string &path);

/// Plain-text "utterance_id path" lines.
std::map<std::string, std::string> ReadScp(const std::string &path);
void WriteScp(const std::string &path,
              const std::map<std::string, std::string> &entries);

}  // namespace pbmsv

#endif  // PBMSV_FEATURES_H_
