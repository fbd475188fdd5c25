// tools/pbmsv.cc

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

// Command-line front end. Exit codes: 0 success, 1 invalid input, 2
// numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pbmsv/error.h"
#include "pbmsv/pipeline.h"

namespace fs = std::filesystem;
using namespace pbmsv;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool verbose = false;

  void Attach(CLI::App *cmd) {
    cmd->add_option("--config", config, "key=value configuration file");
    cmd->add_option("--set", sets, "override one setting, key=value (repeatable)");
    cmd->add_flag("-v,--verbose", verbose, "log progress to stderr");
  }

  PipelineConfig Load() const {
    PipelineConfig cfg = config.empty() ? PipelineConfig() : LoadPipelineConfig(config);
    for (const auto &s : sets) cfg.SetAssignment(s);
    return cfg;
  }
};

Corpus LoadCorpus(const std::string &manifest_path, const PipelineConfig &cfg) {
  return Corpus::Load(LoadManifest(manifest_path), cfg.features);
}

int CmdFeatures(const Common &common, const std::string &manifest_path, const std::string &out) {
  PipelineConfig cfg = common.Load();
  cfg.features.Validate();
  CorpusManifest manifest = LoadManifest(manifest_path);
  std::vector<UttInfo> infos = manifest.utterances();
  fs::create_directories(fs::path(out) / "feats");
  for (UttInfo &u : infos) {
    std::string ext = fs::path(u.path).extension().string();
    FeatureMatrix m = (ext == ".wav" || ext == ".WAV")
                          ? ExtractFeatures(LoadAudio(u.path, cfg.features.sample_rate), cfg.features)
                          : ReadFeatureFile(u.path);
    m.utterance_id = u.utterance_id;
    m.speaker_id = u.speaker_id;
    m.phrase_id = u.phrase_id;
    std::string rel = "feats/" + u.utterance_id + ".feat";
    WriteFeatureFile((fs::path(out) / rel).string(), m);
    if (common.verbose) std::fprintf(stderr, "%s: %d frames\n", u.utterance_id.c_str(), m.NumFrames());
    u.path = rel;
  }
  WriteManifest((fs::path(out) / "manifest").string(), CorpusManifest(std::move(infos)));
  return 0;
}

int CmdTrainUbm(const Common &common, const std::string &manifest_path, const std::string &out) {
  PipelineConfig cfg = common.Load();
  cfg.Validate();
  Corpus corpus = LoadCorpus(manifest_path, cfg);
  AcousticModel ubm = TrainBackgroundModel(cfg, corpus);
  fs::create_directories(out);
  SaveModel((fs::path(out) / "ubm.mdl").string(), ubm);
  WriteStageMeta((fs::path(out) / "meta").string(),
                 {{"input", Sha256Hex(corpus.Hash() + cfg.SectionText({"ubm.", "hmm."}))},
                  {"output", ModelHash(ubm)}});
  if (cfg.ivector_enabled) {
    IvectorBackend b = TrainIvectorBackend(cfg, corpus, std::get<DiagGmm>(ubm));
    SaveIvectorBackend((fs::path(out) / "ivector").string(), b);
  }
  std::printf("%s\n", ModelHash(ubm).c_str());
  return 0;
}

AcousticModel LoadUbm(const std::string &dir) {
  return LoadModel((fs::path(dir) / "ubm.mdl").string());
}

int CmdBuildPbm(const Common &common, const std::string &manifest_path, const std::string &ubm_dir,
                const std::string &flavor, const std::string &out) {
  PipelineConfig cfg = common.Load();
  cfg.Validate();
  SystemKind kind = ParseSystemKind(flavor);
  Require(kind != SystemKind::kBaseline, "build-pbm: flavor must be SI or SD");
  Corpus corpus = LoadCorpus(manifest_path, cfg);
  AcousticModel ubm = LoadUbm(ubm_dir);
  Backgrounds bg;
  bg.kind = kind;
  if (kind == SystemKind::kSI)
    bg.si = BuildSiSet(cfg, corpus, ubm);
  else
    bg.sd = BuildSdSets(cfg, corpus, ubm, (fs::path(out) / "sd-cache").string());
  SaveBackgrounds(out, bg);
  return 0;
}

Backgrounds MaybeBackgrounds(const std::string &pbm_dir, const std::string &flavor,
                             const AcousticModel &ubm) {
  SystemKind kind = ParseSystemKind(flavor);
  if (kind == SystemKind::kBaseline) return Backgrounds{};
  Require(!pbm_dir.empty(), "--pbm is required for flavor " + flavor);
  return LoadBackgrounds(pbm_dir, kind, ubm);
}

int CmdEnroll(const Common &common, const std::string &manifest_path, const std::string &ubm_dir,
              const std::string &pbm_dir, const std::string &flavor, const std::string &out) {
  PipelineConfig cfg = common.Load();
  cfg.Validate();
  Corpus corpus = LoadCorpus(manifest_path, cfg);
  AcousticModel ubm = LoadUbm(ubm_dir);
  Backgrounds bg = MaybeBackgrounds(pbm_dir, flavor, ubm);
  if (cfg.ivector_enabled) {
    IvectorBackend b = LoadIvectorBackend((fs::path(ubm_dir) / "ivector").string(),
                                          std::get<DiagGmm>(ubm));
    auto models = EnrollIvectors(corpus, b, bg);
    std::vector<IVector> arc;
    for (const auto &kv : models) arc.push_back(kv.second);
    fs::create_directories(out);
    SaveIvectors((fs::path(out) / "ivectors").string(), arc);
  } else {
    SaveSpeakerModels(out, EnrollAcoustic(cfg, corpus, ubm, bg));
  }
  return 0;
}

int CmdMakeTrials(const std::string &manifest_path, const std::string &out) {
  TrialList trials = MakeAllTrials(LoadManifest(manifest_path));
  WriteTrials(out, trials);
  std::printf("%zu trials\n", trials.size());
  return 0;
}

int CmdScore(const Common &common, const std::string &manifest_path, const std::string &trials_path,
             const std::string &ubm_dir, const std::string &pbm_dir, const std::string &flavor,
             const std::string &enroll_dir, const std::string &out, std::string system) {
  PipelineConfig cfg = common.Load();
  cfg.Validate();
  CorpusManifest manifest = LoadManifest(manifest_path);
  TrialList trials = LoadTrials(trials_path, manifest);
  Corpus corpus = Corpus::Load(manifest, cfg.features);
  AcousticModel ubm = LoadUbm(ubm_dir);
  Backgrounds bg = MaybeBackgrounds(pbm_dir, flavor, ubm);
  if (system.empty()) system = SystemId(FamilyOf(ubm), cfg.ivector_enabled, bg.kind);
  ScoreSet scores;
  if (cfg.ivector_enabled) {
    IvectorBackend b = LoadIvectorBackend((fs::path(ubm_dir) / "ivector").string(),
                                          std::get<DiagGmm>(ubm));
    std::map<std::string, IVector> models;
    for (auto &w : LoadIvectors((fs::path(enroll_dir) / "ivectors").string()))
      models.emplace(w.id, std::move(w));
    scores = ScoreIvector(system, corpus, trials, b, bg, models);
  } else {
    scores = ScoreAcoustic(system, corpus, trials, ubm, bg, LoadSpeakerModels(enroll_dir, ubm, bg));
  }
  WriteScores(out, scores);
  return 0;
}

int CmdEvaluate(const Common &common, const std::string &manifest_path,
                const std::string &trials_path, const std::vector<std::string> &score_paths,
                const std::string &out) {
  PipelineConfig cfg = common.Load();
  cfg.dcf.Validate();
  CorpusManifest manifest = LoadManifest(manifest_path);
  TrialList trials = LoadTrials(trials_path, manifest);
  std::vector<ReportRow> rows;
  std::string extra;
  for (const auto &path : score_paths) {
    ScoreSet s = LoadScores(path);
    std::string id = s.system_id().empty() ? fs::path(path).stem().string() : s.system_id();
    auto r = MakeReport(id, BreakdownByNontarget(s, trials, cfg.dcf));
    rows.insert(rows.end(), r.begin(), r.end());
    if (!s.entries().empty() && !s.entries().front().selected_phrase.empty()) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s pass-phrase identification accuracy: %.2f%%\n",
                    id.c_str(), 100 * PhraseIdAccuracy(s, trials, manifest));
      extra += buf;
    }
  }
  if (!out.empty()) WriteFileAtomic(out, FormatReportTsv(rows));
  std::printf("%s%s", FormatReportTable(rows).c_str(), extra.c_str());
  return 0;
}

int CmdRun(const Common &common, const std::string &manifest, const std::string &workdir) {
  PipelineConfig cfg = common.Load();
  if (!manifest.empty()) cfg.manifest = manifest;
  if (!workdir.empty()) cfg.workdir = workdir;
  PipelineResult res = RunPipeline(cfg, common.verbose);
  std::printf("%s", ReadFile((fs::path(cfg.workdir) / "report.txt").string()).c_str());
  std::printf("\n%s", ReadFile((fs::path(cfg.workdir) / "comparison.txt").string()).c_str());
  return 0;
}

int CmdCompare(const Common &common, const std::string &manifest_path,
               const std::string &trials_path, const std::string &a, const std::string &b) {
  PipelineConfig cfg = common.Load();
  cfg.dcf.Validate();
  TrialList trials = LoadTrials(trials_path, LoadManifest(manifest_path));
  std::printf("%s", CompareSystems(LoadScores(a), LoadScores(b), trials, cfg.dcf).c_str());
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Pass-phrase dependent background models for text-dependent speaker verification"};
  app.require_subcommand(1);
  Common common;
  std::string manifest, out, ubm_dir, pbm_dir, flavor = "baseline", enroll_dir, trials, system,
                                                workdir, score_a, score_b;
  std::vector<std::string> score_paths;

  auto *features = app.add_subcommand("features", "extract features for every manifest entry");
  common.Attach(features);
  features->add_option("--manifest", manifest)->required();
  features->add_option("--out", out, "output directory")->required();

  auto *train = app.add_subcommand("train-ubm", "train the background model (and i-vector back end)");
  common.Attach(train);
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out, "output directory")->required();

  auto *build = app.add_subcommand("build-pbm", "build SI or SD pass-phrase background models");
  common.Attach(build);
  build->add_option("--manifest", manifest)->required();
  build->add_option("--ubm", ubm_dir, "train-ubm output directory")->required();
  build->add_option("--flavor", flavor, "SI or SD")->required();
  build->add_option("--out", out, "output directory")->required();

  auto *enroll = app.add_subcommand("enroll", "enroll every (speaker, phrase) of the enroll split");
  common.Attach(enroll);
  enroll->add_option("--manifest", manifest)->required();
  enroll->add_option("--ubm", ubm_dir)->required();
  enroll->add_option("--pbm", pbm_dir, "build-pbm output directory");
  enroll->add_option("--flavor", flavor, "baseline, SI or SD");
  enroll->add_option("--out", out)->required();

  auto *make_trials = app.add_subcommand("make-trials", "all enrolled models x all test utterances");
  make_trials->add_option("--manifest", manifest)->required();
  make_trials->add_option("--out", out)->required();

  auto *score = app.add_subcommand("score", "score a trial list");
  common.Attach(score);
  score->add_option("--manifest", manifest)->required();
  score->add_option("--trials", trials)->required();
  score->add_option("--ubm", ubm_dir)->required();
  score->add_option("--pbm", pbm_dir);
  score->add_option("--flavor", flavor, "baseline, SI or SD");
  score->add_option("--enroll", enroll_dir)->required();
  score->add_option("--system", system, "system id written to the score file");
  score->add_option("--out", out)->required();

  auto *evaluate = app.add_subcommand("evaluate", "EER/MinDCF per non-target type");
  common.Attach(evaluate);
  evaluate->add_option("--manifest", manifest)->required();
  evaluate->add_option("--trials", trials)->required();
  evaluate->add_option("--scores", score_paths)->required();
  evaluate->add_option("--out", out, "report.tsv to write");

  SyntheticSpec spec;
  auto *synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--out", out)->required();
  synth->add_option("--phrases", spec.num_phrases);
  synth->add_option("--speakers", spec.num_speakers);
  synth->add_option("--dev-speakers", spec.num_dev_speakers);
  synth->add_option("--ubm-speakers", spec.num_ubm_speakers);
  synth->add_option("--background-phrases", spec.num_background_phrases);
  synth->add_option("--enroll-sessions", spec.enroll_sessions);
  synth->add_option("--test-sessions", spec.test_sessions);
  synth->add_option("--dev-sessions", spec.dev_sessions);
  synth->add_option("--ubm-sessions", spec.ubm_sessions);
  synth->add_option("--frames", spec.frames_per_utterance);
  synth->add_option("--dim", spec.dim);
  synth->add_option("--phones", spec.num_phones);
  synth->add_option("--phones-per-phrase", spec.phones_per_phrase);
  synth->add_option("--phrase-separation", spec.phrase_separation);
  synth->add_option("--context-variability", spec.context_variability);
  synth->add_option("--speaker-separation", spec.speaker_separation);
  synth->add_option("--session-variability", spec.session_variability);
  synth->add_option("--seed", spec.seed);

  auto *run = app.add_subcommand("run", "run the full pipeline");
  common.Attach(run);
  run->add_option("--manifest", manifest, "overrides paths.manifest");
  run->add_option("--workdir", workdir, "overrides paths.workdir");

  auto *compare = app.add_subcommand("compare", "compare two score files on one trial list");
  common.Attach(compare);
  compare->add_option("--manifest", manifest)->required();
  compare->add_option("--trials", trials)->required();
  compare->add_option("--a", score_a, "reference (baseline) scores")->required();
  compare->add_option("--b", score_b, "compared scores")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*features) return CmdFeatures(common, manifest, out);
    if (*train) return CmdTrainUbm(common, manifest, out);
    if (*build) return CmdBuildPbm(common, manifest, ubm_dir, flavor, out);
    if (*enroll) return CmdEnroll(common, manifest, ubm_dir, pbm_dir, flavor, out);
    if (*make_trials) return CmdMakeTrials(manifest, out);
    if (*score)
      return CmdScore(common, manifest, trials, ubm_dir, pbm_dir, flavor, enroll_dir, out, system);
    if (*evaluate) return CmdEvaluate(common, manifest, trials, score_paths, out);
    if (*synth) {
      WriteSyntheticCorpus(out, GenerateSyntheticCorpus(spec));
      return 0;
    }
    if (*run) return CmdRun(common, manifest, workdir);
    if (*compare) return CmdCompare(common, manifest, trials, score_a, score_b);
  } catch (const NumericalError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
