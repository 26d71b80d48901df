// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icem/aroma.hpp"
#include "icem/encoder.hpp"
#include "icem/ica.hpp"
#include "icem/matching.hpp"
#include "icem/preprocess.hpp"
#include "icem/stats.hpp"
#include "icem/synth.hpp"

namespace icem::pipeline {

// One input run: a native volume series plus its sidecar tables. Word and
// embedding paths stay empty for estimation runs (no features needed).
struct RunRef {
  std::string id;
  std::string series;
  std::string confounds;
  std::string words;
  std::string embeddings;
};

struct PipelineConfig {
  nlohmann::json raw;  // canonical merged config
  std::string out_dir = "out";
  uint64_t seed = 0;
  int jobs = 1;
  uint64_t digest = 0;  // config digest; jobs excluded by construction

  bool has_synth = false;
  synth::SynthSpec synth_spec;
  std::string synth_subject = "sub000";

  std::vector<RunRef> est, train, test;
  std::string atlas_volume, atlas_names_path, csf_mask_path;
  bool matching_enabled = false;

  preprocess::IcaPathParams ica_path;
  preprocess::EncodingPathParams enc_path;
  double fd_spike_threshold = 0.0;

  ica::IcaParams ica;

  bool use_word_rate = true;
  bool use_resid_surprisal = true;
  bool use_embeddings = true;
  std::vector<int> delays = {1, 2, 3, 4, 5};
  int lanczos_window = 3;
  bool surprisal_is_prob = false;  // word table carries P(word), not -log P
  bool surprisal_log2 = false;

  encoder::RidgeSpec ridge;

  int n_perm = 1000;
  int block_len = 0;
  double fdr_q = 0.05;

  double match_percentile = 99.0;
  bool match_weighted = false;

  aroma::Thresholds aroma_thr;
  std::vector<std::string> motion_columns = {"trans_x", "trans_y", "trans_z",
                                             "rot_x",   "rot_y",   "rot_z"};

  std::vector<std::string> networks = {"AUD", "LANG", "VIS"};

  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::string& path);
  void apply_overrides(const std::optional<std::string>& out, const std::optional<uint64_t>& seed,
                       const std::optional<int>& jobs);
  void validate() const;
};

// Generates the synthetic bundle when configured (cached) and resolves run
// references either from the bundle or from explicit paths. Must run
// before any stage.
void resolve_inputs(PipelineConfig& cfg);

void stage_preprocess(const PipelineConfig& cfg);
void stage_ica(const PipelineConfig& cfg);
void stage_project(const PipelineConfig& cfg);
void stage_features(const PipelineConfig& cfg);
void stage_encode(const PipelineConfig& cfg);
void stage_permtest(const PipelineConfig& cfg);
void stage_fdr(const PipelineConfig& cfg);
void stage_aroma(const PipelineConfig& cfg);
void stage_match_atlas(const PipelineConfig& cfg);
void stage_feature_analysis(const PipelineConfig& cfg);
void stage_report(const PipelineConfig& cfg);

void run_all(PipelineConfig& cfg);

// Cross-config group matching over completed run-all output directories.
void cmd_match_subjects(const std::vector<std::string>& subject_dirs,
                        matching::Direction direction, int top_n, bool use_actual_series,
                        const std::string& out_dir);

}  // namespace icem::pipeline
