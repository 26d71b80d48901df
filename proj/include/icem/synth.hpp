// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icem/types.hpp"

namespace icem::synth {

enum class Driver { None, WordRate, ResidSurprisal, Embedding, Artifact };

std::string driver_name(Driver d);
Driver driver_from_name(const std::string& s);

struct ComponentSpec {
  std::string name;
  Driver driver = Driver::None;
  int emb_index = 0;  // which embedding dimension drives the course
  // (lag, weight) pairs applied to the driving track
  std::vector<std::pair<int, double>> fir = default_fir();

  static std::vector<std::pair<int, double>> default_fir();
};

struct SynthSpec {
  std::array<int, 3> dims{16, 16, 16};
  std::array<double, 3> voxel_size{2.0, 2.0, 2.0};
  double tr = 2.0;
  int n_trs = 300;
  int est_runs = 1;
  int train_runs = 3;
  int test_runs = 1;
  double noise_sd = 0.1;
  uint64_t seed = 42;
  double blob_sigma_vox = 1.5;  // Gaussian width of planted blobs, voxels
  double blob_jitter = 0.3;    // multiplicative within-blob roughness
  int emb_dim = 8;
  int subjects = 1;
  bool shuffle_components = false;  // per-subject component order
  std::vector<ComponentSpec> components = default_components();

  void validate() const;
  static std::vector<ComponentSpec> default_components();
  static SynthSpec defaults() { return {}; }
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

// Planted spatial sources in canonical component order.
struct GroundTruth {
  Mask mask;
  Eigen::MatrixXd sources;  // K x V, peak |value| 1 per row
  std::vector<ComponentSpec> components;
  std::vector<int> driven;    // indices with stimulus-locked drivers
  std::vector<int> artifact;  // indices with Driver::Artifact
};

GroundTruth build_truth(const SynthSpec& spec);

struct Story {
  std::string name;
  WordTable words;
  EmbeddingTable emb;
};

Story make_story(const SynthSpec& spec, const std::string& name, uint64_t story_seed);

struct RunData {
  VolumeSeries series;
  ConfoundMatrix confounds;
  Eigen::MatrixXd mixing;  // T x K, canonical order; the planted courses
};

RunData make_run(const SynthSpec& spec, const GroundTruth& truth, const Story& story,
                 uint64_t run_seed);

// Stimulus-locked course for one component given its driving track.
Eigen::VectorXd fir_course(const Eigen::VectorXd& track,
                           const std::vector<std::pair<int, double>>& fir);

// Derive the driving tracks of a story on the scan grid: word rate,
// rate-residualized surprisal, and one track per embedding dimension.
struct Tracks {
  Eigen::VectorXd rate;
  Eigen::VectorXd resid_surprisal;
  Eigen::MatrixXd emb;  // n_trs x emb_dim
};
Tracks story_tracks(const Story& story, double tr, int n_trs);

// Write a full bundle (stimulus tables, per-subject runs, ground truth,
// manifest.json) under out_dir. Returns the manifest.
nlohmann::json generate(const SynthSpec& spec, const std::string& out_dir);

// Greedy one-to-one alignment of estimated spatial maps to planted ones by
// absolute Pearson correlation.
struct RecoveryScore {
  std::vector<int> assignment;  // per truth row: matched estimate row or -1
  std::vector<double> abs_r;    // per truth row
  std::vector<int> sign;        // sign of the matched correlation
};

RecoveryScore score_recovery(const Eigen::MatrixXd& truth_sources,
                             const Eigen::MatrixXd& est_sources);

}  // namespace icem::synth
