// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icem/ica.hpp"
#include "icem/types.hpp"

namespace icem::encoder {

enum class FoldScheme { ContiguousBlocks, ByStory };

struct RidgeSpec {
  std::vector<double> alpha_grid = default_grid();
  int folds = 5;
  FoldScheme fold_scheme = FoldScheme::ContiguousBlocks;

  void validate() const;
  // 10 alphas log-spaced over 1e0 .. 1e4
  static std::vector<double> default_grid();
};

// Linear encoding model on a column-standardized design. weights act on
// (X - col_mean) / col_sd; intercepts are the target training means.
struct EncodingModel {
  Eigen::MatrixXd weights;     // D x M
  Eigen::VectorXd intercepts;  // M
  Eigen::VectorXd alpha;       // M, chosen per target from the grid
  Eigen::MatrixXd cv_scores;   // folds x M, fold scores at the chosen alpha
  Eigen::VectorXd col_mean;    // D
  Eigen::VectorXd col_sd;      // D
};

// Row index sets per fold. Contiguous blocks split [0,T); by-story folds
// assign stories round-robin in order of first appearance and require at
// least `folds` distinct stories.
std::vector<std::vector<int>> make_folds(int t, int folds, FoldScheme scheme,
                                         const std::vector<int>& story_ids);

// Ridge with per-target regularization chosen by cross-validated Pearson
// score (mean over folds); ties prefer the smaller alpha. Solves
// (X~^T X~ + alpha I) w = X~^T y via Cholesky (SVD fallback), where X~ is
// z-scored with training-fold statistics and y is centered.
EncodingModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const RidgeSpec& spec,
                        uint64_t seed, const std::vector<int>& story_ids = {});

Eigen::MatrixXd predict(const EncodingModel& m, const Eigen::MatrixXd& X);

// Out-of-fold predictions at fixed per-target alphas; every row of the
// result is predicted by a model that never saw it. Used for permutation
// null scoring.
Eigen::MatrixXd cv_oof_predictions(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                   const std::vector<std::vector<int>>& folds,
                                   const Eigen::VectorXd& alpha_per_target);

// Target adapters: component series (M=K), voxel series (M=V), or
// parcel-mean series (M = parcel count; a parcel with no in-mask voxel is
// an error).
Eigen::MatrixXd targets_components(const ica::ComponentSeries& cs);
Eigen::MatrixXd targets_voxels(const VolumeSeries& s);
Eigen::MatrixXd targets_roi(const VolumeSeries& s, const Atlas& atlas);

void save_encoding_model(const std::string& prefix, const EncodingModel& m,
                         const std::vector<std::string>& design_names,
                         const std::vector<std::string>& target_names);
EncodingModel load_encoding_model(const std::string& prefix);

}  // namespace icem::encoder
