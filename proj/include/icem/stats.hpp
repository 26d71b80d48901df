// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icem/encoder.hpp"
#include "icem/types.hpp"

namespace icem::stats {

// Pearson correlation; a constant input is an error here. Use
// pearson_or_zero where degenerate inputs are expected and should simply
// not count as evidence.
double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
double pearson_or_zero(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct PermSpec {
  int n_perm = 1000;
  uint64_t seed = 0;
  // 0 permutes single rows; otherwise contiguous blocks of this many rows
  // are shuffled as units, preserving autocorrelation within blocks.
  int block_len = 0;
  std::vector<int> delays = {1, 2, 3, 4, 5};
  int jobs = 1;

  void validate() const;
};

struct PermResult {
  Eigen::VectorXd observed;  // M, cross-validated prediction score per target
  Eigen::VectorXd p;         // M
  Eigen::MatrixXd null_r;    // n_perm x M
  Eigen::VectorXd alpha;     // M, regularization fixed from the unshuffled fit
};

// Permutation test for encoding predictivity. Feature rows are shuffled
// before lag expansion, the lagged design is rebuilt per draw, and models
// are refit per fold with the regularization chosen on the unshuffled
// data. The score is Pearson r between targets and concatenated
// out-of-fold predictions; p = (1 + #{null >= observed}) / (n_perm + 1).
PermResult permutation_test(const Eigen::MatrixXd& features, const Eigen::MatrixXd& Y,
                            const encoder::RidgeSpec& ridge, const PermSpec& perm,
                            const std::vector<int>& story_ids = {});

// Observed statistic alone (concatenated out-of-fold r at fixed alphas).
Eigen::VectorXd oof_scores(const Eigen::MatrixXd& design, const Eigen::MatrixXd& Y,
                           const std::vector<std::vector<int>>& folds,
                           const Eigen::VectorXd& alpha_per_target);

// Benjamini-Hochberg step-up at level q. Returns one flag per p-value;
// equal p-values always share a decision.
std::vector<uint8_t> bh_fdr(const std::vector<double>& p, double q);

// 1-based rank per component, descending score; equal scores rank by
// component index.
std::vector<int> rank_components(const Eigen::VectorXd& score);

// Shuffle rows of x in contiguous blocks of block_len (0 or 1 = single
// rows). The trailing partial block moves as a unit.
Eigen::MatrixXd shuffle_rows(const Eigen::MatrixXd& x, Rng& rng, int block_len);

}  // namespace icem::stats
