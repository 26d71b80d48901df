// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icem/types.hpp"

namespace icem::features {

// Words per TR: counts words whose midpoint lands in [t*tr, (t+1)*tr).
// A midpoint at or past n_trs*tr raises WordPastEnd.
Eigen::VectorXd word_rate(const WordTable& w, double tr, int n_trs);

// Surprisal of a probability, -log p; natural log by default, bits when
// log2 is set. p must lie in (0, 1].
double surprisal_from_prob(double p, bool use_log2 = false);

// Lanczos kernel L(x) = sinc(x) * sinc(x/a) for |x| < a, else 0.
double lanczos_kernel(double x, int a);

// Resample irregularly-timed word values onto TR bin centers
// (t*tr + tr/2) by an unnormalized windowed-sinc sum in TR units:
// out(t, :) = sum_w L((center_t - times_w)/tr) * values(w, :).
Eigen::MatrixXd lanczos_resample(const Eigen::VectorXd& times, const Eigen::MatrixXd& values,
                                 double tr, int n_trs, int window = 3);

// Residual of y regressed on [intercept | x]. The result is exactly
// orthogonal to x and mean-zero. Constant x raises DegenerateRegressor.
Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::VectorXd& x);

// Lagged copies: for each delay d (in order), every column of track
// shifted down by d rows with zero fill. Delays must be positive.
Eigen::MatrixXd fir_expand(const Eigen::MatrixXd& track, const std::vector<int>& delays);
std::vector<std::string> fir_names(const std::vector<std::string>& cols,
                                   const std::vector<int>& delays);

struct DesignBlock {
  std::string name;
  std::vector<std::string> col_names;  // one per column
  Eigen::MatrixXd cols;
};

struct Design {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

// Concatenate blocks column-wise, z-scoring each column (population
// variance). Constant columns are dropped with a warning naming them.
Design assemble_design(const std::vector<DesignBlock>& blocks);

}  // namespace icem::features
