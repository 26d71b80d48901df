// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "icem/types.hpp"

namespace icem::ica {

struct IcaParams {
  int k = 100;
  uint64_t seed = 0;
  int max_iter = 200;
  double tol = 1e-4;
};

struct Convergence {
  int iterations = 0;
  double delta = 0.0;
  bool converged = false;
};

// Spatial decomposition X_c = A * S of a (time x voxel) series: rows of
// `sources` are component maps with unit population variance; columns of
// `mixing` are the component time courses on the estimation data.
// `unmixing` is pinv(sources)^T, so new loadings are X_new * unmixing^T.
struct IcaModel {
  int k = 0;
  Eigen::MatrixXd sources;      // K x V
  Eigen::MatrixXd mixing;       // T x K
  Eigen::MatrixXd unmixing;     // K x V
  Eigen::MatrixXd whiten_proj;  // K x V, PCA whitening as a volume->K map
  Eigen::VectorXd voxel_mean;   // V, per-voxel means removed before the fit
  Mask mask;
  double tr = 1.0;
  uint64_t seed = 0;
  Convergence convergence;

  void validate() const;
  uint64_t digest() const;
};

struct ComponentSeries {
  Eigen::MatrixXd series;  // T x K
  double tr = 0.0;
  uint64_t model_digest = 0;
  std::string run_id;
};

// FastICA with the logcosh contrast (g = tanh), symmetric decorrelation,
// PCA/SVD whitening to exactly k components after removing per-voxel
// means. Deterministic for a fixed seed. Convergence failure returns the
// best iterate with convergence.converged = false and a warning.
IcaModel fit_ica(const VolumeSeries& series, const IcaParams& p);

// Component time courses of a new run with sources held fixed:
// A_new = X_new * pinv(S). The run must carry the training grid and mask.
ComponentSeries project(const IcaModel& m, const VolumeSeries& s, const std::string& run_id = "");

// Flip every source row with a negative spatial median (and the matching
// mixing/unmixing entries) so all row medians are >= 0; exact zero medians
// are left alone. A * S is unchanged.
IcaModel sign_align(const IcaModel& m);

// Model persistence: <prefix>.sources.vxt (one volume per component),
// <prefix>.means.vxt, <prefix>.mixing.tsv, <prefix>.meta.json. The
// unmixing matrix is recomputed from the loaded sources.
void save_model(const std::string& prefix, const IcaModel& m);
IcaModel load_model(const std::string& prefix);

// Moore-Penrose pseudoinverse with singular values below 1e-10 * max
// treated as zero.
Eigen::MatrixXd pinv(const Eigen::MatrixXd& m);

}  // namespace icem::ica
