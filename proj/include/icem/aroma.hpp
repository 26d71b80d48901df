// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "icem/ica.hpp"
#include "icem/types.hpp"

namespace icem::aroma {

struct Thresholds {
  double csf = 0.10;
  double hfc = 0.35;
  double edge = 0.225;
  double motion = 0.45;
  double hfc_cutoff_hz = 0.10;  // high-frequency content boundary
  double percentile = 99.0;     // spatial map threshold for weight fractions
};

struct Features {
  double hfc = 0.0;          // power fraction above the cutoff frequency
  double edge_frac = 0.0;    // absolute-weight fraction on the edge mask
  double csf_frac = 0.0;     // absolute-weight fraction on the CSF mask
  double motion_corr = 0.0;  // max |r| against any motion regressor
};

enum class Label { Signal, Noise };

// One-voxel rim of the analysis mask: voxels that disappear under
// 6-connected erosion (grid boundary counts as outside).
Mask edge_mask_from(const Mask& analysis);

// Per-component classification features. The series must be the model's
// components sampled on (unregressed) data so motion coupling is still
// visible; `motion` holds only the motion regressors. csf may be null when
// no CSF segmentation exists (csf_frac stays 0).
std::vector<Features> component_features(const ica::IcaModel& model,
                                         const ica::ComponentSeries& series,
                                         const Mask& edge_mask, const Mask* csf_mask,
                                         const ConfoundMatrix& motion, const Thresholds& thr);

Label classify(const Features& f, const Thresholds& t);

std::vector<Label> classify_all(const std::vector<Features>& f, const Thresholds& t);

// Power fraction of a series above cutoff_hz, computed from a periodogram
// of the demeaned signal (DC excluded from the denominator).
double high_frequency_content(const Eigen::VectorXd& x, double tr, double cutoff_hz);

}  // namespace icem::aroma
