// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "icem/types.hpp"

namespace icem::preprocess {

// One second-order IIR section (direct form II transposed), normalized so
// the leading denominator coefficient is 1.
struct Biquad {
  double b0 = 0, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

// Butterworth band-pass design via the analog prototype, band transform
// and bilinear map with frequency pre-warping. Frequencies in Hz.
std::vector<Biquad> butter_bandpass_sos(int order, double low_hz, double high_hz, double fs_hz);

// Zero-phase filtering: forward pass, backward pass, odd-reflection
// padding at both ends with per-section steady-state initial conditions.
Eigen::VectorXd sosfiltfilt(const std::vector<Biquad>& sos, const Eigen::VectorXd& x);

// Per-voxel removal of the least-squares line over volume index.
VolumeSeries detrend(const VolumeSeries& s);

// Zero-phase 5th-order (by default) Butterworth band-pass of every voxel.
VolumeSeries bandpass(const VolumeSeries& s, double low_hz, double high_hz, int order = 5);

// Residualize every voxel against [intercept | confounds] by minimum-norm
// least squares (singular values below 1e-10 * max are dropped).
VolumeSeries regress_confounds(const VolumeSeries& s, const ConfoundMatrix& c);

// Mask-aware separable Gaussian smoothing. Kernel sigma per axis is
// fwhm_mm / (2*sqrt(2*ln 2)) / voxel_size, truncated at ceil(3*sigma)
// voxels; out-of-mask voxels contribute nothing and the result is
// renormalized by the smoothed mask so values near edges are unbiased.
VolumeSeries smooth(const VolumeSeries& s, double fwhm_mm);

// Per-voxel z-scoring with population (1/N) variance. Constant voxels
// become all-zero columns and are counted in one warning.
VolumeSeries standardize(const VolumeSeries& s);

// Drop volumes from the head/tail of a run.
VolumeSeries trim(const VolumeSeries& s, int head, int tail);
ConfoundMatrix trim(const ConfoundMatrix& c, int head, int tail);

// Append one-hot spike regressors for volumes whose framewise
// displacement (column "framewise_displacement" or "fd") exceeds the
// threshold. Missing FD column leaves the matrix unchanged with a warning.
ConfoundMatrix add_fd_spikes(const ConfoundMatrix& c, double threshold);

struct IcaPathParams {
  int trim_head = 10;
  int trim_tail = 10;
  bool detrend = true;
  double band_low = 0.01;
  double band_high = 0.1;
  int band_order = 5;
  double fwhm_mm = 4.0;
  bool standardize = true;
};

struct EncodingPathParams {
  int trim_head = 10;
  int trim_tail = 10;
  bool detrend = true;
  bool standardize = true;
};

// Component-estimation chain: trim, detrend, band-pass, confound
// regression, smooth, standardize.
VolumeSeries run_ica_path(const VolumeSeries& s, const ConfoundMatrix& c, const IcaPathParams& p);

// Encoding chain: trim, detrend, confound regression, standardize. No
// band-pass or smoothing, so stimulus-locked high-frequency structure
// survives.
VolumeSeries run_encoding_path(const VolumeSeries& s, const ConfoundMatrix& c,
                               const EncodingPathParams& p);

}  // namespace icem::preprocess
