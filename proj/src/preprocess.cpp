// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace icem::preprocess {

namespace {

using cplx = std::complex<double>;

struct Section {
  cplx pole_a, pole_b;  // either a conjugate pair or two real poles
};

}  // namespace

std::vector<Biquad> butter_bandpass_sos(int order, double low_hz, double high_hz, double fs_hz) {
  require(order >= 1, Err::Config, "filter order must be >= 1");
  require(fs_hz > 0.0, Err::Config, "sampling rate must be positive");
  const double nyq = 0.5 * fs_hz;
  require(low_hz > 0.0 && high_hz > low_hz && high_hz < nyq, Err::BandOutOfRange,
          "band (" + fmt_double(low_hz) + ", " + fmt_double(high_hz) +
              ") Hz must satisfy 0 < low < high < " + fmt_double(nyq));

  // pre-warped analog edge frequencies
  const double fs2 = 2.0 * fs_hz;
  const double w1 = fs2 * std::tan(M_PI * low_hz / fs_hz);
  const double w2 = fs2 * std::tan(M_PI * high_hz / fs_hz);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // analog prototype poles on the unit circle, left half-plane
  std::vector<cplx> proto;
  for (int k = 1; k <= order; ++k) {
    double theta = M_PI * (2.0 * k + order - 1.0) / (2.0 * order);
    proto.emplace_back(std::cos(theta), std::sin(theta));
  }

  // low-pass -> band-pass: each prototype pole yields two analog poles
  std::vector<Section> sections;
  std::vector<cplx> analog_poles;
  for (const cplx& p : proto) {
    if (std::abs(p.imag()) < 1e-12) {
      cplx h = p * (bw / 2.0);
      cplx d = std::sqrt(h * h - cplx(w0sq, 0.0));
      sections.push_back({h + d, h - d});
      analog_poles.push_back(h + d);
      analog_poles.push_back(h - d);
    } else if (p.imag() > 0.0) {
      cplx h = p * (bw / 2.0);
      cplx d = std::sqrt(h * h - cplx(w0sq, 0.0));
      cplx q1 = h + d, q2 = h - d;
      sections.push_back({q1, std::conj(q1)});
      sections.push_back({q2, std::conj(q2)});
      analog_poles.push_back(q1);
      analog_poles.push_back(std::conj(q1));
      analog_poles.push_back(q2);
      analog_poles.push_back(std::conj(q2));
    }
  }

  // overall digital gain: k = bw^n * fs2^n / prod(fs2 - p_analog)
  cplx denom(1.0, 0.0);
  for (const cplx& p : analog_poles) denom *= (cplx(fs2, 0.0) - p);
  double k_total = std::pow(bw, order) * std::pow(fs2, order) / denom.real();
  require(std::isfinite(k_total) && k_total > 0.0, Err::SingularSystem,
          "band-pass design produced a non-positive gain");
  const double g_section = std::pow(k_total, 1.0 / order);

  // bilinear transform per section; numerator zeros sit at z = +1 and -1
  std::vector<Biquad> sos;
  for (Section& sec : sections) {
    cplx qa = (cplx(fs2, 0.0) + sec.pole_a) / (cplx(fs2, 0.0) - sec.pole_a);
    cplx qb = (cplx(fs2, 0.0) + sec.pole_b) / (cplx(fs2, 0.0) - sec.pole_b);
    require(std::abs(qa) < 1.0 && std::abs(qb) < 1.0, Err::SingularSystem,
            "unstable digital pole in band-pass design");
    Biquad bq;
    bq.b0 = g_section;
    bq.b1 = 0.0;
    bq.b2 = -g_section;
    bq.a1 = -(qa + qb).real();
    bq.a2 = (qa * qb).real();
    sos.push_back(bq);
  }
  std::sort(sos.begin(), sos.end(), [](const Biquad& x, const Biquad& y) { return x.a2 < y.a2; });
  return sos;
}

namespace {

// steady-state filter state for a unit-amplitude constant input
void unit_zi(const Biquad& s, double& z1, double& z2) {
  double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  z1 = (s.b1 + s.b2) - (s.a1 + s.a2) * g;
  z2 = s.b2 - s.a2 * g;
}

void sosfilt_inplace(const std::vector<Biquad>& sos, Eigen::VectorXd& x) {
  for (const Biquad& s : sos) {
    double z1u, z2u;
    unit_zi(s, z1u, z2u);
    double z1 = z1u * x[0], z2 = z2u * x[0];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double xi = x[i];
      double y = s.b0 * xi + z1;
      z1 = s.b1 * xi - s.a1 * y + z2;
      z2 = s.b2 * xi - s.a2 * y;
      x[i] = y;
    }
  }
}

}  // namespace

Eigen::VectorXd sosfiltfilt(const std::vector<Biquad>& sos, const Eigen::VectorXd& x) {
  const Eigen::Index T = x.size();
  require(T >= 4, Err::ShapeMismatch, "zero-phase filtering needs at least 4 samples");
  Eigen::Index pad = std::min<Eigen::Index>(3 * (2 * static_cast<Eigen::Index>(sos.size()) + 1),
                                            T - 1);
  Eigen::VectorXd ext(T + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  ext.segment(pad, T) = x;
  for (Eigen::Index i = 0; i < pad; ++i) ext[pad + T + i] = 2.0 * x[T - 1] - x[T - 2 - i];

  sosfilt_inplace(sos, ext);
  ext.reverseInPlace();
  sosfilt_inplace(sos, ext);
  ext.reverseInPlace();
  return ext.segment(pad, T);
}

VolumeSeries detrend(const VolumeSeries& s) {
  const int T = s.t();
  require(T >= 3, Err::ShapeMismatch, "detrend needs at least three volumes");
  VolumeSeries out = s;
  const double tbar = 0.5 * (T - 1);
  double stt = 0.0;
  for (int t = 0; t < T; ++t) stt += (t - tbar) * (t - tbar);
  Eigen::VectorXd tc(T);
  for (int t = 0; t < T; ++t) tc[t] = t - tbar;
  Eigen::RowVectorXd mean = s.data.colwise().mean();
  Eigen::RowVectorXd slope = (tc.transpose() * s.data) / stt;
  for (int t = 0; t < T; ++t)
    out.data.row(t) = s.data.row(t) - mean - tc[t] * slope;
  return out;
}

VolumeSeries bandpass(const VolumeSeries& s, double low_hz, double high_hz, int order) {
  std::vector<Biquad> sos = butter_bandpass_sos(order, low_hz, high_hz, 1.0 / s.tr);
  VolumeSeries out = s;
  for (int j = 0; j < s.v(); ++j) {
    Eigen::VectorXd col = s.data.col(j);
    out.data.col(j) = sosfiltfilt(sos, col);
  }
  return out;
}

VolumeSeries regress_confounds(const VolumeSeries& s, const ConfoundMatrix& c) {
  c.validate();
  require(c.t() == s.t(), Err::ShapeMismatch,
          "confounds have " + std::to_string(c.t()) + " rows but the series has " +
              std::to_string(s.t()) + " volumes");
  Eigen::MatrixXd X(s.t(), c.p() + 1);
  X.col(0).setOnes();
  X.rightCols(c.p()) = c.cols;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = 1e-10 * sv[0];
  int rank = 0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) {
      inv[i] = 1.0 / sv[i];
      ++rank;
    }
  if (rank < X.cols())
    logging::warn("confound design is rank deficient (" + std::to_string(rank) + "/" +
                  std::to_string(X.cols()) + "), using minimum-norm solution");

  // B = V * diag(inv) * U^T * Y, residual = Y - X*B
  Eigen::MatrixXd B =
      svd.matrixV() * inv.asDiagonal() * (svd.matrixU().transpose() * s.data);
  VolumeSeries out = s;
  out.data = s.data - X * B;
  return out;
}

namespace {

std::vector<double> gauss_kernel(double sigma_vox, int radius) {
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  for (int d = -radius; d <= radius; ++d)
    k[static_cast<size_t>(d + radius)] = std::exp(-0.5 * d * d / (sigma_vox * sigma_vox));
  return k;
}

// 1D convolution along one axis of a full-grid scalar field, zero beyond
// the grid
void conv_axis(std::vector<double>& vol, const VolumeGrid& g, int axis,
               const std::vector<double>& kernel, std::vector<double>& scratch) {
  const int radius = (static_cast<int>(kernel.size()) - 1) / 2;
  const int n[3] = {g.dims[0], g.dims[1], g.dims[2]};
  const long stride[3] = {1, n[0], static_cast<long>(n[0]) * n[1]};
  scratch.assign(vol.size(), 0.0);
  const int na = n[axis];
  const long sa = stride[axis];
  const int b = (axis + 1) % 3, c = (axis + 2) % 3;
  for (int ib = 0; ib < n[b]; ++ib)
    for (int ic = 0; ic < n[c]; ++ic) {
      const long base = ib * stride[b] + ic * stride[c];
      for (int ia = 0; ia < na; ++ia) {
        double acc = 0.0;
        const int lo = std::max(0, ia - radius), hi = std::min(na - 1, ia + radius);
        for (int j = lo; j <= hi; ++j)
          acc += kernel[static_cast<size_t>(radius + ia - j)] * vol[static_cast<size_t>(base + j * sa)];
        scratch[static_cast<size_t>(base + ia * sa)] = acc;
      }
    }
  vol.swap(scratch);
}

}  // namespace

VolumeSeries smooth(const VolumeSeries& s, double fwhm_mm) {
  require(fwhm_mm >= 0.0, Err::Config, "fwhm must be nonnegative");
  if (fwhm_mm == 0.0) return s;

  const VolumeGrid& g = s.grid();
  const double sigma_mm = fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  double sigma[3];
  int radius[3];
  std::vector<double> kernel[3];
  for (int a = 0; a < 3; ++a) {
    sigma[a] = sigma_mm / g.voxel_size[a];
    radius[a] = static_cast<int>(std::ceil(3.0 * sigma[a]));
    kernel[a] = gauss_kernel(sigma[a], radius[a]);
  }

  const std::vector<long> idx = s.mask.linear_indices();
  const size_t nvox = static_cast<size_t>(g.nvox());
  std::vector<double> scratch;

  // smoothed mask weights, shared across volumes
  std::vector<double> wt(nvox, 0.0);
  for (long i : idx) wt[static_cast<size_t>(i)] = 1.0;
  for (int a = 0; a < 3; ++a) conv_axis(wt, g, a, kernel[a], scratch);

  VolumeSeries out = s;
  std::vector<double> vol(nvox);
  for (int t = 0; t < s.t(); ++t) {
    std::fill(vol.begin(), vol.end(), 0.0);
    for (int j = 0; j < s.v(); ++j) vol[static_cast<size_t>(idx[static_cast<size_t>(j)])] = s.data(t, j);
    for (int a = 0; a < 3; ++a) conv_axis(vol, g, a, kernel[a], scratch);
    for (int j = 0; j < s.v(); ++j) {
      const size_t i = static_cast<size_t>(idx[static_cast<size_t>(j)]);
      out.data(t, j) = vol[i] / wt[i];
    }
  }
  return out;
}

VolumeSeries standardize(const VolumeSeries& s) {
  VolumeSeries out = s;
  const double T = s.t();
  int constant = 0;
  for (int j = 0; j < s.v(); ++j) {
    double mean = s.data.col(j).mean();
    Eigen::VectorXd cen = s.data.col(j).array() - mean;
    double sd = std::sqrt(cen.squaredNorm() / T);
    if (sd < 1e-154) {
      out.data.col(j).setZero();
      ++constant;
    } else {
      out.data.col(j) = cen / sd;
    }
  }
  if (constant > 0)
    logging::warn("standardize: " + std::to_string(constant) +
                  " constant voxel(s) set to zero");
  return out;
}

VolumeSeries trim(const VolumeSeries& s, int head, int tail) {
  require(head >= 0 && tail >= 0, Err::Config, "trim counts must be nonnegative");
  const int keep = s.t() - head - tail;
  require(keep >= 1, Err::EmptyAfterTrim,
          "trimming " + std::to_string(head) + "+" + std::to_string(tail) + " volumes from a " +
              std::to_string(s.t()) + "-volume run leaves nothing");
  VolumeSeries out = s;
  out.data = s.data.middleRows(head, keep).eval();
  return out;
}

ConfoundMatrix trim(const ConfoundMatrix& c, int head, int tail) {
  require(head >= 0 && tail >= 0, Err::Config, "trim counts must be nonnegative");
  const int keep = c.t() - head - tail;
  require(keep >= 1, Err::EmptyAfterTrim, "trimming leaves no confound rows");
  Eigen::MatrixXd rows = c.cols.middleRows(head, keep);
  // spike columns whose flagged volume was trimmed away become all-zero,
  // which violates the one-hot invariant; drop them
  ConfoundMatrix out;
  int dropped = 0;
  for (int j = 0; j < c.p(); ++j) {
    if (c.names[static_cast<size_t>(j)].rfind("spike", 0) == 0 &&
        rows.col(j).cwiseAbs().sum() == 0.0) {
      ++dropped;
      continue;
    }
    out.names.push_back(c.names[static_cast<size_t>(j)]);
    out.cols.conservativeResize(keep, out.cols.cols() + 1);
    out.cols.col(out.cols.cols() - 1) = rows.col(j);
  }
  if (out.cols.rows() == 0) out.cols.resize(keep, 0);
  if (dropped > 0)
    logging::warn("trim: dropped " + std::to_string(dropped) +
                  " spike column(s) flagged outside the kept window");
  return out;
}

ConfoundMatrix add_fd_spikes(const ConfoundMatrix& c, double threshold) {
  require(threshold > 0.0, Err::Config, "fd spike threshold must be positive");
  int fd_col = -1;
  for (int j = 0; j < c.p(); ++j)
    if (c.names[static_cast<size_t>(j)] == "framewise_displacement" ||
        c.names[static_cast<size_t>(j)] == "fd") {
      fd_col = j;
      break;
    }
  if (fd_col < 0) {
    logging::warn("add_fd_spikes: no framewise_displacement column, nothing added");
    return c;
  }
  std::vector<uint8_t> flagged(static_cast<size_t>(c.t()), 0);
  for (int j = 0; j < c.p(); ++j) {
    if (c.names[static_cast<size_t>(j)].rfind("spike", 0) != 0) continue;
    for (int i = 0; i < c.t(); ++i)
      if (c.cols(i, j) == 1.0) flagged[static_cast<size_t>(i)] = 1;
  }
  ConfoundMatrix out = c;
  for (int i = 0; i < c.t(); ++i) {
    if (c.cols(i, fd_col) <= threshold || flagged[static_cast<size_t>(i)]) continue;
    out.cols.conservativeResize(c.t(), out.cols.cols() + 1);
    out.cols.col(out.cols.cols() - 1).setZero();
    out.cols(i, out.cols.cols() - 1) = 1.0;
    out.names.push_back("spike_fd_" + std::to_string(i));
  }
  return out;
}

VolumeSeries run_ica_path(const VolumeSeries& s, const ConfoundMatrix& c, const IcaPathParams& p) {
  VolumeSeries x = trim(s, p.trim_head, p.trim_tail);
  ConfoundMatrix cc = trim(c, p.trim_head, p.trim_tail);
  if (p.detrend) x = detrend(x);
  x = bandpass(x, p.band_low, p.band_high, p.band_order);
  x = regress_confounds(x, cc);
  x = smooth(x, p.fwhm_mm);
  if (p.standardize) x = standardize(x);
  return x;
}

VolumeSeries run_encoding_path(const VolumeSeries& s, const ConfoundMatrix& c,
                               const EncodingPathParams& p) {
  VolumeSeries x = trim(s, p.trim_head, p.trim_tail);
  ConfoundMatrix cc = trim(c, p.trim_head, p.trim_tail);
  if (p.detrend) x = detrend(x);
  x = regress_confounds(x, cc);
  if (p.standardize) x = standardize(x);
  return x;
}

}  // namespace icem::preprocess
