// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/aroma.hpp"

#include <cmath>

#include "icem/common.hpp"
#include "icem/matching.hpp"
#include "icem/stats.hpp"

namespace icem::aroma {

Mask edge_mask_from(const Mask& analysis) {
  const auto& g = analysis.grid;
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  auto at = [&](int x, int y, int z) -> uint8_t {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return 0;
    return analysis.in[grid_index(g, x, y, z)];
  };
  Mask edge;
  edge.grid = g;
  edge.in.assign(g.nvox(), 0);
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!at(x, y, z)) continue;
        const bool interior = at(x - 1, y, z) && at(x + 1, y, z) && at(x, y - 1, z) &&
                              at(x, y + 1, z) && at(x, y, z - 1) && at(x, y, z + 1);
        if (!interior) edge.in[grid_index(g, x, y, z)] = 1;
      }
  return edge;
}

double high_frequency_content(const Eigen::VectorXd& x, double tr, double cutoff_hz) {
  require(tr > 0.0, Err::Config, "repetition time must be positive");
  require(cutoff_hz > 0.0, Err::Config, "frequency cutoff must be positive");
  const Eigen::Index t = x.size();
  require(t >= 4, Err::ShapeMismatch, "series too short for a periodogram");
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::Index half = t / 2;
  double total = 0.0, high = 0.0;
  const double w0 = 2.0 * 3.141592653589793238462643383279502884 / static_cast<double>(t);
  for (Eigen::Index j = 1; j <= half; ++j) {
    double re = 0.0, im = 0.0;
    for (Eigen::Index n = 0; n < t; ++n) {
      const double ph = w0 * static_cast<double>(j) * static_cast<double>(n);
      re += xc[n] * std::cos(ph);
      im -= xc[n] * std::sin(ph);
    }
    const double p = re * re + im * im;
    total += p;
    const double f = static_cast<double>(j) / (static_cast<double>(t) * tr);
    if (f > cutoff_hz) high += p;
  }
  if (total <= 0.0) return 0.0;  // constant series carries no content at all
  return high / total;
}

namespace {

// Absolute-weight fraction of the thresholded map falling on `where`,
// relative to all retained weight.
double weight_fraction(const matching::ThresholdedMap& tm, const std::vector<long>& lin,
                       const Mask& where) {
  double total = 0.0, inside = 0.0;
  for (Eigen::Index i = 0; i < tm.values.size(); ++i) {
    if (!tm.retained[static_cast<size_t>(i)]) continue;
    const double w = std::abs(tm.values[i]);
    total += w;
    if (where.in[lin[static_cast<size_t>(i)]]) inside += w;
  }
  if (total <= 0.0) return 0.0;
  return inside / total;
}

}  // namespace

std::vector<Features> component_features(const ica::IcaModel& model,
                                         const ica::ComponentSeries& series,
                                         const Mask& edge_mask, const Mask* csf_mask,
                                         const ConfoundMatrix& motion, const Thresholds& thr) {
  require(edge_mask.grid.same_geometry(model.mask.grid), Err::GridMismatch,
          "edge mask is on a different grid than the model");
  if (csf_mask != nullptr)
    require(csf_mask->grid.same_geometry(model.mask.grid), Err::GridMismatch,
            "CSF mask is on a different grid than the model");
  require(series.series.cols() == model.sources.rows(), Err::ShapeMismatch,
          "component series and model disagree on component count");
  if (motion.p() > 0)
    require(motion.t() == series.series.rows(), Err::ShapeMismatch,
            "motion regressors and component series disagree on rows");

  const auto lin = model.mask.linear_indices();
  const Eigen::Index k = model.sources.rows();
  std::vector<Features> out(static_cast<size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    Features f;
    f.hfc = high_frequency_content(series.series.col(c), series.tr, thr.hfc_cutoff_hz);
    const matching::ThresholdedMap tm =
        matching::threshold_map(model.sources.row(c), thr.percentile);
    f.edge_frac = weight_fraction(tm, lin, edge_mask);
    if (csf_mask != nullptr) f.csf_frac = weight_fraction(tm, lin, *csf_mask);
    for (Eigen::Index j = 0; j < motion.p(); ++j) {
      const double r = std::abs(stats::pearson_or_zero(series.series.col(c), motion.cols.col(j)));
      f.motion_corr = std::max(f.motion_corr, r);
    }
    out[static_cast<size_t>(c)] = f;
  }
  return out;
}

Label classify(const Features& f, const Thresholds& t) {
  if (f.csf_frac > t.csf) return Label::Noise;
  if (f.hfc > t.hfc) return Label::Noise;
  if (f.edge_frac > t.edge && f.motion_corr > t.motion) return Label::Noise;
  return Label::Signal;
}

std::vector<Label> classify_all(const std::vector<Features>& f, const Thresholds& t) {
  std::vector<Label> out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[i] = classify(f[i], t);
  return out;
}

}  // namespace icem::aroma
