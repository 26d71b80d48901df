// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/features.hpp"

#include <cmath>

namespace icem::features {

Eigen::VectorXd word_rate(const WordTable& w, double tr, int n_trs) {
  require(tr > 0.0, Err::Config, "tr must be positive");
  require(n_trs >= 1, Err::Config, "n_trs must be positive");
  Eigen::VectorXd rate = Eigen::VectorXd::Zero(n_trs);
  const double duration = tr * n_trs;
  for (const Word& word : w.words) {
    double m = word.midpoint();
    require(m < duration, Err::WordPastEnd,
            "word '" + word.token + "' midpoint " + fmt_double(m) +
                " s is at or past the scan end (" + fmt_double(duration) + " s)");
    int bin = static_cast<int>(std::floor(m / tr));
    if (bin >= n_trs) bin = n_trs - 1;  // guards m/tr rounding at the boundary
    rate[bin] += 1.0;
  }
  return rate;
}

double surprisal_from_prob(double p, bool use_log2) {
  require(p > 0.0 && p <= 1.0, Err::Config,
          "probability must lie in (0, 1], got " + fmt_double(p));
  double s = -std::log(p);
  return use_log2 ? s / std::log(2.0) : s;
}

double lanczos_kernel(double x, int a) {
  if (x == 0.0) return 1.0;
  if (std::abs(x) >= static_cast<double>(a)) return 0.0;
  const double px = M_PI * x;
  return a * std::sin(px) * std::sin(px / a) / (px * px);
}

Eigen::MatrixXd lanczos_resample(const Eigen::VectorXd& times, const Eigen::MatrixXd& values,
                                 double tr, int n_trs, int window) {
  require(tr > 0.0, Err::Config, "tr must be positive");
  require(n_trs >= 1, Err::Config, "n_trs must be positive");
  require(window >= 1, Err::Config, "lanczos window must be >= 1");
  require(times.size() == values.rows(), Err::ShapeMismatch,
          "times and value rows differ: " + std::to_string(times.size()) + " vs " +
              std::to_string(values.rows()));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_trs, values.cols());
  for (int t = 0; t < n_trs; ++t) {
    const double center = t * tr + 0.5 * tr;
    for (Eigen::Index w = 0; w < times.size(); ++w) {
      double l = lanczos_kernel((center - times[w]) / tr, window);
      if (l != 0.0) out.row(t) += l * values.row(w);
    }
  }
  return out;
}

Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::VectorXd& x) {
  require(y.size() == x.size(), Err::ShapeMismatch, "residualize: length mismatch");
  require(y.size() >= 2, Err::ShapeMismatch, "residualize needs at least two samples");
  const double xbar = x.mean(), ybar = y.mean();
  Eigen::VectorXd xc = x.array() - xbar;
  const double sxx = xc.squaredNorm();
  require(sxx > 0.0, Err::DegenerateRegressor, "regressor is constant");
  const double beta = xc.dot(y) / sxx;
  return (y.array() - ybar).matrix() - beta * xc;
}

Eigen::MatrixXd fir_expand(const Eigen::MatrixXd& track, const std::vector<int>& delays) {
  require(!delays.empty(), Err::Config, "delay set is empty");
  for (int d : delays) require(d >= 1, Err::Config, "delays must be positive integers");
  const Eigen::Index T = track.rows(), C = track.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(T, static_cast<Eigen::Index>(delays.size()) * C);
  for (size_t k = 0; k < delays.size(); ++k) {
    const int d = delays[k];
    if (d >= T) continue;  // shift falls entirely off the run; keep zeros
    out.block(d, static_cast<Eigen::Index>(k) * C, T - d, C) = track.topRows(T - d);
  }
  return out;
}

std::vector<std::string> fir_names(const std::vector<std::string>& cols,
                                   const std::vector<int>& delays) {
  std::vector<std::string> out;
  for (int d : delays)
    for (const std::string& c : cols) out.push_back(c + "_d" + std::to_string(d));
  return out;
}

Design assemble_design(const std::vector<DesignBlock>& blocks) {
  require(!blocks.empty(), Err::Config, "no design blocks");
  Eigen::Index T = blocks[0].cols.rows();
  std::vector<Eigen::VectorXd> kept;
  std::vector<std::string> names;
  std::vector<std::string> dropped;
  for (const DesignBlock& b : blocks) {
    require(b.cols.rows() == T, Err::ShapeMismatch,
            "design block '" + b.name + "' has " + std::to_string(b.cols.rows()) +
                " rows, expected " + std::to_string(T));
    require(static_cast<Eigen::Index>(b.col_names.size()) == b.cols.cols(), Err::ShapeMismatch,
            "design block '" + b.name + "' column name count mismatch");
    for (Eigen::Index j = 0; j < b.cols.cols(); ++j) {
      Eigen::VectorXd col = b.cols.col(j);
      const double mean = col.mean();
      col.array() -= mean;
      const double sd = std::sqrt(col.squaredNorm() / static_cast<double>(T));
      const std::string full = b.name + "." + b.col_names[static_cast<size_t>(j)];
      if (sd < 1e-154) {
        dropped.push_back(full);
        continue;
      }
      kept.push_back(col / sd);
      names.push_back(full);
    }
  }
  if (!dropped.empty()) {
    std::string msg = "assemble_design: dropped constant column(s):";
    for (const std::string& d : dropped) msg += " " + d;
    logging::warn(msg);
  }
  require(!kept.empty(), Err::DegenerateRegressor, "all design columns are constant");
  Design d;
  d.X.resize(T, static_cast<Eigen::Index>(kept.size()));
  for (size_t j = 0; j < kept.size(); ++j) d.X.col(static_cast<Eigen::Index>(j)) = kept[j];
  d.names = std::move(names);
  return d;
}

}  // namespace icem::features
