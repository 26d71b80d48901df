// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icem/common.hpp"
#include "icem/features.hpp"

namespace icem::stats {

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  require(x.size() == y.size(), Err::ShapeMismatch,
          "correlation inputs disagree on length: " + std::to_string(x.size()) + " vs " +
              std::to_string(y.size()));
  require(x.size() >= 2, Err::ShapeMismatch, "correlation needs at least 2 samples");
  require_finite(x, "correlation input");
  require_finite(y, "correlation input");
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double sx = xc.norm(), sy = yc.norm();
  require(sx > 0.0 && sy > 0.0, Err::ConstantInput,
          "correlation undefined for a constant input");
  return xc.dot(yc) / (sx * sy);
}

double pearson_or_zero(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) return 0.0;
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double sx = xc.norm(), sy = yc.norm();
  if (sx <= 0.0 || sy <= 0.0) return 0.0;
  return xc.dot(yc) / (sx * sy);
}

void PermSpec::validate() const {
  require(n_perm >= 1, Err::Config, "permutation count must be positive");
  require(block_len >= 0, Err::Config, "block length must be >= 0");
  require(!delays.empty(), Err::Config, "at least one lag is required");
  for (int d : delays) require(d >= 1, Err::Config, "lags must be >= 1");
  require(jobs >= 1, Err::Config, "jobs must be >= 1");
}

Eigen::MatrixXd shuffle_rows(const Eigen::MatrixXd& x, Rng& rng, int block_len) {
  const int t = static_cast<int>(x.rows());
  if (block_len <= 1) {
    const auto perm = rng.permutation(t);
    Eigen::MatrixXd out(t, x.cols());
    for (int r = 0; r < t; ++r) out.row(r) = x.row(perm[static_cast<size_t>(r)]);
    return out;
  }
  const int nb = (t + block_len - 1) / block_len;
  const auto order = rng.permutation(nb);
  Eigen::MatrixXd out(t, x.cols());
  int at = 0;
  for (int b = 0; b < nb; ++b) {
    const int lo = order[static_cast<size_t>(b)] * block_len;
    const int hi = std::min(lo + block_len, t);
    out.middleRows(at, hi - lo) = x.middleRows(lo, hi - lo);
    at += hi - lo;
  }
  return out;
}

Eigen::VectorXd oof_scores(const Eigen::MatrixXd& design, const Eigen::MatrixXd& Y,
                           const std::vector<std::vector<int>>& folds,
                           const Eigen::VectorXd& alpha_per_target) {
  const Eigen::MatrixXd pred = encoder::cv_oof_predictions(design, Y, folds, alpha_per_target);
  Eigen::VectorXd r(Y.cols());
  for (Eigen::Index j = 0; j < Y.cols(); ++j) r[j] = pearson_or_zero(pred.col(j), Y.col(j));
  return r;
}

PermResult permutation_test(const Eigen::MatrixXd& features, const Eigen::MatrixXd& Y,
                            const encoder::RidgeSpec& ridge, const PermSpec& perm,
                            const std::vector<int>& story_ids) {
  perm.validate();
  require(features.rows() == Y.rows(), Err::ShapeMismatch,
          "features and targets disagree on rows");
  require_finite(features, "permutation features");
  require_finite(Y, "permutation targets");

  const Eigen::MatrixXd design = features::fir_expand(features, perm.delays);
  const encoder::EncodingModel fitted =
      encoder::fit_ridge(design, Y, ridge, perm.seed, story_ids);
  const auto folds =
      encoder::make_folds(static_cast<int>(Y.rows()), ridge.folds, ridge.fold_scheme, story_ids);

  PermResult res;
  res.alpha = fitted.alpha;
  res.observed = oof_scores(design, Y, folds, fitted.alpha);
  res.null_r.resize(perm.n_perm, Y.cols());
  parallel_for(perm.jobs, perm.n_perm, [&](int i) {
    Rng rng(perm.seed ^ static_cast<uint64_t>(i));
    const Eigen::MatrixXd shuffled = shuffle_rows(features, rng, perm.block_len);
    const Eigen::MatrixXd null_design = features::fir_expand(shuffled, perm.delays);
    res.null_r.row(i) = oof_scores(null_design, Y, folds, fitted.alpha).transpose();
  });
  res.p.resize(Y.cols());
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    const int ge = static_cast<int>((res.null_r.col(j).array() >= res.observed[j]).count());
    res.p[j] = static_cast<double>(1 + ge) / static_cast<double>(perm.n_perm + 1);
  }
  return res;
}

std::vector<uint8_t> bh_fdr(const std::vector<double>& p, double q) {
  require(std::isfinite(q) && q > 0.0 && q < 1.0, Err::Config,
          "FDR level must lie strictly between 0 and 1");
  const size_t m = p.size();
  for (double v : p)
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, Err::Config,
            "p-values must lie in [0, 1]");
  std::vector<uint8_t> reject(m, 0);
  if (m == 0) return reject;
  std::vector<size_t> idx(m);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&p](size_t a, size_t b) { return p[a] < p[b]; });
  double cutoff = -1.0;
  for (size_t k = m; k >= 1; --k) {
    if (p[idx[k - 1]] <= q * static_cast<double>(k) / static_cast<double>(m)) {
      cutoff = p[idx[k - 1]];
      break;
    }
  }
  if (cutoff < 0.0) return reject;
  // Rejection by value keeps tied p-values on the same side of the cut.
  for (size_t i = 0; i < m; ++i) reject[i] = p[i] <= cutoff ? 1 : 0;
  return reject;
}

std::vector<int> rank_components(const Eigen::VectorXd& score) {
  const size_t n = static_cast<size_t>(score.size());
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&score](size_t a, size_t b) {
    const double sa = score[static_cast<Eigen::Index>(a)];
    const double sb = score[static_cast<Eigen::Index>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  std::vector<int> rank(n, 0);
  for (size_t pos = 0; pos < n; ++pos) rank[idx[pos]] = static_cast<int>(pos) + 1;
  return rank;
}

}  // namespace icem::stats
