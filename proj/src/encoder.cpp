// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/encoder.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <map>

#include "icem/common.hpp"
#include "icem/dataio.hpp"

namespace icem::encoder {
namespace {

constexpr double kTinySd = 1e-154;

// Pearson r that treats a constant side as zero correlation. Fold scoring
// must tolerate degenerate validation segments without raising.
double pearson_safe(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const auto n = x.size();
  if (n < 2) return 0.0;
  const double mx = x.mean(), my = y.mean();
  const Eigen::VectorXd xc = x.array() - mx, yc = y.array() - my;
  const double sx = xc.norm(), sy = yc.norm();
  if (sx < kTinySd || sy < kTinySd) return 0.0;
  return xc.dot(yc) / (sx * sy);
}

struct ColumnStats {
  Eigen::VectorXd mean, sd;
};

ColumnStats column_stats(const Eigen::MatrixXd& x) {
  ColumnStats st;
  st.mean = x.colwise().mean();
  st.sd.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - st.mean[j]).square().mean();
    const double sd = std::sqrt(var);
    st.sd[j] = sd < kTinySd ? 1.0 : sd;  // constant column scales to zero
  }
  return st;
}

Eigen::MatrixXd apply_stats(const Eigen::MatrixXd& x, const ColumnStats& st) {
  return (x.rowwise() - st.mean.transpose()).array().rowwise() / st.sd.transpose().array();
}

// Ridge solutions for all targets at one alpha. xtx/xty are the training
// Gram matrix and cross-products of the standardized design.
Eigen::MatrixXd solve_at_alpha(const Eigen::MatrixXd& xtx, const Eigen::MatrixXd& xty,
                               double alpha, const Eigen::MatrixXd& xs,
                               const Eigen::MatrixXd& yc) {
  Eigen::MatrixXd g = xtx;
  g.diagonal().array() += alpha;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() == Eigen::Success) return llt.solve(xty);
  // Near-singular Gram (alpha ~ 0 with collinear columns): fall back to the
  // SVD form w = V diag(s/(s^2+alpha)) U^T y.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xs, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::ArrayXd s = svd.singularValues().array();
  const Eigen::VectorXd shrink = (s / (s.square() + alpha)).matrix();
  return svd.matrixV() * shrink.asDiagonal() * (svd.matrixU().transpose() * yc);
}

std::vector<int> train_rows_for(const std::vector<std::vector<int>>& folds, size_t hold_out,
                                int t) {
  std::vector<uint8_t> held(static_cast<size_t>(t), 0);
  for (int r : folds[hold_out]) held[static_cast<size_t>(r)] = 1;
  std::vector<int> rows;
  rows.reserve(static_cast<size_t>(t) - folds[hold_out].size());
  for (int r = 0; r < t; ++r)
    if (!held[static_cast<size_t>(r)]) rows.push_back(r);
  return rows;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

}  // namespace

std::vector<double> RidgeSpec::default_grid() {
  std::vector<double> g(10);
  for (int i = 0; i < 10; ++i) g[static_cast<size_t>(i)] = std::pow(10.0, 4.0 * i / 9.0);
  return g;
}

void RidgeSpec::validate() const {
  require(!alpha_grid.empty(), Err::Config, "ridge alpha grid is empty");
  for (double a : alpha_grid)
    require(std::isfinite(a) && a > 0.0, Err::Config, "ridge alphas must be positive and finite");
  require(folds >= 2, Err::Config, "ridge needs at least 2 folds");
}

std::vector<std::vector<int>> make_folds(int t, int folds, FoldScheme scheme,
                                         const std::vector<int>& story_ids) {
  require(folds >= 2, Err::Config, "cross-validation needs at least 2 folds");
  std::vector<std::vector<int>> out(static_cast<size_t>(folds));
  if (scheme == FoldScheme::ContiguousBlocks) {
    require(t / folds >= 2, Err::FoldInfeasible,
            "contiguous folds need at least 2 rows per fold, got " + std::to_string(t) +
                " rows for " + std::to_string(folds) + " folds");
    for (int f = 0; f < folds; ++f) {
      const int lo = static_cast<int>(static_cast<int64_t>(t) * f / folds);
      const int hi = static_cast<int>(static_cast<int64_t>(t) * (f + 1) / folds);
      for (int r = lo; r < hi; ++r) out[static_cast<size_t>(f)].push_back(r);
    }
    return out;
  }
  require(static_cast<int>(story_ids.size()) == t, Err::ShapeMismatch,
          "story id per row required for by-story folds");
  // Stories get fold = (index of first appearance) mod folds, so fold
  // membership is independent of row order within stories.
  std::map<int, int> story_fold;
  int next = 0;
  for (int r = 0; r < t; ++r) {
    auto it = story_fold.find(story_ids[static_cast<size_t>(r)]);
    if (it == story_fold.end()) {
      story_fold.emplace(story_ids[static_cast<size_t>(r)], next % folds);
      ++next;
    }
  }
  require(next >= folds, Err::FoldInfeasible,
          "by-story folds need at least " + std::to_string(folds) + " stories, got " +
              std::to_string(next));
  for (int r = 0; r < t; ++r)
    out[static_cast<size_t>(story_fold.at(story_ids[static_cast<size_t>(r)]))].push_back(r);
  return out;
}

EncodingModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const RidgeSpec& spec,
                        uint64_t seed, const std::vector<int>& story_ids) {
  (void)seed;  // fold assignment is deterministic; kept for interface parity
  spec.validate();
  require(X.rows() == Y.rows(), Err::ShapeMismatch,
          "design and targets disagree on rows: " + std::to_string(X.rows()) + " vs " +
              std::to_string(Y.rows()));
  require_finite(X, "ridge design");
  require_finite(Y, "ridge targets");
  const int t = static_cast<int>(X.rows());
  const Eigen::Index d = X.cols(), m = Y.cols();
  const auto folds = make_folds(t, spec.folds, spec.fold_scheme, story_ids);
  const size_t na = spec.alpha_grid.size();

  // score[a](f, m): validation Pearson of target m in fold f at alpha a
  std::vector<Eigen::MatrixXd> score(na);
  for (auto& s : score) s = Eigen::MatrixXd::Zero(spec.folds, m);

  for (size_t f = 0; f < folds.size(); ++f) {
    const auto tr = train_rows_for(folds, f, t);
    const Eigen::MatrixXd xtr = take_rows(X, tr), ytr = take_rows(Y, tr);
    const Eigen::MatrixXd xva = take_rows(X, folds[f]), yva = take_rows(Y, folds[f]);
    const ColumnStats st = column_stats(xtr);
    const Eigen::VectorXd ymean = ytr.colwise().mean();
    const Eigen::MatrixXd xs = apply_stats(xtr, st);
    const Eigen::MatrixXd yc = ytr.rowwise() - ymean.transpose();
    const Eigen::MatrixXd xtx = xs.transpose() * xs;
    const Eigen::MatrixXd xty = xs.transpose() * yc;
    const Eigen::MatrixXd xvs = apply_stats(xva, st);
    for (size_t a = 0; a < na; ++a) {
      const Eigen::MatrixXd w = solve_at_alpha(xtx, xty, spec.alpha_grid[a], xs, yc);
      const Eigen::MatrixXd pred = (xvs * w).rowwise() + ymean.transpose();
      for (Eigen::Index j = 0; j < m; ++j)
        score[a](static_cast<Eigen::Index>(f), j) = pearson_safe(pred.col(j), yva.col(j));
    }
  }

  EncodingModel model;
  model.alpha.resize(m);
  model.cv_scores.resize(spec.folds, m);
  std::vector<size_t> alpha_idx(static_cast<size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    size_t best = 0;
    double best_mean = score[0].col(j).mean();
    for (size_t a = 1; a < na; ++a) {
      const double mu = score[a].col(j).mean();
      // strict improvement, or equal score at a smaller alpha
      if (mu > best_mean ||
          (mu == best_mean && spec.alpha_grid[a] < spec.alpha_grid[best])) {
        best = a;
        best_mean = mu;
      }
    }
    alpha_idx[static_cast<size_t>(j)] = best;
    model.alpha[j] = spec.alpha_grid[best];
    model.cv_scores.col(j) = score[best].col(j);
  }

  // Full-data refit, sharing one factorization per distinct alpha.
  const ColumnStats st = column_stats(X);
  model.col_mean = st.mean;
  model.col_sd = st.sd;
  model.intercepts = Y.colwise().mean();
  const Eigen::MatrixXd xs = apply_stats(X, st);
  const Eigen::MatrixXd yc = Y.rowwise() - model.intercepts.transpose();
  const Eigen::MatrixXd xtx = xs.transpose() * xs;
  model.weights.resize(d, m);
  std::map<size_t, std::vector<Eigen::Index>> groups;
  for (Eigen::Index j = 0; j < m; ++j) groups[alpha_idx[static_cast<size_t>(j)]].push_back(j);
  for (const auto& [a, targets] : groups) {
    Eigen::MatrixXd ysub(t, static_cast<Eigen::Index>(targets.size()));
    for (size_t i = 0; i < targets.size(); ++i)
      ysub.col(static_cast<Eigen::Index>(i)) = yc.col(targets[i]);
    const Eigen::MatrixXd w =
        solve_at_alpha(xtx, xs.transpose() * ysub, spec.alpha_grid[a], xs, ysub);
    for (size_t i = 0; i < targets.size(); ++i)
      model.weights.col(targets[i]) = w.col(static_cast<Eigen::Index>(i));
  }
  return model;
}

Eigen::MatrixXd predict(const EncodingModel& m, const Eigen::MatrixXd& X) {
  require(X.cols() == m.weights.rows(), Err::DimMismatch,
          "design has " + std::to_string(X.cols()) + " columns, model expects " +
              std::to_string(m.weights.rows()));
  require_finite(X, "prediction design");
  const Eigen::MatrixXd xs =
      (X.rowwise() - m.col_mean.transpose()).array().rowwise() / m.col_sd.transpose().array();
  return (xs * m.weights).rowwise() + m.intercepts.transpose();
}

Eigen::MatrixXd cv_oof_predictions(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                   const std::vector<std::vector<int>>& folds,
                                   const Eigen::VectorXd& alpha_per_target) {
  require(X.rows() == Y.rows(), Err::ShapeMismatch, "design and targets disagree on rows");
  require(alpha_per_target.size() == Y.cols(), Err::ShapeMismatch,
          "one alpha per target required");
  const int t = static_cast<int>(X.rows());
  Eigen::MatrixXd oof = Eigen::MatrixXd::Zero(t, Y.cols());
  std::map<double, std::vector<Eigen::Index>> groups;
  for (Eigen::Index j = 0; j < Y.cols(); ++j) groups[alpha_per_target[j]].push_back(j);
  for (size_t f = 0; f < folds.size(); ++f) {
    const auto tr = train_rows_for(folds, f, t);
    const Eigen::MatrixXd xtr = take_rows(X, tr), ytr = take_rows(Y, tr);
    const Eigen::MatrixXd xva = take_rows(X, folds[f]);
    const ColumnStats st = column_stats(xtr);
    const Eigen::VectorXd ymean = ytr.colwise().mean();
    const Eigen::MatrixXd xs = apply_stats(xtr, st);
    const Eigen::MatrixXd xtx = xs.transpose() * xs;
    const Eigen::MatrixXd xvs = apply_stats(xva, st);
    for (const auto& [alpha, targets] : groups) {
      Eigen::MatrixXd ysub(xtr.rows(), static_cast<Eigen::Index>(targets.size()));
      for (size_t i = 0; i < targets.size(); ++i)
        ysub.col(static_cast<Eigen::Index>(i)) =
            ytr.col(targets[i]).array() - ymean[targets[i]];
      const Eigen::MatrixXd w = solve_at_alpha(xtx, xs.transpose() * ysub, alpha, xs, ysub);
      const Eigen::MatrixXd pred = xvs * w;
      for (size_t i = 0; i < targets.size(); ++i)
        for (size_t r = 0; r < folds[f].size(); ++r)
          oof(folds[f][r], targets[i]) =
              pred(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) +
              ymean[targets[i]];
    }
  }
  return oof;
}

Eigen::MatrixXd targets_components(const ica::ComponentSeries& cs) { return cs.series; }

Eigen::MatrixXd targets_voxels(const VolumeSeries& s) { return s.data; }

Eigen::MatrixXd targets_roi(const VolumeSeries& s, const Atlas& atlas) {
  require(s.mask.grid.same_geometry(atlas.grid), Err::GridMismatch,
          "series and atlas are on different grids");
  const auto lin = s.mask.linear_indices();
  std::vector<Eigen::Index> col_of(s.mask.grid.nvox(), -1);
  for (size_t i = 0; i < lin.size(); ++i) col_of[lin[i]] = static_cast<Eigen::Index>(i);
  Eigen::MatrixXd out(s.t(), static_cast<Eigen::Index>(atlas.maps.size()));
  for (size_t p = 0; p < atlas.maps.size(); ++p) {
    std::vector<Eigen::Index> cols;
    const auto& member = atlas.maps[p];
    for (size_t vox = 0; vox < member.size(); ++vox)
      if (member[vox] && col_of[vox] >= 0) cols.push_back(col_of[vox]);
    require(!cols.empty(), Err::EmptyParcel,
            "parcel '" + atlas.names[p] + "' has no voxels inside the analysis mask");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(s.t());
    for (Eigen::Index c : cols) mean += s.data.col(c);
    out.col(static_cast<Eigen::Index>(p)) = mean / static_cast<double>(cols.size());
  }
  return out;
}

void save_encoding_model(const std::string& prefix, const EncodingModel& m,
                         const std::vector<std::string>& design_names,
                         const std::vector<std::string>& target_names) {
  require(static_cast<Eigen::Index>(design_names.size()) == m.weights.rows(), Err::ShapeMismatch,
          "design name per weight row required");
  require(static_cast<Eigen::Index>(target_names.size()) == m.weights.cols(), Err::ShapeMismatch,
          "target name per weight column required");
  dataio::write_matrix_tsv(prefix + ".weights.tsv", m.weights, target_names);
  dataio::write_matrix_tsv(prefix + ".cv_scores.tsv", m.cv_scores, target_names);
  nlohmann::json meta;
  meta["format"] = "icem-encoder-1";
  meta["design_names"] = design_names;
  meta["target_names"] = target_names;
  auto vec = [](const Eigen::VectorXd& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    return out;
  };
  meta["alpha"] = vec(m.alpha);
  meta["intercepts"] = vec(m.intercepts);
  meta["col_mean"] = vec(m.col_mean);
  meta["col_sd"] = vec(m.col_sd);
  dataio::write_json_file(prefix + ".meta.json", meta);
}

EncodingModel load_encoding_model(const std::string& prefix) {
  EncodingModel m;
  std::vector<std::string> names;
  m.weights = dataio::read_matrix_tsv(prefix + ".weights.tsv", &names);
  m.cv_scores = dataio::read_matrix_tsv(prefix + ".cv_scores.tsv", nullptr);
  const auto meta = dataio::parse_json_file(prefix + ".meta.json");
  require(meta.value("format", "") == "icem-encoder-1", Err::MalformedHeader,
          "unrecognized encoder model format in " + prefix + ".meta.json");
  auto vec = [&meta](const char* key) {
    const auto& arr = meta.at(key);
    Eigen::VectorXd v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    return v;
  };
  m.alpha = vec("alpha");
  m.intercepts = vec("intercepts");
  m.col_mean = vec("col_mean");
  m.col_sd = vec("col_sd");
  require(m.col_mean.size() == m.weights.rows() && m.alpha.size() == m.weights.cols(),
          Err::ShapeMismatch, "encoder model metadata disagrees with weight shape");
  return m;
}

}  // namespace icem::encoder
