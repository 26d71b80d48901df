// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/ica.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "icem/dataio.hpp"

namespace icem::ica {

namespace {

// B <- (B B^T)^{-1/2} B, the symmetric decorrelation step
void sym_decorrelate(Eigen::MatrixXd& B) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B * B.transpose());
  require(es.info() == Eigen::Success, Err::SingularSystem, "eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();
  require(ev.minCoeff() > 1e-12 * std::max(ev.maxCoeff(), 1e-300), Err::RankTooLow,
          "degenerate unmixing iterate");
  Eigen::VectorXd inv_sqrt = ev.array().sqrt().inverse();
  B = es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * B;
}

double row_median(const Eigen::VectorXd& row) {
  std::vector<double> v(row.data(), row.data() + row.size());
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace

Eigen::MatrixXd pinv(const Eigen::MatrixXd& m) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() > 0 ? sv[0] : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

void IcaModel::validate() const {
  require(k >= 2, Err::Config, "model must hold at least two components");
  require(sources.rows() == k && unmixing.rows() == k, Err::ShapeMismatch,
          "model matrices disagree with k");
  require(sources.cols() == mask.v(), Err::SizeMismatch,
          "sources have " + std::to_string(sources.cols()) + " voxels but mask includes " +
              std::to_string(mask.v()));
  require_finite(sources, "sources");
  const double V = static_cast<double>(sources.cols());
  for (int i = 0; i < k; ++i) {
    double mean = sources.row(i).mean();
    double var = sources.row(i).squaredNorm() / V - mean * mean;
    require(std::abs(var - 1.0) < 1e-3, Err::ShapeMismatch,
            "source row " + std::to_string(i) + " is not unit-variance (pop var " +
                fmt_double(var) + ")");
  }
}

uint64_t IcaModel::digest() const {
  Fnv f;
  f.i64(k);
  f.u64(seed);
  f.mat(sources);
  f.u64(mask.digest());
  return f.h;
}

IcaModel fit_ica(const VolumeSeries& series, const IcaParams& p) {
  series.validate();
  const int T = series.t(), V = series.v();
  require(p.k >= 2, Err::Config, "k must be at least 2");
  require(p.max_iter >= 1, Err::Config, "max_iter must be positive");
  require(p.tol > 0.0, Err::Config, "tol must be positive");
  require(p.k < T && p.k <= V, Err::RankTooLow,
          "k=" + std::to_string(p.k) + " exceeds the " + std::to_string(std::min(T - 1, V)) +
              " directions available from T=" + std::to_string(T) + ", V=" + std::to_string(V));

  // centering voxel columns caps the usable rank at T-1
  Eigen::VectorXd mean = series.data.colwise().mean();
  Eigen::MatrixXd Xc = series.data.rowwise() - mean.transpose();

  {
    // the contrast expectations assume roughly standardized input
    double worst_sd = 0.0, worst_mean = mean.cwiseAbs().maxCoeff();
    for (int j = 0; j < V; ++j) {
      double sd = std::sqrt(Xc.col(j).squaredNorm() / T);
      worst_sd = std::max(worst_sd, std::abs(sd - 1.0));
    }
    if (worst_mean > 1e-6 || worst_sd > 1e-3)
      logging::warn("fit_ica: input does not look standardized (max |mean| " +
                    fmt_double(worst_mean) + ", max |sd-1| " + fmt_double(worst_sd) + ")");
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  require(sv.size() >= p.k && sv[p.k - 1] > 1e-10 * sv[0], Err::RankTooLow,
          "data rank below k=" + std::to_string(p.k) + " after whitening tolerance");

  // whitened spatial data: Z = sqrt(V) * Sigma_k^{-1} U_k^T Xc, so that the
  // population covariance of Z's columns (voxels as samples) is identity
  const double rootV = std::sqrt(static_cast<double>(V));
  Eigen::MatrixXd Uk = svd.matrixU().leftCols(p.k);
  Eigen::VectorXd sk_inv = sv.head(p.k).array().inverse();
  Eigen::MatrixXd Z = rootV * (sk_inv.asDiagonal() * (Uk.transpose() * Xc));

  Rng rng(p.seed);
  Eigen::MatrixXd B(p.k, p.k);
  for (int i = 0; i < p.k; ++i)
    for (int j = 0; j < p.k; ++j) B(i, j) = rng.normal();
  sym_decorrelate(B);

  Convergence conv;
  const double invV = 1.0 / static_cast<double>(V);
  for (int it = 1; it <= p.max_iter; ++it) {
    Eigen::MatrixXd Y = B * Z;                      // k x V
    Eigen::MatrixXd G = Y.array().tanh().matrix();  // g(y)
    Eigen::VectorXd gp(p.k);                        // mean g'(y) per row
    for (int i = 0; i < p.k; ++i)
      gp[i] = 1.0 - G.row(i).squaredNorm() * invV;
    Eigen::MatrixXd Bn = (G * Z.transpose()) * invV - gp.asDiagonal() * B;
    sym_decorrelate(Bn);
    double delta = 0.0;
    Eigen::MatrixXd D = Bn * B.transpose();
    for (int i = 0; i < p.k; ++i) delta = std::max(delta, std::abs(1.0 - std::abs(D(i, i))));
    B = Bn;
    conv.iterations = it;
    conv.delta = delta;
    if (delta < p.tol) {
      conv.converged = true;
      break;
    }
  }
  if (!conv.converged)
    logging::warn("fit_ica: not converged after " + std::to_string(conv.iterations) +
                  " iterations (delta " + fmt_double(conv.delta) + "), using best iterate");

  IcaModel m;
  m.k = p.k;
  m.seed = p.seed;
  m.mask = series.mask;
  m.tr = series.tr;
  m.convergence = conv;
  m.voxel_mean = mean;
  m.whiten_proj = rootV * (sk_inv.asDiagonal() * svd.matrixV().leftCols(p.k).transpose());

  m.sources = B * Z;
  // enforce exact unit population variance per row (mixing absorbs scale)
  for (int i = 0; i < p.k; ++i) {
    double rmean = m.sources.row(i).mean();
    double var = m.sources.row(i).squaredNorm() * invV - rmean * rmean;
    require(var > 1e-154, Err::AllZeroSource, "recovered source row is constant");
    m.sources.row(i) /= std::sqrt(var);
  }
  Eigen::MatrixXd sp = pinv(m.sources);  // V x k
  m.unmixing = sp.transpose();
  m.mixing = Xc * sp;
  m.validate();
  return m;
}

ComponentSeries project(const IcaModel& m, const VolumeSeries& s, const std::string& run_id) {
  require(s.grid().same_geometry(m.mask.grid), Err::GridMismatch,
          "run grid does not match the model grid");
  require(s.mask.digest() == m.mask.digest(), Err::MaskMismatch,
          "run mask does not match the model training mask");
  require(s.v() == m.sources.cols(), Err::SizeMismatch, "voxel count mismatch");
  ComponentSeries cs;
  cs.series = s.data * m.unmixing.transpose();  // X_new * pinv(S)
  cs.tr = s.tr;
  cs.model_digest = m.digest();
  cs.run_id = run_id;
  return cs;
}

IcaModel sign_align(const IcaModel& m) {
  IcaModel out = m;
  for (int i = 0; i < m.k; ++i) {
    if (row_median(out.sources.row(i)) >= 0.0) continue;
    out.sources.row(i) = -out.sources.row(i);
    out.unmixing.row(i) = -out.unmixing.row(i);
    if (out.mixing.cols() == m.k) out.mixing.col(i) = -out.mixing.col(i);
  }
  return out;
}

void save_model(const std::string& prefix, const IcaModel& m) {
  m.validate();
  VolumeSeries src;
  src.mask = m.mask;
  src.tr = m.tr;
  src.data = m.sources;
  dataio::write_volume_series(prefix + ".sources.vxt", src);

  VolumeSeries means;
  means.mask = m.mask;
  means.tr = m.tr;
  means.data = m.voxel_mean.transpose();
  dataio::write_volume_series(prefix + ".means.vxt", means);

  if (m.mixing.size() > 0) {
    std::vector<std::string> names;
    for (int i = 0; i < m.k; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "comp_%03d", i);
      names.emplace_back(buf);
    }
    dataio::write_matrix_tsv(prefix + ".mixing.tsv", m.mixing, names);
  }

  nlohmann::json meta;
  meta["format"] = "icem-ica-1";
  meta["k"] = m.k;
  meta["seed"] = m.seed;
  meta["tr"] = m.tr;
  meta["converged"] = m.convergence.converged;
  meta["iterations"] = m.convergence.iterations;
  meta["delta"] = m.convergence.delta;
  meta["mask_digest"] = hex64(m.mask.digest());
  dataio::write_json_file(prefix + ".meta.json", meta);
}

IcaModel load_model(const std::string& prefix) {
  nlohmann::json meta = dataio::parse_json_file(prefix + ".meta.json");
  require(meta.value("format", "") == "icem-ica-1", Err::MalformedHeader,
          prefix + ".meta.json: unknown model format");
  VolumeSeries src = dataio::read_volume_series(prefix + ".sources.vxt");
  VolumeSeries means = dataio::read_volume_series(prefix + ".means.vxt");
  require(means.t() == 1, Err::ShapeMismatch, "means volume must have t=1");
  require(means.mask.digest() == src.mask.digest(), Err::MaskMismatch,
          "model volumes carry different masks");

  IcaModel m;
  m.k = meta.at("k").get<int>();
  m.seed = meta.at("seed").get<uint64_t>();
  m.tr = meta.at("tr").get<double>();
  m.convergence.converged = meta.at("converged").get<bool>();
  m.convergence.iterations = meta.at("iterations").get<int>();
  m.convergence.delta = meta.at("delta").get<double>();
  m.mask = src.mask;
  require(hex64(m.mask.digest()) == meta.at("mask_digest").get<std::string>(), Err::MaskMismatch,
          prefix + ": mask digest mismatch between meta and sources");
  m.sources = src.data;
  require(static_cast<int>(m.sources.rows()) == m.k, Err::ShapeMismatch,
          "sources volume count disagrees with k");
  m.voxel_mean = means.data.row(0).transpose();
  m.unmixing = pinv(m.sources).transpose();
  m.whiten_proj.resize(0, 0);  // not persisted; only needed during fitting
  std::ifstream mix(prefix + ".mixing.tsv");
  if (mix.good()) {
    mix.close();
    m.mixing = dataio::read_matrix_tsv(prefix + ".mixing.tsv");
  }
  m.validate();
  return m;
}

}  // namespace icem::ica
