// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icem/common.hpp"

namespace icem {

// Voxel grid geometry. Volumes are stored flat in scan order: x fastest,
// then y, then z. Affine is a row-major 4x4 voxel-index -> world map whose
// last row must be (0,0,0,1).
struct VolumeGrid {
  std::array<int, 3> dims{0, 0, 0};
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
  std::array<double, 16> affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  long nvox() const { return static_cast<long>(dims[0]) * dims[1] * dims[2]; }
  void validate() const;
  bool same_geometry(const VolumeGrid& o) const;

  static VolumeGrid axis_aligned(int nx, int ny, int nz, double vx, double vy, double vz);
};

inline long grid_index(const VolumeGrid& g, int x, int y, int z) {
  return static_cast<long>(x) + static_cast<long>(g.dims[0]) * (static_cast<long>(y) + static_cast<long>(g.dims[1]) * z);
}

// Analysis mask over a grid. Masked vectors hold one value per included
// voxel, ordered by the grid scan order.
struct Mask {
  VolumeGrid grid;
  std::vector<uint8_t> in;  // one flag per grid voxel

  int v() const;  // number of included voxels
  void validate() const;
  std::vector<long> linear_indices() const;
  uint64_t digest() const;

  static Mask full(const VolumeGrid& g);
};

// 4D volume series restricted to a mask: data(t, j) is the value of the
// j-th included voxel at volume t.
struct VolumeSeries {
  Mask mask;
  double tr = 0.0;               // seconds
  Eigen::MatrixXd data;          // T x V

  int t() const { return static_cast<int>(data.rows()); }
  int v() const { return static_cast<int>(data.cols()); }
  const VolumeGrid& grid() const { return mask.grid; }
  void validate() const;
};

// Named, disjoint, nonempty parcels on a grid.
struct Atlas {
  VolumeGrid grid;
  std::vector<std::string> names;
  std::vector<std::vector<uint8_t>> maps;  // per-parcel full-grid membership

  int n_parcels() const { return static_cast<int>(names.size()); }
  void validate() const;
};

struct Word {
  std::string token;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, >= onset
  double surprisal = std::numeric_limits<double>::quiet_NaN();

  double midpoint() const { return 0.5 * (onset + offset); }
};

struct WordTable {
  std::vector<Word> words;
  bool has_surprisal = false;
  void validate() const;
};

// Per-word embedding rows, aligned 1:1 with a WordTable.
struct EmbeddingTable {
  Eigen::MatrixXd rows;  // n_words x dim
  int n_words() const { return static_cast<int>(rows.rows()); }
  int dim() const { return static_cast<int>(rows.cols()); }
};

// Nuisance regressors for one run; cols is T x p, aligned with the run's
// volumes. Spike columns (names starting "spike") must be one-hot.
struct ConfoundMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd cols;

  int t() const { return static_cast<int>(cols.rows()); }
  int p() const { return static_cast<int>(cols.cols()); }
  void validate() const;
};

void require_finite(const Eigen::MatrixXd& m, const std::string& what);

}  // namespace icem
