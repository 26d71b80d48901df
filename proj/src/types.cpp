// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/types.hpp"

#include <algorithm>

namespace icem {

void VolumeGrid::validate() const {
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, Err::DimMismatch,
          "grid dims must be positive");
  for (double s : voxel_size)
    require(std::isfinite(s) && s > 0.0, Err::MalformedHeader, "voxel size must be positive");
  for (double a : affine)
    require(std::isfinite(a), Err::MalformedHeader, "affine entries must be finite");
  require(affine[12] == 0.0 && affine[13] == 0.0 && affine[14] == 0.0 && affine[15] == 1.0,
          Err::MalformedHeader, "affine last row must be (0,0,0,1)");
}

bool VolumeGrid::same_geometry(const VolumeGrid& o) const {
  return dims == o.dims && voxel_size == o.voxel_size && affine == o.affine;
}

VolumeGrid VolumeGrid::axis_aligned(int nx, int ny, int nz, double vx, double vy, double vz) {
  VolumeGrid g;
  g.dims = {nx, ny, nz};
  g.voxel_size = {vx, vy, vz};
  g.affine = {vx, 0, 0, 0, 0, vy, 0, 0, 0, 0, vz, 0, 0, 0, 0, 1};
  return g;
}

int Mask::v() const {
  long n = 0;
  for (uint8_t b : in) n += (b != 0);
  return static_cast<int>(n);
}

void Mask::validate() const {
  grid.validate();
  require(static_cast<long>(in.size()) == grid.nvox(), Err::SizeMismatch,
          "mask flag count does not match grid voxel count");
  require(v() > 0, Err::ShapeMismatch, "mask includes no voxels");
}

std::vector<long> Mask::linear_indices() const {
  std::vector<long> idx;
  idx.reserve(in.size());
  for (long i = 0; i < static_cast<long>(in.size()); ++i)
    if (in[i]) idx.push_back(i);
  return idx;
}

uint64_t Mask::digest() const {
  Fnv f;
  f.i64(grid.dims[0]);
  f.i64(grid.dims[1]);
  f.i64(grid.dims[2]);
  for (double s : grid.voxel_size) f.f64(s);
  for (double a : grid.affine) f.f64(a);
  f.bytes(in.data(), in.size());
  return f.h;
}

Mask Mask::full(const VolumeGrid& g) {
  Mask m;
  m.grid = g;
  m.in.assign(static_cast<size_t>(g.nvox()), 1);
  return m;
}

void VolumeSeries::validate() const {
  mask.validate();
  require(tr > 0.0 && std::isfinite(tr), Err::MalformedHeader, "tr must be positive");
  require(data.cols() == mask.v(), Err::SizeMismatch,
          "series has " + std::to_string(data.cols()) + " voxel columns but mask includes " +
              std::to_string(mask.v()));
  require(data.rows() >= 1, Err::SizeMismatch, "series must hold at least one volume");
  require_finite(data, "volume series");
}

void Atlas::validate() const {
  grid.validate();
  require(names.size() == maps.size(), Err::ShapeMismatch, "atlas names/maps length mismatch");
  require(!names.empty(), Err::ShapeMismatch, "atlas has no parcels");
  std::vector<uint8_t> seen(static_cast<size_t>(grid.nvox()), 0);
  for (size_t p = 0; p < maps.size(); ++p) {
    require(static_cast<long>(maps[p].size()) == grid.nvox(), Err::SizeMismatch,
            "atlas parcel map size mismatch for " + names[p]);
    long count = 0;
    for (long i = 0; i < grid.nvox(); ++i) {
      if (!maps[p][i]) continue;
      ++count;
      require(!seen[i], Err::ShapeMismatch, "atlas parcels overlap at voxel " + std::to_string(i));
      seen[i] = 1;
    }
    require(count > 0, Err::ShapeMismatch, "atlas parcel is empty: " + names[p]);
  }
  for (size_t p = 0; p < names.size(); ++p)
    for (size_t q = p + 1; q < names.size(); ++q)
      require(names[p] != names[q], Err::ShapeMismatch, "duplicate parcel name: " + names[p]);
}

void WordTable::validate() const {
  double prev = -std::numeric_limits<double>::infinity();
  for (const Word& w : words) {
    require(std::isfinite(w.onset) && std::isfinite(w.offset), Err::MalformedTable,
            "word timing must be finite");
    require(w.onset >= 0.0, Err::MalformedTable, "word onset must be nonnegative");
    require(w.offset >= w.onset, Err::MalformedTable,
            "word offset precedes onset for token '" + w.token + "'");
    require(w.onset >= prev, Err::MalformedTable, "word onsets must be nondecreasing");
    prev = w.onset;
    if (has_surprisal)
      require(std::isfinite(w.surprisal), Err::MalformedTable,
              "missing surprisal for token '" + w.token + "'");
  }
}

void ConfoundMatrix::validate() const {
  require(static_cast<int>(names.size()) == p(), Err::ShapeMismatch,
          "confound names/columns mismatch");
  require_finite(cols, "confounds");
  for (int j = 0; j < p(); ++j) {
    if (names[j].rfind("spike", 0) != 0) continue;
    int ones = 0;
    for (int i = 0; i < t(); ++i) {
      double v = cols(i, j);
      require(v == 0.0 || v == 1.0, Err::MalformedTable,
              "spike column " + names[j] + " must be 0/1");
      ones += (v == 1.0);
    }
    require(ones == 1, Err::MalformedTable,
            "spike column " + names[j] + " must flag exactly one volume");
  }
}

void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      if (!std::isfinite(m(r, c)))
        raise(Err::NonFiniteData, what + " contains a non-finite value at (row " +
                                       std::to_string(r) + ", col " + std::to_string(c) + ")");
}

}  // namespace icem
