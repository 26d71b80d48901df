// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "icem/dataio.hpp"
#include "test_util.hpp"

using namespace icem;
using test::TempDir;

namespace {

// byte-level NIfTI-1 builder so the importer is checked against the format
// layout itself, not against our own writer
struct NiftiBytes {
  std::vector<char> buf = std::vector<char>(352, 0);
  bool swap = false;  // emit big-endian fields

  template <typename T>
  void put(size_t off, T v) {
    if (swap) {
      char* b = reinterpret_cast<char*>(&v);
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    std::memcpy(buf.data() + off, &v, sizeof(T));
  }

  NiftiBytes(int nx, int ny, int nz, int nt, int16_t datatype, int16_t bitpix,
             float slope = 0.0f, float inter = 0.0f, bool swapped = false) {
    swap = swapped;
    put<int32_t>(0, 348);
    put<int16_t>(40, static_cast<int16_t>(nt > 1 ? 4 : 3));
    put<int16_t>(42, static_cast<int16_t>(nx));
    put<int16_t>(44, static_cast<int16_t>(ny));
    put<int16_t>(46, static_cast<int16_t>(nz));
    put<int16_t>(48, static_cast<int16_t>(nt));
    for (size_t i = 50; i <= 54; i += 2) put<int16_t>(i, 1);
    put<int16_t>(70, datatype);
    put<int16_t>(72, bitpix);
    put<float>(80, 2.0f);   // pixdim[1]
    put<float>(84, 2.0f);
    put<float>(88, 2.0f);
    put<float>(92, 1.5f);   // TR
    put<float>(108, 352.0f);
    put<float>(112, slope);
    put<float>(116, inter);
    buf[123] = 0x0a;  // mm + seconds
    buf[344] = 'n';
    buf[345] = '+';
    buf[346] = '1';
    buf[347] = '\0';
  }

  void body_f32(const std::vector<float>& vals) {
    for (float v : vals) {
      size_t off = buf.size();
      buf.resize(off + 4);
      if (swap) {
        char b[4];
        std::memcpy(b, &v, 4);
        std::swap(b[0], b[3]);
        std::swap(b[1], b[2]);
        std::memcpy(buf.data() + off, b, 4);
      } else {
        std::memcpy(buf.data() + off, &v, 4);
      }
    }
  }

  void body_i16(const std::vector<int16_t>& vals) {
    for (int16_t v : vals) {
      size_t off = buf.size();
      buf.resize(off + 2);
      int16_t w = v;
      if (swap) w = static_cast<int16_t>((static_cast<uint16_t>(v) >> 8) |
                                         (static_cast<uint16_t>(v) << 8));
      std::memcpy(buf.data() + off, &w, 2);
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
};

}  // namespace

TEST_CASE("dataio: volume series round-trip is bitwise on f32 data") {
  TempDir td("icem_vxt");
  VolumeSeries s = test::make_series(3, 4, 2, 5, 2.0, 42);
  // partial mask: drop every third voxel
  Mask sub = s.mask;
  for (size_t i = 0; i < sub.in.size(); i += 3) sub.in[i] = 0;
  VolumeSeries masked = dataio::apply_mask(s, sub);
  dataio::write_volume_series(td.file("a.vxt"), masked);
  VolumeSeries back = dataio::read_volume_series(td.file("a.vxt"));
  CHECK(test::max_abs_diff(back.data, masked.data) == 0.0);
  CHECK(back.tr == masked.tr);
  CHECK(back.mask.in == masked.mask.in);
  CHECK(back.grid().same_geometry(masked.grid()));

  // arbitrary doubles settle after one write: a second round-trip is stable
  VolumeSeries dbl = test::make_series(3, 3, 3, 4, 1.0, 1, /*f32_exact=*/false);
  dataio::write_volume_series(td.file("b.vxt"), dbl);
  VolumeSeries once = dataio::read_volume_series(td.file("b.vxt"));
  dataio::write_volume_series(td.file("c.vxt"), once);
  VolumeSeries twice = dataio::read_volume_series(td.file("c.vxt"));
  CHECK(test::max_abs_diff(once.data, twice.data) == 0.0);
}

TEST_CASE("dataio: zero payload and size checks") {
  TempDir td("icem_vxt0");
  VolumeSeries s;
  s.mask = Mask::full(VolumeGrid::axis_aligned(2, 2, 2, 2, 2, 2));
  s.tr = 1.0;
  s.data = Eigen::MatrixXd::Zero(4, 8);
  dataio::write_volume_series(td.file("z.vxt"), s);
  VolumeSeries back = dataio::read_volume_series(td.file("z.vxt"));
  CHECK(back.data.isZero(0.0));
  CHECK(back.t() == 4);
  CHECK(back.v() == 8);

  // truncate the body by 4 bytes -> SizeMismatch
  {
    std::string raw = read_text_file(td.file("z.vxt.raw"));
    write_text_file(td.file("z.vxt.raw"), raw.substr(0, raw.size() - 4));
  }
  try {
    (void)dataio::read_volume_series(td.file("z.vxt"));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::SizeMismatch);
  }
}

TEST_CASE("dataio: non-finite data is refused before write") {
  TempDir td("icem_vxtnan");
  VolumeSeries s;
  s.mask = Mask::full(VolumeGrid::axis_aligned(2, 2, 1, 2, 2, 2));
  s.tr = 1.0;
  s.data = Eigen::MatrixXd::Zero(3, 4);
  s.data(1, 2) = std::numeric_limits<double>::quiet_NaN();
  try {
    dataio::write_volume_series(td.file("nan.vxt"), s);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::NonFiniteData);
  }
}

TEST_CASE("dataio: zero-voxel mask is invalid") {
  VolumeSeries s;
  s.mask.grid = VolumeGrid::axis_aligned(2, 2, 1, 2, 2, 2);
  s.mask.in.assign(4, 0);
  s.tr = 1.0;
  s.data = Eigen::MatrixXd::Zero(3, 0);
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("dataio: nifti import reads a hand-built f32 file") {
  TempDir td("icem_nifti");
  NiftiBytes n(2, 2, 2, 3, /*datatype=*/16, /*bitpix=*/32);
  std::vector<float> vals(24);
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(i) * 0.5f - 3.0f;
  n.body_f32(vals);
  n.save(td.file("a.nii"));

  VolumeSeries s = dataio::import_nifti(td.file("a.nii"));
  CHECK(s.t() == 3);
  CHECK(s.v() == 8);
  CHECK(s.tr == doctest::Approx(1.5));
  CHECK(s.grid().dims[0] == 2);
  CHECK(s.grid().voxel_size[0] == doctest::Approx(2.0));
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 8; ++j)
      CHECK(s.data(t, j) == doctest::Approx(static_cast<double>(vals[static_cast<size_t>(t * 8 + j)])));
}

TEST_CASE("dataio: nifti scl_slope and scl_inter apply to int16 data") {
  TempDir td("icem_nifti2");
  NiftiBytes n(2, 1, 1, 1, /*datatype=*/4, /*bitpix=*/16, /*slope=*/2.0f, /*inter=*/1.0f);
  n.body_i16({3, -5});
  n.save(td.file("b.nii"));
  VolumeSeries s = dataio::import_nifti(td.file("b.nii"));
  CHECK(s.data(0, 0) == doctest::Approx(7.0));   // 2*3 + 1
  CHECK(s.data(0, 1) == doctest::Approx(-9.0));  // 2*(-5) + 1
}

TEST_CASE("dataio: nifti byte-swapped file imports identically") {
  TempDir td("icem_nifti3");
  std::vector<float> vals = {1.5f, -2.25f, 0.0f, 8.0f, 3.0f, -1.0f, 0.5f, 42.0f};
  NiftiBytes le(2, 2, 2, 1, 16, 32);
  le.body_f32(vals);
  le.save(td.file("le.nii"));
  NiftiBytes be(2, 2, 2, 1, 16, 32, 0.0f, 0.0f, /*swapped=*/true);
  be.body_f32(vals);
  be.save(td.file("be.nii"));
  VolumeSeries a = dataio::import_nifti(td.file("le.nii"));
  VolumeSeries b = dataio::import_nifti(td.file("be.nii"));
  CHECK(test::max_abs_diff(a.data, b.data) == 0.0);
}

TEST_CASE("dataio: nifti rejects detached-header magic and odd datatypes") {
  TempDir td("icem_nifti4");
  NiftiBytes n(2, 2, 2, 1, 16, 32);
  n.body_f32(std::vector<float>(8, 0.0f));
  n.buf[345] = 'i';
  n.buf[346] = '1';  // magic "ni1\0"
  n.save(td.file("c.nii"));
  try {
    (void)dataio::import_nifti(td.file("c.nii"));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::BadMagic);
  }

  NiftiBytes u(2, 2, 2, 1, /*datatype=*/2, /*bitpix=*/8);  // uint8: unsupported
  u.body_f32(std::vector<float>(2, 0.0f));
  u.save(td.file("d.nii"));
  try {
    (void)dataio::import_nifti(td.file("d.nii"));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::UnsupportedDatatype);
  }
}

TEST_CASE("dataio: word table reader enforces schema") {
  TempDir td("icem_words");
  write_text_file(td.file("w.tsv"),
                  "token\tonset\toffset\tsurprisal\n"
                  "the\t0.1\t0.3\t1.5\n"
                  "old\t0.5\t0.8\t4.2\n"
                  "dog\t0.9\t1.2\t2.0\n");
  WordTable t = dataio::read_word_table_tsv(td.file("w.tsv"));
  CHECK(t.words.size() == 3);
  CHECK(t.has_surprisal);
  CHECK(t.words[1].token == "old");
  CHECK(t.words[1].midpoint() == doctest::Approx(0.65));

  write_text_file(td.file("bad.tsv"), "token\tonset\toffset\na\t0.5\t0.6\nb\t0.1\t0.2\n");
  CHECK_THROWS_AS((void)dataio::read_word_table_tsv(td.file("bad.tsv")), Error);

  write_text_file(td.file("nosur.tsv"), "token\tonset\toffset\na\t0.1\t0.2\n");
  WordTable ns = dataio::read_word_table_tsv(td.file("nosur.tsv"));
  CHECK_FALSE(ns.has_surprisal);

  write_text_file(td.file("neg.tsv"), "token\tonset\toffset\na\t0.5\t0.4\n");
  CHECK_THROWS_AS((void)dataio::read_word_table_tsv(td.file("neg.tsv")), Error);

  // word table round-trip
  dataio::write_word_table_tsv(td.file("rt.tsv"), t);
  WordTable rt = dataio::read_word_table_tsv(td.file("rt.tsv"));
  CHECK(rt.words.size() == t.words.size());
  CHECK(rt.words[2].surprisal == t.words[2].surprisal);
}

TEST_CASE("dataio: confounds round-trip and n/a handling") {
  TempDir td("icem_conf");
  ConfoundMatrix c;
  c.names = {"trans_x", "rot_y"};
  c.cols.resize(4, 2);
  c.cols << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8;
  dataio::write_confounds_tsv(td.file("c.tsv"), c);
  ConfoundMatrix back = dataio::read_confounds_tsv(td.file("c.tsv"));
  CHECK(back.names == c.names);
  CHECK(test::max_abs_diff(back.cols, c.cols) == 0.0);

  write_text_file(td.file("na.tsv"), "a\tb\n1.0\tn/a\nNA\t2.0\n");
  ConfoundMatrix na = dataio::read_confounds_tsv(td.file("na.tsv"));
  CHECK(na.cols(0, 1) == 0.0);
  CHECK(na.cols(1, 0) == 0.0);
  CHECK(na.cols(1, 1) == 2.0);
}

TEST_CASE("dataio: embeddings round-trip through f32") {
  TempDir td("icem_emb");
  EmbeddingTable e;
  e.rows.resize(3, 4);
  Rng rng(3);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      e.rows(i, j) = static_cast<double>(static_cast<float>(rng.normal()));
  dataio::write_embeddings(td.file("e.bin"), e);
  EmbeddingTable back = dataio::read_embeddings(td.file("e.bin"));
  CHECK(back.n_words() == 3);
  CHECK(back.dim() == 4);
  CHECK(test::max_abs_diff(back.rows, e.rows) == 0.0);
}

TEST_CASE("dataio: atlas round-trip preserves label order and names") {
  TempDir td("icem_atlas");
  Atlas a;
  a.grid = VolumeGrid::axis_aligned(4, 2, 1, 2, 2, 2);
  a.names = {"AUD", "VIS"};
  a.maps.resize(2, std::vector<uint8_t>(8, 0));
  a.maps[0][0] = a.maps[0][1] = 1;
  a.maps[1][5] = a.maps[1][6] = a.maps[1][7] = 1;
  dataio::write_atlas(td.file("atlas.vxt"), td.file("names.json"), a);
  Atlas back = dataio::read_atlas(td.file("atlas.vxt"), td.file("names.json"));
  CHECK(back.names == a.names);
  CHECK(back.maps == a.maps);
  CHECK(back.grid.same_geometry(a.grid));
}

TEST_CASE("dataio: matrix tsv round-trips and skips comment lines") {
  TempDir td("icem_tsv");
  Eigen::MatrixXd m(2, 3);
  m << 1.0, -0.25, 1e-17, 3.5, 2.0 / 3.0, -1e102;
  dataio::write_matrix_tsv(td.file("m.tsv"), m, {"a", "b", "c"});

  // annotation lines must be transparent to the reader
  std::string text = read_text_file(td.file("m.tsv"));
  write_text_file(td.file("m2.tsv"), "# config_digest=dead\n" + text);

  std::vector<std::string> names;
  Eigen::MatrixXd back = dataio::read_matrix_tsv(td.file("m2.tsv"), &names);
  CHECK(names == std::vector<std::string>{"a", "b", "c"});
  CHECK(test::max_abs_diff(back, m) == 0.0);  // 17 significant digits round-trip exactly
}

TEST_CASE("dataio: mask_from_volume and apply_mask agree on scan order") {
  VolumeSeries s = test::make_series(3, 2, 2, 2, 1.0, 77);
  // build a label-like first volume: zero out half the voxels
  for (int j = 0; j < s.v(); j += 2) s.data(0, j) = 0.0;
  Mask m = dataio::mask_from_volume(s);
  CHECK(m.v() == s.v() / 2);
  VolumeSeries sub = dataio::apply_mask(s, m);
  CHECK(sub.v() == m.v());
  // each retained column must carry the value of its source voxel
  std::vector<long> sidx = s.mask.linear_indices();
  std::vector<long> midx = m.linear_indices();
  int k = 0;
  for (int j = 0; j < s.v(); ++j) {
    if (s.data(0, j) == 0.0) continue;
    CHECK(sidx[static_cast<size_t>(j)] == midx[static_cast<size_t>(k)]);
    CHECK(sub.data(1, k) == s.data(1, j));
    ++k;
  }

  // a mask voxel outside the series mask is an error
  Mask rogue = Mask::full(s.grid());
  VolumeSeries narrowed = dataio::apply_mask(s, m);
  CHECK_THROWS_AS((void)dataio::apply_mask(narrowed, rogue), Error);
}
