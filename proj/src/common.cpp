// Copyright 2026 the icem authors
// SPDX-License-Identifier: Apache-2.0
#include "icem/common.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace icem {

const char* err_name(Err e) {
  switch (e) {
    case Err::Config: return "ConfigError";
    case Err::BandOutOfRange: return "BandOutOfRange";
    case Err::PercentileOutOfRange: return "PercentileOutOfRange";
    case Err::EmptyAfterTrim: return "EmptyAfterTrim";
    case Err::FoldInfeasible: return "FoldInfeasible";
    case Err::OverlapInfeasible: return "OverlapInfeasible";
    case Err::TooFewSubjects: return "TooFewSubjects";
    case Err::NetworkUnresolved: return "NetworkUnresolved";
    case Err::Io: return "IoFailure";
    case Err::MalformedHeader: return "MalformedHeader";
    case Err::MalformedTable: return "MalformedTable";
    case Err::SizeMismatch: return "SizeMismatch";
    case Err::DimMismatch: return "DimMismatch";
    case Err::GridMismatch: return "GridMismatch";
    case Err::MaskMismatch: return "MaskMismatch";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::NonFiniteData: return "NonFiniteData";
    case Err::UnsupportedDatatype: return "UnsupportedDatatype";
    case Err::BadMagic: return "BadMagic";
    case Err::MissingInput: return "MissingInput";
    case Err::WordPastEnd: return "WordPastEnd";
    case Err::EmptyParcel: return "EmptyParcel";
    case Err::NoSharedStory: return "NoSharedStory";
    case Err::RankTooLow: return "RankTooLow";
    case Err::NonConverged: return "NonConverged";
    case Err::ConstantInput: return "ConstantInput";
    case Err::DegenerateRegressor: return "DegenerateRegressor";
    case Err::AllZeroSource: return "AllZeroSource";
    case Err::SingularSystem: return "SingularSystem";
  }
  return "UnknownError";
}

int exit_code_for(Err e) {
  switch (e) {
    case Err::Config:
    case Err::BandOutOfRange:
    case Err::PercentileOutOfRange:
    case Err::EmptyAfterTrim:
    case Err::FoldInfeasible:
    case Err::OverlapInfeasible:
    case Err::TooFewSubjects:
    case Err::NetworkUnresolved:
      return 2;
    case Err::Io:
    case Err::MalformedHeader:
    case Err::MalformedTable:
    case Err::SizeMismatch:
    case Err::DimMismatch:
    case Err::GridMismatch:
    case Err::MaskMismatch:
    case Err::ShapeMismatch:
    case Err::NonFiniteData:
    case Err::UnsupportedDatatype:
    case Err::BadMagic:
    case Err::MissingInput:
    case Err::WordPastEnd:
    case Err::EmptyParcel:
    case Err::NoSharedStory:
      return 3;
    default:
      return 4;
  }
}

namespace logging {
namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void set_quiet(bool q) { g_quiet = q; }

void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lk(g_mutex);
  std::cerr << "[warn] " << msg << "\n";
}

void info(const std::string& msg) {
  if (g_quiet) return;
  std::lock_guard<std::mutex> lk(g_mutex);
  std::cerr << "[info] " << msg << "\n";
}
}  // namespace logging

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::Io, "cannot open for digest: " + path);
  Fnv f;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    if (got > 0) f.bytes(buf, static_cast<size_t>(got));
  }
  return f.h;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Err::Io, "cannot open: " + path);
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(Err::Io, "cannot write: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) raise(Err::Io, "short write: " + path);
}

void parallel_for(int jobs, int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (jobs <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  jobs = std::min(jobs, n);
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  std::atomic<bool> failed{false};
  std::exception_ptr eptr;
  std::mutex emu;
  workers.reserve(static_cast<size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n || failed) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(emu);
          if (!eptr) eptr = std::current_exception();
          failed = true;
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (eptr) std::rethrow_exception(eptr);
}

}  // namespace icem
