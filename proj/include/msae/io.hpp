#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msae/error.hpp"
#include "msae/rng.hpp"
#include "msae/skeleton.hpp"

namespace msae {

namespace detail {

inline std::string io_message(const std::string& path) {
  return path + ": " + std::strerror(errno);
}

inline std::ofstream open_for_write(const std::string& path, std::ios::openmode mode = std::ios::out) {
  errno = 0;
  std::ofstream out(path, mode);
  if (!out) throw Error(ErrorCode::Io, io_message(path));
  return out;
}

}  // namespace detail

inline nlohmann::json bout_to_json(const SkeletonSequence& seq) {
  nlohmann::json frames = nlohmann::json::array();
  for (int t = 0; t < seq.T; ++t) {
    nlohmann::json frame = nlohmann::json::array();
    for (int j = 0; j < seq.J; ++j) frame.push_back({seq.x(t, j), seq.y(t, j)});
    frames.push_back(std::move(frame));
  }
  return {{"bout_id", seq.bout_id}, {"fps", seq.fps}, {"frames", std::move(frames)}};
}

/// Parses one JSON-lines bout record; `line_no` only feeds error messages.
inline SkeletonSequence bout_from_json(const nlohmann::json& obj, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  if (!obj.is_object() || !obj.contains("bout_id") || !obj.contains("fps") || !obj.contains("frames")) {
    throw Error(ErrorCode::ParseError, where + ": expected object with bout_id, fps, frames");
  }
  if (!obj["bout_id"].is_string() || !obj["fps"].is_number() || !obj["frames"].is_array()) {
    throw Error(ErrorCode::ParseError, where + ": field has wrong type");
  }
  const auto& frames = obj["frames"];
  if (frames.empty()) throw Error(ErrorCode::ShapeError, where + ": bout has no frames");
  if (!frames[0].is_array()) throw Error(ErrorCode::ParseError, where + ": frame is not an array");
  const int T = static_cast<int>(frames.size());
  const int J = static_cast<int>(frames[0].size());
  if (J < 2) throw Error(ErrorCode::ShapeError, where + ": bout needs at least 2 joints");

  SkeletonSequence seq(obj["bout_id"].get<std::string>(), obj["fps"].get<double>(), T, J);
  for (int t = 0; t < T; ++t) {
    const auto& frame = frames[static_cast<std::size_t>(t)];
    if (!frame.is_array()) throw Error(ErrorCode::ParseError, where + ": frame is not an array");
    if (static_cast<int>(frame.size()) != J) {
      throw Error(ErrorCode::ShapeError, where + ": frame " + std::to_string(t) + " has " +
                                             std::to_string(frame.size()) + " joints, expected " +
                                             std::to_string(J));
    }
    for (int j = 0; j < J; ++j) {
      const auto& pt = frame[static_cast<std::size_t>(j)];
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
        throw Error(ErrorCode::ShapeError, where + ": joint must be [x, y]");
      }
      seq.x(t, j) = pt[0].get<double>();
      seq.y(t, j) = pt[1].get<double>();
      if (!std::isfinite(seq.x(t, j)) || !std::isfinite(seq.y(t, j))) {
        throw Error(ErrorCode::ShapeError, where + ": non-finite coordinate");
      }
    }
  }
  return seq;
}

/// Reads a `.jsonl` bout file. Blank lines are skipped.
inline std::vector<SkeletonSequence> read_bouts(const std::string& path) {
  errno = 0;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, detail::io_message(path));
  std::vector<SkeletonSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(bout_from_json(obj, line_no));
  }
  return out;
}

/// Doubles are emitted with round-trip (17 significant digit) precision.
inline void write_bouts(const std::string& path, std::span<const SkeletonSequence> bouts) {
  auto out = detail::open_for_write(path);
  for (const auto& seq : bouts) out << bout_to_json(seq).dump() << '\n';
  if (!out) throw Error(ErrorCode::Io, detail::io_message(path));
}

/// Epoch-shuffled index batches; depends only on the four arguments.
inline std::vector<std::vector<int>> make_batches(int n_bouts, int batch_size, std::uint64_t seed,
                                                  std::uint64_t epoch) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  SplitMix64 rng(derive_seed(seed, epoch, 0xBA7C4ULL));
  const auto perm = sample_without_replacement(n_bouts, n_bouts, rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < perm.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(perm.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// CSV `bout_id,e0,...,e{d-1}`.
inline void write_embeddings_csv(const std::string& path, std::span<const std::string> ids,
                                 std::span<const std::vector<double>> embeddings, int dim) {
  auto out = detail::open_for_write(path);
  out << "bout_id";
  for (int i = 0; i < dim; ++i) out << ",e" << i;
  out << '\n';
  for (std::size_t b = 0; b < ids.size(); ++b) {
    out << ids[b];
    for (double v : embeddings[b]) out << ',' << format_g9(v);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, detail::io_message(path));
}

}  // namespace msae
