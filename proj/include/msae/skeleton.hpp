#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "msae/error.hpp"

namespace msae {

/// One bout: T frames of J two-dimensional joint coordinates, stored
/// frame-major as [T][J][2].
struct SkeletonSequence {
  std::string bout_id;
  double fps = 0.0;
  int T = 0;
  int J = 0;
  std::vector<double> coords;

  SkeletonSequence() = default;
  SkeletonSequence(std::string id, double rate, int frames, int joints)
      : bout_id(std::move(id)),
        fps(rate),
        T(frames),
        J(joints),
        coords(static_cast<std::size_t>(frames) * static_cast<std::size_t>(joints) * 2, 0.0) {}

  std::size_t index(int frame, int joint) const {
    return (static_cast<std::size_t>(frame) * static_cast<std::size_t>(J) +
            static_cast<std::size_t>(joint)) * 2;
  }
  double& x(int frame, int joint) { return coords[index(frame, joint)]; }
  double& y(int frame, int joint) { return coords[index(frame, joint) + 1]; }
  double x(int frame, int joint) const { return coords[index(frame, joint)]; }
  double y(int frame, int joint) const { return coords[index(frame, joint) + 1]; }

  bool operator==(const SkeletonSequence&) const = default;
};

inline void validate(const SkeletonSequence& seq) {
  if (seq.T < 1 || seq.J < 2) {
    throw Error(ErrorCode::ShapeError, "bout '" + seq.bout_id + "' needs T >= 1 and J >= 2");
  }
  if (seq.coords.size() != static_cast<std::size_t>(seq.T) * static_cast<std::size_t>(seq.J) * 2) {
    throw Error(ErrorCode::ShapeError, "bout '" + seq.bout_id + "' coordinate buffer size mismatch");
  }
  for (double v : seq.coords) {
    if (!std::isfinite(v)) throw Error(ErrorCode::ShapeError, "bout '" + seq.bout_id + "' has non-finite coordinates");
  }
}

/// Maps normalized coordinates back to the raw frame:
/// raw = R(rotation) * (normalized * scale) + translation.
struct NormalizationRecord {
  double tx = 0.0;
  double ty = 0.0;
  double rotation = 0.0;
  double scale = 1.0;
};

inline double mean_segment_length(const SkeletonSequence& seq, int frame) {
  double total = 0.0;
  for (int j = 1; j < seq.J; ++j) {
    total += std::hypot(seq.x(frame, j) - seq.x(frame, j - 1), seq.y(frame, j) - seq.y(frame, j - 1));
  }
  return total / static_cast<double>(seq.J - 1);
}

/// Anchors the bout to frame 0: root joint at the origin, root->joint-1
/// heading on +x, mean segment length 1. Later frames get the same transform.
inline std::pair<SkeletonSequence, NormalizationRecord> normalize_bout(const SkeletonSequence& seq) {
  validate(seq);
  NormalizationRecord rec;
  rec.scale = mean_segment_length(seq, 0);
  if (!(rec.scale >= 1e-12)) {
    throw Error(ErrorCode::DegenerateBout, "bout '" + seq.bout_id + "' frame 0 has coincident joints");
  }
  rec.tx = seq.x(0, 0);
  rec.ty = seq.y(0, 0);
  rec.rotation = std::atan2(seq.y(0, 1) - rec.ty, seq.x(0, 1) - rec.tx);
  if (rec.rotation <= -std::numbers::pi) rec.rotation = std::numbers::pi;

  const double c = std::cos(rec.rotation);
  const double s = std::sin(rec.rotation);
  SkeletonSequence out = seq;
  for (std::size_t i = 0; i < seq.coords.size(); i += 2) {
    const double dx = seq.coords[i] - rec.tx;
    const double dy = seq.coords[i + 1] - rec.ty;
    out.coords[i] = (c * dx + s * dy) / rec.scale;
    out.coords[i + 1] = (-s * dx + c * dy) / rec.scale;
  }
  return {std::move(out), rec};
}

inline SkeletonSequence denormalize(const SkeletonSequence& seq, const NormalizationRecord& rec) {
  if (!(rec.scale > 0.0)) throw Error(ErrorCode::InvalidConfig, "normalization scale must be positive");
  const double c = std::cos(rec.rotation);
  const double s = std::sin(rec.rotation);
  SkeletonSequence out = seq;
  for (std::size_t i = 0; i < seq.coords.size(); i += 2) {
    const double px = seq.coords[i] * rec.scale;
    const double py = seq.coords[i + 1] * rec.scale;
    out.coords[i] = c * px - s * py + rec.tx;
    out.coords[i + 1] = s * px + c * py + rec.ty;
  }
  return out;
}

/// Repeats the last frame until T is a multiple of `multiple`.
inline SkeletonSequence pad_frames(const SkeletonSequence& seq, int multiple) {
  SkeletonSequence out = seq;
  const int rem = seq.T % multiple;
  if (rem == 0) return out;
  const int extra = multiple - rem;
  const auto frame_len = static_cast<std::size_t>(seq.J) * 2;
  const auto last = out.coords.end() - static_cast<std::ptrdiff_t>(frame_len);
  std::vector<double> last_frame(last, out.coords.end());
  for (int i = 0; i < extra; ++i) out.coords.insert(out.coords.end(), last_frame.begin(), last_frame.end());
  out.T += extra;
  return out;
}

/// Partition of an ascending frame list into consecutive groups of F.
struct SliceMap {
  int F = 1;
  std::vector<int> slice_of_frame;               // aligned to the input frame list
  std::vector<std::vector<int>> frames_of_slice;  // original frame indices

  int num_slices() const { return static_cast<int>(frames_of_slice.size()); }
};

inline SliceMap build_slice_map(std::span<const int> frame_indices, int F) {
  if (F < 1) throw Error(ErrorCode::InvalidConfig, "frames per slice must be positive");
  if (frame_indices.size() % static_cast<std::size_t>(F) != 0) {
    throw Error(ErrorCode::SliceMisaligned, std::to_string(frame_indices.size()) +
                                                " frames cannot be split into slices of " + std::to_string(F));
  }
  SliceMap map;
  map.F = F;
  map.slice_of_frame.resize(frame_indices.size());
  for (std::size_t i = 0; i < frame_indices.size(); ++i) {
    const auto s = i / static_cast<std::size_t>(F);
    if (s == map.frames_of_slice.size()) map.frames_of_slice.emplace_back();
    map.frames_of_slice[s].push_back(frame_indices[i]);
    map.slice_of_frame[i] = static_cast<int>(s);
  }
  return map;
}

}  // namespace msae
