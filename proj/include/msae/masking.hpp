#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msae/error.hpp"
#include "msae/rng.hpp"
#include "msae/skeleton.hpp"

namespace msae {

/// Outcome of the two-stage (frames, then joints within visible frames)
/// masking of one bout.
struct MaskPlan {
  int T = 0;
  int J = 0;
  double r_t = 0.0;
  double r_s = 0.0;
  std::vector<int> masked_frames;
  std::vector<int> visible_frames;
  std::vector<std::vector<int>> masked_joints_per_visible_frame;
  std::uint64_t seed = 0;

  bool operator==(const MaskPlan&) const = default;
};

struct Position {
  int frame = 0;
  int joint = 0;
  bool operator==(const Position&) const = default;
};

/// floor(ratio * n) that tolerates products such as 0.29 * 100 landing a
/// hair below an integer.
inline int masked_count(double ratio, int n) {
  return static_cast<int>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

/// Number of frames left visible: T - floor(r_t*T), rounded down to a
/// multiple of F.
inline int visible_frame_count(int T, int F, double r_t) {
  const int visible = T - masked_count(r_t, T);
  return visible - visible % F;
}

inline MaskPlan plan_mask(int T, int J, int F, double r_t, double r_s, std::uint64_t seed) {
  if (F < 1 || T < F) throw Error(ErrorCode::InvalidConfig, "mask plan needs T >= F >= 1");
  if (J < 1) throw Error(ErrorCode::InvalidConfig, "mask plan needs J >= 1");
  if (!(r_t >= 0.0 && r_t < 1.0) || !(r_s >= 0.0 && r_s < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "masking ratios must lie in [0, 1)");
  }
  const int visible = visible_frame_count(T, F, r_t);
  if (visible < F) {
    throw Error(ErrorCode::EmptyVisible, "only " + std::to_string(visible) + " visible frames remain for F=" +
                                             std::to_string(F));
  }

  MaskPlan plan;
  plan.T = T;
  plan.J = J;
  plan.r_t = r_t;
  plan.r_s = r_s;
  plan.seed = seed;

  SplitMix64 rng(seed);
  plan.masked_frames = sample_without_replacement(T, T - visible, rng);
  std::sort(plan.masked_frames.begin(), plan.masked_frames.end());
  std::vector<char> is_masked(static_cast<std::size_t>(T), 0);
  for (int f : plan.masked_frames) is_masked[static_cast<std::size_t>(f)] = 1;
  for (int f = 0; f < T; ++f) {
    if (!is_masked[static_cast<std::size_t>(f)]) plan.visible_frames.push_back(f);
  }

  const int per_frame = masked_count(r_s, J);
  plan.masked_joints_per_visible_frame.reserve(plan.visible_frames.size());
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    auto joints = sample_without_replacement(J, per_frame, rng);
    std::sort(joints.begin(), joints.end());
    plan.masked_joints_per_visible_frame.push_back(std::move(joints));
  }
  return plan;
}

/// Seed for the plan of one bout in one epoch of a run.
inline std::uint64_t mask_seed(std::uint64_t run_seed, const std::string& bout_id, std::uint64_t epoch) {
  return derive_seed(run_seed, fnv1a(bout_id), epoch);
}

/// Row-major [T][J] grid, 1 where the position is hidden from the encoder.
struct MaskGrid {
  int T = 0;
  int J = 0;
  std::vector<unsigned char> cells;

  bool operator()(int frame, int joint) const {
    return cells[static_cast<std::size_t>(frame) * static_cast<std::size_t>(J) + static_cast<std::size_t>(joint)] != 0;
  }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }
};

inline MaskGrid mask_indicator(const MaskPlan& plan) {
  MaskGrid grid{plan.T, plan.J,
                std::vector<unsigned char>(static_cast<std::size_t>(plan.T) * static_cast<std::size_t>(plan.J), 0)};
  auto cell = [&](int f, int j) -> unsigned char& {
    return grid.cells[static_cast<std::size_t>(f) * static_cast<std::size_t>(plan.J) + static_cast<std::size_t>(j)];
  };
  for (int f : plan.masked_frames) {
    for (int j = 0; j < plan.J; ++j) cell(f, j) = 1;
  }
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    for (int j : plan.masked_joints_per_visible_frame[i]) cell(plan.visible_frames[i], j) = 1;
  }
  return grid;
}

inline void check_plan(const MaskPlan& plan, int T, int J) {
  if (plan.T != T || plan.J != J) {
    throw Error(ErrorCode::PlanMismatch, "plan is for T=" + std::to_string(plan.T) + ", J=" + std::to_string(plan.J) +
                                             " but sequence has T=" + std::to_string(T) + ", J=" + std::to_string(J));
  }
  if (plan.masked_joints_per_visible_frame.size() != plan.visible_frames.size()) {
    throw Error(ErrorCode::PlanMismatch, "masked joint lists are not aligned to visible frames");
  }
}

struct VisibleSet {
  std::vector<double> coords;  // [N][2]
  std::vector<Position> positions;

  std::size_t size() const { return positions.size(); }
};

/// Unmasked (frame, joint) pairs of visible frames in (frame, joint) order.
inline VisibleSet gather_visible(const SkeletonSequence& seq, const MaskPlan& plan) {
  check_plan(plan, seq.T, seq.J);
  VisibleSet out;
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    const int f = plan.visible_frames[i];
    const auto& hidden = plan.masked_joints_per_visible_frame[i];
    for (int j = 0; j < seq.J; ++j) {
      if (std::binary_search(hidden.begin(), hidden.end(), j)) continue;
      out.positions.push_back({f, j});
      out.coords.push_back(seq.x(f, j));
      out.coords.push_back(seq.y(f, j));
    }
  }
  return out;
}

/// Visible positions keep `original`; masked positions take `predicted`.
inline SkeletonSequence scatter_restore(const SkeletonSequence& predicted, const SkeletonSequence& original,
                                        const MaskPlan& plan) {
  check_plan(plan, original.T, original.J);
  if (predicted.T != original.T || predicted.J != original.J) {
    throw Error(ErrorCode::PlanMismatch, "prediction grid does not cover the original sequence");
  }
  const MaskGrid hidden = mask_indicator(plan);
  SkeletonSequence out = original;
  for (int f = 0; f < original.T; ++f) {
    for (int j = 0; j < original.J; ++j) {
      if (!hidden(f, j)) continue;
      out.x(f, j) = predicted.x(f, j);
      out.y(f, j) = predicted.y(f, j);
    }
  }
  return out;
}

inline nlohmann::json to_json(const MaskPlan& plan) {
  return {{"T", plan.T},
          {"J", plan.J},
          {"r_t", plan.r_t},
          {"r_s", plan.r_s},
          {"masked_frames", plan.masked_frames},
          {"visible_frames", plan.visible_frames},
          {"masked_joints_per_visible_frame", plan.masked_joints_per_visible_frame},
          {"seed", plan.seed}};
}

inline MaskPlan plan_from_json(const nlohmann::json& j) {
  try {
    MaskPlan plan;
    plan.T = j.at("T").get<int>();
    plan.J = j.at("J").get<int>();
    plan.r_t = j.at("r_t").get<double>();
    plan.r_s = j.at("r_s").get<double>();
    plan.masked_frames = j.at("masked_frames").get<std::vector<int>>();
    plan.visible_frames = j.at("visible_frames").get<std::vector<int>>();
    plan.masked_joints_per_visible_frame = j.at("masked_joints_per_visible_frame").get<std::vector<std::vector<int>>>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("mask plan: ") + e.what());
  }
}

}  // namespace msae
