#include <gtest/gtest.h>

#include <set>

#include "msae/masking.hpp"
#include "test_util.hpp"

namespace msae {
namespace {

TEST(MaskPlan, VisibleFrameCounts) {
  EXPECT_EQ(visible_frame_count(24, 3, 0.25), 18);
  EXPECT_EQ(visible_frame_count(24, 3, 0.0), 24);
  // 25 - 6 = 19, rounded down to 18.
  EXPECT_EQ(visible_frame_count(25, 3, 0.25), 18);
  EXPECT_EQ(masked_count(0.29, 100), 29);
  EXPECT_EQ(masked_count(1.0 / 3.0, 19), 6);
  EXPECT_EQ(masked_count(1.0 / 3.0, 3), 1);
}

TEST(MaskPlan, ZeroRatiosMaskNothing) {
  const auto plan = plan_mask(24, 19, 3, 0.0, 0.0, 9);
  EXPECT_TRUE(plan.masked_frames.empty());
  EXPECT_EQ(plan.visible_frames.size(), 24u);
  for (const auto& js : plan.masked_joints_per_visible_frame) EXPECT_TRUE(js.empty());
  EXPECT_EQ(mask_indicator(plan).count(), 0u);
}

TEST(MaskPlan, DefaultLoadIs234Of456) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto plan = plan_mask(24, 19, 3, 0.25, 1.0 / 3.0, seed);
    EXPECT_EQ(plan.visible_frames.size(), 18u);
    EXPECT_EQ(plan.masked_frames.size(), 6u);
    std::size_t visible_tokens = 0;
    for (const auto& js : plan.masked_joints_per_visible_frame) visible_tokens += 19 - js.size();
    EXPECT_EQ(visible_tokens, 234u);
    EXPECT_EQ(mask_indicator(plan).count(), 222u);
    EXPECT_EQ(gather_visible(test::random_sequence(24, 19, seed), plan).size(), 234u);
  }
}

TEST(MaskPlan, InvariantsOverRandomPlans) {
  SplitMix64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int F = 1 + static_cast<int>(rng.below(4));
    const int T = F + static_cast<int>(rng.below(30));
    const int J = 1 + static_cast<int>(rng.below(25));
    const double r_t = rng.uniform(0.0, 0.6);
    const double r_s = rng.uniform(0.0, 0.99);
    const std::uint64_t seed = rng.next();
    if (visible_frame_count(T, F, r_t) < F) {
      EXPECT_THROW(plan_mask(T, J, F, r_t, r_s, seed), Error);
      continue;
    }
    const auto plan = plan_mask(T, J, F, r_t, r_s, seed);
    EXPECT_TRUE(std::is_sorted(plan.masked_frames.begin(), plan.masked_frames.end()));
    EXPECT_TRUE(std::is_sorted(plan.visible_frames.begin(), plan.visible_frames.end()));
    std::set<int> all(plan.masked_frames.begin(), plan.masked_frames.end());
    all.insert(plan.visible_frames.begin(), plan.visible_frames.end());
    EXPECT_EQ(all.size(), static_cast<std::size_t>(T));
    EXPECT_EQ(plan.masked_frames.size() + plan.visible_frames.size(), static_cast<std::size_t>(T));
    EXPECT_EQ(static_cast<int>(plan.visible_frames.size()), visible_frame_count(T, F, r_t));
    EXPECT_EQ(plan.visible_frames.size() % static_cast<std::size_t>(F), 0u);
    const int per = static_cast<int>(std::floor(r_s * J + 1e-9));
    for (const auto& js : plan.masked_joints_per_visible_frame) {
      EXPECT_EQ(static_cast<int>(js.size()), per);
      EXPECT_TRUE(std::is_sorted(js.begin(), js.end()));
      EXPECT_EQ(std::set<int>(js.begin(), js.end()).size(), js.size());
    }
    // Determinism.
    EXPECT_EQ(to_json(plan), to_json(plan_mask(T, J, F, r_t, r_s, seed)));

    // Gather and mask indicator partition the grid.
    const auto seq = test::random_sequence(T, J, seed);
    const auto vis = gather_visible(seq, plan);
    const auto grid = mask_indicator(plan);
    EXPECT_EQ(vis.size(), plan.visible_frames.size() * static_cast<std::size_t>(J - per));
    EXPECT_EQ(vis.size() + grid.count(), static_cast<std::size_t>(T * J));
    for (std::size_t i = 0; i < vis.size(); ++i) {
      const auto [f, j] = vis.positions[i];
      EXPECT_FALSE(grid(f, j));
      EXPECT_EQ(vis.coords[2 * i], seq.x(f, j));
      EXPECT_EQ(vis.coords[2 * i + 1], seq.y(f, j));
      if (i > 0) {
        const auto prev = vis.positions[i - 1];
        EXPECT_TRUE(prev.frame < f || (prev.frame == f && prev.joint < j));
      }
    }
    for (int f : plan.masked_frames) {
      for (int j = 0; j < J; ++j) EXPECT_TRUE(grid(f, j));
    }
  }
}

TEST(MaskPlan, TooFewVisibleFramesIsEmptyVisible) {
  try {
    plan_mask(4, 5, 3, 0.5, 0.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyVisible);
  }
}

TEST(MaskPlan, FrameFrequencyIsUniform) {
  std::vector<int> hits(10, 0);
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    for (int f : plan_mask(10, 4, 1, 0.5, 0.25, static_cast<std::uint64_t>(s)).masked_frames) ++hits[f];
  }
  for (int f = 0; f < 10; ++f) EXPECT_NEAR(hits[f] / static_cast<double>(n), 0.5, 0.02) << "frame " << f;
}

TEST(MaskPlan, JsonRoundTrip) {
  const auto plan = plan_mask(12, 7, 3, 0.25, 0.3, 0xDEADBEEFCAFEULL);
  const auto back = plan_from_json(nlohmann::json::parse(to_json(plan).dump()));
  EXPECT_EQ(back.masked_frames, plan.masked_frames);
  EXPECT_EQ(back.visible_frames, plan.visible_frames);
  EXPECT_EQ(back.masked_joints_per_visible_frame, plan.masked_joints_per_visible_frame);
  EXPECT_EQ(back.seed, plan.seed);
  EXPECT_EQ(back.r_t, plan.r_t);
  EXPECT_EQ(back.T, 12);
  EXPECT_THROW(plan_from_json(nlohmann::json{{"T", 1}}), Error);
}

TEST(MaskSeed, DependsOnAllInputs) {
  const auto a = mask_seed(1, "bout_0", 0);
  EXPECT_EQ(a, mask_seed(1, "bout_0", 0));
  EXPECT_NE(a, mask_seed(2, "bout_0", 0));
  EXPECT_NE(a, mask_seed(1, "bout_1", 0));
  EXPECT_NE(a, mask_seed(1, "bout_0", 1));
}

MaskPlan hand_plan() {
  MaskPlan plan;
  plan.T = 2;
  plan.J = 2;
  plan.masked_frames = {1};
  plan.visible_frames = {0};
  plan.masked_joints_per_visible_frame = {{0}};
  return plan;
}

TEST(Gather, HandEnumeratedCase) {
  const auto seq = test::random_sequence(2, 2, 3);
  const auto vis = gather_visible(seq, hand_plan());
  ASSERT_EQ(vis.size(), 1u);
  EXPECT_EQ(vis.positions[0].frame, 0);
  EXPECT_EQ(vis.positions[0].joint, 1);
  EXPECT_EQ(vis.coords[0], seq.x(0, 1));
}

TEST(Gather, NothingMaskedIsRowMajor) {
  const auto seq = test::random_sequence(6, 4, 8);
  const auto vis = gather_visible(seq, plan_mask(6, 4, 3, 0, 0, 1));
  EXPECT_EQ(vis.coords, seq.coords);
}

TEST(Gather, PlanMismatch) {
  try {
    gather_visible(test::random_sequence(3, 2, 1), hand_plan());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PlanMismatch);
  }
}

TEST(Scatter, PerCellOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto original = test::random_sequence(9, 5, seed);
    const auto predicted = test::random_sequence(9, 5, seed + 100);
    const auto plan = plan_mask(9, 5, 3, 0.34, 0.4, seed);
    const auto out = scatter_restore(predicted, original, plan);
    std::set<std::pair<int, int>> masked;
    for (int f : plan.masked_frames)
      for (int j = 0; j < 5; ++j) masked.insert({f, j});
    for (std::size_t i = 0; i < plan.visible_frames.size(); ++i)
      for (int j : plan.masked_joints_per_visible_frame[i]) masked.insert({plan.visible_frames[i], j});
    for (int f = 0; f < 9; ++f) {
      for (int j = 0; j < 5; ++j) {
        const auto& src = masked.count({f, j}) ? predicted : original;
        EXPECT_EQ(out.x(f, j), src.x(f, j));
        EXPECT_EQ(out.y(f, j), src.y(f, j));
      }
    }
    EXPECT_EQ(scatter_restore(original, original, plan), original);
  }
  const auto original = test::random_sequence(6, 3, 1);
  EXPECT_EQ(scatter_restore(test::random_sequence(6, 3, 2), original, plan_mask(6, 3, 3, 0, 0, 1)), original);
}

}  // namespace
}  // namespace msae
