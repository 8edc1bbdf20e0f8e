#include <gtest/gtest.h>

#include "msae/model/msae.hpp"
#include "test_util.hpp"

namespace msae {
namespace {

using test::lookup;

TEST(Registry, DefaultDepths) {
  const ParamRegistry reg{ModelConfig{}};
  EXPECT_EQ(reg.enc_blocks().size(), 9u);
  EXPECT_EQ(reg.dec_blocks().size(), 4u);
  EXPECT_GE(reg.find("enc.stse.coord_proj"), 0);
  EXPECT_GE(reg.find("enc.blocks.8.stga.wq"), 0);
  EXPECT_LT(reg.find("enc.blocks.9.stga.wq"), 0);
  EXPECT_GE(reg.find("dec.blocks.3.iffa.depthwise"), 0);
  EXPECT_LT(reg.find("dec.blocks.4.iffa.depthwise"), 0);
  std::size_t offset = 0;
  for (const auto& t : reg.tensors()) {
    EXPECT_EQ(t.offset, offset) << t.name;
    offset += t.size();
  }
  EXPECT_EQ(offset, reg.total_size());
}

TEST(Registry, GateWidthIsQuarter) {
  ModelConfig cfg;
  const ParamRegistry reg{cfg};
  EXPECT_EQ(reg.tensor(reg.find("enc.blocks.0.gate.w1")).rows, 16);
  EXPECT_EQ(reg.tensor(reg.find("dec.blocks.0.gate.w1")).rows, 8);
}

TEST(Config, Validation) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  c.iffa_kernel = 4;
  EXPECT_THROW(c.validate(), Error);
  c = ModelConfig{};
  const nlohmann::json j = c;
  EXPECT_EQ(j["n_enc"], 9);
  ModelConfig back;
  back.d_dec = 1;
  from_json(j, back);
  EXPECT_TRUE(back == c);
}

TEST(Encoder, DefaultLoadGives234Tokens) {
  auto p = ParamBuffer<float>(std::make_shared<const ParamRegistry>(ModelConfig{}));
  p.initialize(1);
  const auto seq = test::random_sequence(24, 19, 2);
  const auto plan = plan_mask(24, 19, 3, 0.25, 1.0 / 3.0, 3);
  const auto latent = encoder_forward(gather_visible(seq, plan), p);
  EXPECT_EQ(latent.size(), 234);
  EXPECT_EQ(latent.tokens.cols(), 64);
  EXPECT_EQ(latent.num_slices(), 6);
  EXPECT_TRUE(latent.tokens.allFinite());
}

TEST(Encoder, ZeroDepthIsStseOnly) {
  const auto cfg = test::small_config(0, 1);
  const auto p = test::random_params<double>(cfg, 4);
  const auto seq = test::random_sequence(6, 3, 5);
  const auto vis = gather_visible(seq, plan_mask(6, 3, 3, 0, 1.0 / 3.0, 6));
  const auto latent = encoder_forward(vis, p);
  const auto direct = stse_encode(coords_matrix<double>(vis.coords), vis.positions, p);
  EXPECT_EQ(latent.tokens, direct.tokens);
}

TEST(Decoder, NothingMaskedAndShape) {
  const auto cfg = test::small_config();
  const auto p = test::random_params<double>(cfg, 7);
  const auto seq = test::random_sequence(6, 3, 8);
  const auto plan = plan_mask(6, 3, 3, 0, 0, 0);
  const auto out = decoder_forward(encoder_forward(gather_visible(seq, plan), p), plan, p);
  EXPECT_EQ(out.rows(), 18);
  EXPECT_EQ(out.cols(), 2);
}

TEST(Decoder, ZeroHeadGivesBias) {
  const auto cfg = test::small_config();
  auto p = test::random_params<double>(cfg, 9);
  p.mat(p.registry().head_weight()).setZero();
  p.vec(p.registry().head_bias()) << 0.25, -1.5;
  const auto seq = test::random_sequence(6, 3, 10);
  const auto plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 11);
  const auto out = decoder_forward(encoder_forward(gather_visible(seq, plan), p), plan, p);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    EXPECT_EQ(out(r, 0), 0.25);
    EXPECT_EQ(out(r, 1), -1.5);
  }
}

TEST(Decoder, Errors) {
  const auto cfg = test::small_config();
  const auto p = test::random_params<double>(cfg, 12);
  const auto seq = test::random_sequence(6, 3, 13);
  const auto plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 14);
  const auto latent = encoder_forward(gather_visible(seq, plan), p);
  auto code = [&](const MaskPlan& pl) {
    try {
      decoder_forward(latent, pl, p);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  auto wrong = plan;
  wrong.J = 4;
  EXPECT_EQ(code(wrong), ErrorCode::PlanMismatch);
  const auto other = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 15);
  if (other.masked_frames != plan.masked_frames) EXPECT_EQ(code(other), ErrorCode::PlanMismatch);
  auto ragged = plan;
  ragged.T = 7;
  ragged.masked_frames.push_back(6);
  EXPECT_EQ(code(ragged), ErrorCode::SliceMisaligned);
}

TEST(MaskedMse, Examples) {
  const auto target = test::random_matrix<double>(6, 2, 1);
  MaskGrid all{3, 2, std::vector<unsigned char>(6, 1)};
  EXPECT_EQ(masked_mse<double>(target, target, all), 0.0);
  EXPECT_DOUBLE_EQ(masked_mse<double>(Mat<double>(target.array() + 1.0), target, all), 1.0);

  MaskGrid none{3, 2, std::vector<unsigned char>(6, 0)};
  try {
    masked_mse<double>(target, target, none);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyLossSupport);
  }
  EXPECT_EQ(masked_mse<double>(target, target, none, LossSupport::All), 0.0);
}

TEST(MaskedMse, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pred = test::random_matrix<double>(6, 2, seed);
    const auto target = test::random_matrix<double>(6, 2, seed + 100);
    MaskGrid grid{3, 2, {1, 0, 0, 1, 1, 0}};
    const oracle::Vec p(pred.data(), pred.data() + 12);
    const oracle::Vec t(target.data(), target.data() + 12);
    EXPECT_EQ(masked_mse<double>(pred, target, grid), oracle::masked_mse_reference(p, t, grid.cells));
    EXPECT_EQ(masked_mse<double>(pred, target, grid, LossSupport::All),
              oracle::masked_mse_reference(p, t, grid.cells, true));
  }
}

TEST(Pipeline, MatchesScalarOracle) {
  for (const auto& [n_enc, n_dec] : std::vector<std::pair<int, int>>{{1, 1}, {9, 4}, {0, 0}}) {
    const auto cfg = test::small_config(n_enc, n_dec);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto p = test::random_params<double>(cfg, seed + 1);
      const auto seq = test::random_sequence(6, 3, seed + 2);
      const auto plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, seed + 3);
      for (auto support : {LossSupport::Masked, LossSupport::All}) {
        const double model = bout_loss<double>(seq, plan, p, support, nullptr);
        const double ref =
            oracle::pipeline_reference(test::oracle_config(cfg), lookup(p), seq.coords, 6, plan, support == LossSupport::All);
        EXPECT_NEAR(model, ref, 1e-9) << n_enc << "/" << n_dec;
      }
    }
  }
}

TEST(Pipeline, ZeroParamsGiveMeanSquaredTarget) {
  const auto cfg = test::small_config();
  ParamBuffer<double> p(std::make_shared<const ParamRegistry>(cfg));
  const auto seq = test::random_sequence(6, 3, 5);
  const auto plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 6);
  const auto grid = mask_indicator(plan);
  double sum = 0;
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    if (grid.cells[c]) sum += seq.coords[2 * c] * seq.coords[2 * c] + seq.coords[2 * c + 1] * seq.coords[2 * c + 1];
  }
  const double expected = sum / (2.0 * static_cast<double>(grid.count()));
  EXPECT_NEAR(bout_loss<double>(seq, plan, p, LossSupport::Masked, nullptr), expected, 1e-15);
  EXPECT_NEAR(oracle::pipeline_reference(test::oracle_config(cfg), lookup(p), seq.coords, 6, plan), expected, 1e-15);
}

TEST(Gradient, PerfectPredictionGivesZeroLossAndBiasGradient) {
  const auto cfg = test::small_config();
  ParamBuffer<double> p(std::make_shared<const ParamRegistry>(cfg));
  p.vec(p.registry().head_bias()) << 0.5, -0.25;
  SkeletonSequence seq("const", 100, 6, 3);
  for (int f = 0; f < 6; ++f)
    for (int j = 0; j < 3; ++j) {
      seq.x(f, j) = 0.5;
      seq.y(f, j) = -0.25;
    }
  const MaskPlan plan = plan_mask(6, 3, 3, 0.5, 1.0 / 3.0, 1);
  const auto r = forward_backward<double>(std::span(&seq, 1), std::span(&plan, 1), p);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.tensor(p.registry().head_bias())) EXPECT_EQ(g, 0.0);
}

ModelConfig gradcheck_config() {
  ModelConfig c = test::small_config(2, 1);
  c.d_enc = 8;
  c.d_dec = 4;
  return c;
}

TEST(Gradient, MatchesFiniteDifferences) {
  const auto cfg = gradcheck_config();
  const auto p = test::random_params<double>(cfg, 101);
  ASSERT_LE(p.size(), 5000u);
  std::vector<SkeletonSequence> bouts{test::random_sequence(6, 3, 102, 1.0, "a"),
                                      test::random_sequence(6, 3, 103, 1.0, "b")};
  std::vector<MaskPlan> plans{plan_mask(6, 3, 3, 0.34, 1.0 / 3.0, 104), plan_mask(6, 3, 3, 0.0, 1.0 / 3.0, 105)};
  const auto result = forward_backward<double>(bouts, plans, p);
  const oracle::Vec analytic(result.grad.flat().begin(), result.grad.flat().end());

  auto loss = [&](const oracle::Vec& flat) {
    ParamBuffer<double> q(p.registry_ptr());
    std::copy(flat.begin(), flat.end(), q.flat().begin());
    double total = 0;
    for (std::size_t i = 0; i < bouts.size(); ++i) total += bout_loss<double>(bouts[i], plans[i], q, LossSupport::Masked, nullptr);
    return total / static_cast<double>(bouts.size());
  };
  EXPECT_NEAR(loss(oracle::Vec(p.flat().begin(), p.flat().end())), result.loss, 1e-14);
  const auto numeric = oracle::finite_diff_grad(loss, oracle::Vec(p.flat().begin(), p.flat().end()), 1e-5);
  std::vector<oracle::TensorRange> ranges;
  for (const auto& t : p.registry().tensors()) ranges.push_back({t.name, t.offset, t.size()});
  const auto report = oracle::compare_gradients(analytic, numeric, ranges, 1e-4);
  for (const auto& [name, err] : report.per_tensor) EXPECT_LE(err, 1e-4) << name;
  EXPECT_LE(report.global_max, 1e-4);
  EXPECT_EQ(report.failing_index, -1);
}

TEST(Gradient, UnusedFrameRowsAreExactlyZero) {
  const auto cfg = gradcheck_config();
  const auto p = test::random_params<double>(cfg, 7);
  const auto seq = test::random_sequence(6, 3, 8);
  const auto plan = plan_mask(6, 3, 3, 0.34, 1.0 / 3.0, 9);
  const auto r = forward_backward<double>(std::span(&seq, 1), std::span(&plan, 1), p);
  const auto& reg = p.registry();
  for (int f = 6; f < cfg.max_T; ++f) {
    EXPECT_EQ(r.grad.mat(reg.enc_embedding().frame_pos).row(f).cwiseAbs().sum(), 0.0);
    EXPECT_EQ(r.grad.mat(reg.dec_embedding().frame_pos).row(f).cwiseAbs().sum(), 0.0);
  }
  for (int f : plan.masked_frames) {
    EXPECT_EQ(r.grad.mat(reg.enc_embedding().frame_pos).row(f).cwiseAbs().sum(), 0.0);
  }
}

TEST(Gradient, IndependentOfThreadCount) {
  auto p = ParamBuffer<float>(std::make_shared<const ParamRegistry>(ModelConfig::tiny()));
  p.initialize(3);
  std::vector<SkeletonSequence> bouts;
  std::vector<MaskPlan> plans;
  for (int i = 0; i < 5; ++i) {
    bouts.push_back(test::random_sequence(12, 19, 10 + static_cast<std::uint64_t>(i), 1.0, "b" + std::to_string(i)));
    plans.push_back(plan_mask(12, 19, 3, 0.25, 1.0 / 3.0, static_cast<std::uint64_t>(i)));
  }
  const auto one = forward_backward<float>(bouts, plans, p, LossSupport::Masked, 1);
  const auto three = forward_backward<float>(bouts, plans, p, LossSupport::Masked, 3);
  EXPECT_EQ(one.loss, three.loss);
  EXPECT_EQ(std::memcmp(one.grad.flat().data(), three.grad.flat().data(), one.grad.size() * sizeof(float)), 0);
}

TEST(Embed, ZeroModelGivesZeroVector) {
  ParamBuffer<double> p(std::make_shared<const ParamRegistry>(test::small_config()));
  const auto e = embed_bout(test::random_sequence(5, 3, 1), p);
  ASSERT_EQ(e.size(), 4u);
  for (double v : e) EXPECT_EQ(v, 0.0);
}

TEST(Embed, MeanPoolMatchesLoop) {
  const auto cfg = test::small_config(2, 1);
  const auto p = test::random_params<double>(cfg, 2);
  const auto seq = test::random_sequence(6, 3, 3);
  const auto e = embed_bout(seq, p);
  EXPECT_EQ(e, embed_bout(seq, p));
  const auto latent = encoder_forward(gather_visible(seq, plan_mask(6, 3, 3, 0, 0, 0)), p);
  for (int c = 0; c < 4; ++c) {
    double sum = 0;
    for (int r = 0; r < latent.size(); ++r) sum += latent.tokens(r, c);
    EXPECT_NEAR(e[static_cast<std::size_t>(c)], sum / latent.size(), 1e-9);
  }
}

TEST(Embed, PadsToSliceMultiple) {
  const auto p = test::random_params<double>(test::small_config(1, 1), 4);
  const auto seq = test::random_sequence(4, 3, 5);
  EXPECT_EQ(embed_bout(seq, p), embed_bout(pad_frames(seq, 3), p));
}

}  // namespace
}  // namespace msae
