#include <gtest/gtest.h>

#include <fstream>

#include "msae/datagen.hpp"
#include "msae/train.hpp"
#include "test_util.hpp"

namespace msae {
namespace {

ModelConfig quick_model() {
  ModelConfig c = test::small_config(1, 1);
  c.J = 5;
  c.d_enc = 8;
  c.max_T = 24;
  return c;
}

TrainConfig quick_train(const std::filesystem::path& dir, int steps) {
  SynthParams sp;
  sp.J = 5;
  sp.T = 12;
  const auto data = (dir / "data.jsonl").string();
  if (!std::filesystem::exists(data)) write_bouts(data, generate_dataset(sp, 6, 3));
  TrainConfig t;
  t.data_path = data;
  t.out_dir = (dir / "run").string();
  t.total_steps = steps;
  t.warmup_steps = 5;
  t.batch_size = 4;
  t.seed = 11;
  t.log_wall_time = false;
  return t;
}

TEST(Adam, ZeroGradientNoDecayIsNoop) {
  const auto cfg = test::small_config();
  auto p = test::random_params<float>(cfg, 1);
  const auto before = std::vector<float>(p.flat().begin(), p.flat().end());
  ParamBuffer<float> g(p.registry_ptr());
  OptimizerState<float> st(p.size());
  TrainConfig tc;
  tc.weight_decay = 0;
  adam_step(p, g, st, 1e-3, tc);
  EXPECT_EQ(std::vector<float>(p.flat().begin(), p.flat().end()), before);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByLr) {
  const auto cfg = test::small_config();
  ParamBuffer<double> p(std::make_shared<const ParamRegistry>(cfg));
  ParamBuffer<double> g(p.registry_ptr());
  for (auto& v : g.flat()) v = 1.0;
  OptimizerState<double> st(p.size());
  TrainConfig tc;
  tc.eps = 0;
  tc.weight_decay = 0;
  adam_step(p, g, st, 0.01, tc);
  for (double v : p.flat()) EXPECT_NEAR(v, -0.01, 1e-15);
}

TEST(Adam, MatchesOracleOverSeveralSteps) {
  const auto cfg = test::small_config();
  auto p = test::random_params<double>(cfg, 2);
  ParamBuffer<double> g(p.registry_ptr());
  OptimizerState<double> st(p.size());
  TrainConfig tc;
  tc.weight_decay = 0.05;
  oracle::AdamHyper h{0.0, tc.b1, tc.b2, tc.eps, tc.weight_decay};
  oracle::Vec rp(p.flat().begin(), p.flat().end()), rm(p.size(), 0.0), rv(p.size(), 0.0);
  SplitMix64 rng(3);
  for (long step = 1; step <= 5; ++step) {
    for (auto& v : g.flat()) v = rng.uniform(-2, 2);
    h.lr = 1e-2 / static_cast<double>(step);
    adam_step(p, g, st, h.lr, tc);
    adam_reference(rp, oracle::Vec(g.flat().begin(), g.flat().end()), rm, rv, step, h);
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p.flat()[i], rp[i]);
    EXPECT_EQ(st.m[i], rm[i]);
    EXPECT_EQ(st.v[i], rv[i]);
    EXPECT_GE(st.v[i], 0.0);
  }
}

TEST(Adam, NonFiniteGradientNamesTensor) {
  const auto cfg = test::small_config();
  auto p = test::random_params<float>(cfg, 2);
  ParamBuffer<float> g(p.registry_ptr());
  const int id = p.registry().find("dec.blocks.0.mlp.fc2.bias");
  g.tensor(id)[1] = std::numeric_limits<float>::quiet_NaN();
  OptimizerState<float> st(p.size());
  const auto before = std::vector<float>(p.flat().begin(), p.flat().end());
  try {
    adam_step(p, g, st, 1e-3, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGradient);
    EXPECT_NE(std::string(e.what()).find("dec.blocks.0.mlp.fc2.bias"), std::string::npos);
  }
  EXPECT_EQ(std::vector<float>(p.flat().begin(), p.flat().end()), before);
  EXPECT_EQ(st.step, 0);
}

TEST(Schedule, WarmupAndCosine) {
  TrainConfig c;
  c.lr = 2e-3;
  c.warmup_steps = 10;
  c.total_steps = 110;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, c), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(10, c), 2e-3);
  EXPECT_NEAR(lr_at(110, c), 2e-5, 1e-12);
  // Halfway through the decay: midpoint of lr and lr/100.
  EXPECT_NEAR(lr_at(60, c), 0.5 * (2e-3 + 2e-5), 1e-15);
  for (long s = 11; s <= 110; ++s) EXPECT_LE(lr_at(s, c), lr_at(s - 1, c));
}

TEST(Clip, GlobalNormBound) {
  const auto cfg = test::small_config();
  auto g = test::random_params<double>(cfg, 9, 5.0);
  const double pre = clip_grad_norm(g, 1.0);
  EXPECT_GT(pre, 1.0);
  double sq = 0;
  for (double v : g.flat()) sq += v * v;
  EXPECT_LE(std::sqrt(sq), 1.0 + 1e-6);
  EXPECT_NEAR(clip_grad_norm(g, 10.0), std::sqrt(sq), 1e-12);
}

TEST(Train, ZeroStepsSavesInitialCheckpointOnly) {
  const auto dir = test::scratch_dir("train_zero");
  const auto cfg = quick_train(dir, 0);
  const auto r = train(cfg, quick_model());
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_EQ(test::slurp(std::filesystem::path(cfg.out_dir) / "metrics.jsonl"), "");
  const auto m = load_model(r.final_checkpoint);
  EXPECT_EQ(m.manifest.step, 0);
  ParamBuffer<float> fresh(m.params.registry_ptr());
  fresh.initialize(cfg.seed);
  EXPECT_EQ(std::memcmp(fresh.flat().data(), m.params.flat().data(), fresh.size() * 4), 0);
}

TEST(Train, LogFormatAndLoadableCheckpoint) {
  const auto dir = test::scratch_dir("train_log");
  auto cfg = quick_train(dir, 6);
  cfg.checkpoint_every = 4;
  cfg.log_wall_time = true;
  const auto r = train(cfg, quick_model());
  ASSERT_EQ(r.metrics.size(), 6u);
  std::ifstream in(std::filesystem::path(cfg.out_dir) / "metrics.jsonl");
  std::string line;
  long expected_step = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.size(), 4u);
    EXPECT_EQ(j["step"].get<long>(), expected_step++);
    EXPECT_TRUE(std::isfinite(j["loss"].get<double>()));
    EXPECT_GE(j["wall_ms"].get<double>(), 0.0);
  }
  EXPECT_EQ(expected_step, 6);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(cfg.out_dir) / "step_00000004.msae"));
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(cfg.out_dir) / "step_00000006.msae"));
  const auto m = load_model(r.final_checkpoint);
  EXPECT_EQ(m.manifest.step, 6);
  ASSERT_TRUE(m.optimizer.has_value());
  EXPECT_EQ(m.optimizer->step, 6);
  ASSERT_TRUE(m.train.has_value());
  EXPECT_EQ(m.train->total_steps, 6);
  EXPECT_TRUE(m.model == quick_model());
}

TEST(Train, DeterministicLogsAndCheckpoints) {
  namespace fs = std::filesystem;
  const auto dir = test::scratch_dir("train_det");
  const auto cfg = quick_train(dir, 100);
  const fs::path out(cfg.out_dir);
  train(cfg, quick_model());
  const auto log_a = test::slurp(out / "metrics.jsonl");
  const auto ckpt_a = test::slurp(out / "final.msae");
  fs::remove_all(out);
  train(cfg, quick_model());
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, test::slurp(out / "metrics.jsonl"));
  EXPECT_EQ(ckpt_a, test::slurp(out / "final.msae"));
}

TEST(Train, ResumeEquivalence) {
  const auto full_dir = test::scratch_dir("train_resume_full");
  const auto part_dir = test::scratch_dir("train_resume_part");
  auto full = quick_train(full_dir, 20);
  auto part = quick_train(part_dir, 20);
  part.data_path = full.data_path;
  train(full, quick_model());

  part.checkpoint_every = 9;
  train(part, quick_model());
  const auto ckpt = (std::filesystem::path(part.out_dir) / "step_00000009.msae").string();
  TrainOptions opts;
  opts.resume = ckpt;
  const auto r = train(part, quick_model(), opts);
  ASSERT_EQ(r.metrics.size(), 11u);
  EXPECT_EQ(r.metrics.front().step, 9);

  EXPECT_EQ(test::slurp(std::filesystem::path(part.out_dir) / "metrics.jsonl"),
            test::slurp(std::filesystem::path(full.out_dir) / "metrics.jsonl"));
  const auto ka = load_checkpoint((std::filesystem::path(full.out_dir) / "final.msae").string());
  const auto kb = load_checkpoint((std::filesystem::path(part.out_dir) / "final.msae").string());
  EXPECT_EQ(ka.values, kb.values);
}

TEST(Train, ErrorsCarryContext) {
  const auto dir = test::scratch_dir("train_err");
  auto cfg = quick_train(dir, 3);
  auto model = quick_model();
  model.J = 7;
  try {
    train(cfg, model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeError);
  }
  cfg.data_path.clear();
  EXPECT_THROW(train(cfg, quick_model()), Error);
  cfg = quick_train(dir, 3);
  cfg.r_t = 0.9;  // leaves fewer than F frames visible
  try {
    train(cfg, quick_model());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyVisible);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainConfig c;
  c.lr = 0.5;
  c.b1 = 0.8;
  c.loss_on = "all";
  c.seed = 1234567890123ULL;
  const nlohmann::json j = c;
  EXPECT_EQ(j["betas"][0], 0.8);
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(back.lr, 0.5);
  EXPECT_EQ(back.b1, 0.8);
  EXPECT_EQ(back.loss_on, "all");
  EXPECT_EQ(back.seed, c.seed);
  c.loss_on = "bogus";
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace msae
