#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msae/checkpoint.hpp"
#include "msae/io.hpp"
#include "msae/masking.hpp"
#include "msae/model/msae.hpp"

namespace msae {

struct TrainConfig {
  double lr = 1e-3;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 100;
  int total_steps = 1000;
  int batch_size = 16;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  double r_t = 0.25;
  double r_s = 1.0 / 3.0;
  std::string loss_on = "masked";
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::string data_path;
  std::string out_dir = ".";
  bool log_wall_time = true;  // false writes wall_ms = 0 for byte-stable logs

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(b1 >= 0.0 && b1 < 1.0) || !(b2 >= 0.0 && b2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps >= 0.0)) fail("eps must be >= 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (warmup_steps < 0) fail("warmup_steps must be >= 0");
    if (total_steps < 0) fail("total_steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(grad_clip > 0.0)) fail("grad_clip must be > 0");
    if (!(r_t >= 0.0 && r_t < 1.0) || !(r_s >= 0.0 && r_s < 1.0)) fail("masking ratios must lie in [0, 1)");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    loss_support_from_string(loss_on);
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"betas", {c.b1, c.b2}},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"warmup_steps", c.warmup_steps},
       {"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"grad_clip", c.grad_clip},
       {"seed", c.seed},
       {"r_t", c.r_t},
       {"r_s", c.r_s},
       {"loss_on", c.loss_on},
       {"checkpoint_every", c.checkpoint_every},
       {"data_path", c.data_path},
       {"out_dir", c.out_dir},
       {"log_wall_time", c.log_wall_time}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  if (j.contains("betas")) {
    const auto betas = j.at("betas").get<std::vector<double>>();
    if (betas.size() != 2) throw Error(ErrorCode::InvalidConfig, "betas must have two entries");
    c.b1 = betas[0];
    c.b2 = betas[1];
  }
  get("eps", c.eps);
  get("weight_decay", c.weight_decay);
  get("warmup_steps", c.warmup_steps);
  get("total_steps", c.total_steps);
  get("batch_size", c.batch_size);
  get("grad_clip", c.grad_clip);
  get("seed", c.seed);
  get("r_t", c.r_t);
  get("r_s", c.r_s);
  get("loss_on", c.loss_on);
  get("checkpoint_every", c.checkpoint_every);
  get("data_path", c.data_path);
  get("out_dir", c.out_dir);
  get("log_wall_time", c.log_wall_time);
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename Scalar>
struct OptimizerState {
  std::vector<Scalar> m, v;
  long step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, Scalar(0)), v(n, Scalar(0)) {}
};

/// Linear warmup 0 -> lr, then cosine decay to lr/100 at total_steps.
inline double lr_at(long step, const TrainConfig& cfg) {
  const double floor_lr = cfg.lr / 100.0;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const long decay = static_cast<long>(cfg.total_steps) - cfg.warmup_steps;
  if (decay <= 0) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay), 0.0, 1.0);
  return floor_lr + (cfg.lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Throws NonFiniteGradient naming the first tensor with a NaN/Inf entry.
template <typename Scalar>
void check_finite(const ParamBuffer<Scalar>& grads) {
  for (const auto& t : grads.registry().tensors()) {
    const auto values = grads.flat().subspan(t.offset, t.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(static_cast<double>(values[i]))) {
        throw Error(ErrorCode::NonFiniteGradient, "tensor " + t.name + " entry " + std::to_string(i));
      }
    }
  }
}

/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr_t (m_hat / (sqrt(v_hat) + eps) + weight_decay p).
template <typename Scalar>
void adam_step(ParamBuffer<Scalar>& params, const ParamBuffer<Scalar>& grads, OptimizerState<Scalar>& state,
               double lr_t, const TrainConfig& cfg) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeError, "optimizer vectors differ in length");
  }
  check_finite(grads);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.b2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(cfg.b1);
  const auto b2 = static_cast<Scalar>(cfg.b2);
  const auto lr = static_cast<Scalar>(lr_t);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const auto wd = static_cast<Scalar>(cfg.weight_decay);
  const auto bc1 = static_cast<Scalar>(c1);
  const auto bc2 = static_cast<Scalar>(c2);
  auto p = params.flat();
  const auto g = grads.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (Scalar(1) - b1) * g[i];
    state.v[i] = b2 * state.v[i] + (Scalar(1) - b2) * g[i] * g[i];
    const Scalar mhat = state.m[i] / bc1;
    const Scalar vhat = state.v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
  }
}

/// Rescales to global L2 norm <= max_norm; returns the pre-clip norm.
template <typename Scalar>
double clip_grad_norm(ParamBuffer<Scalar>& grads, double max_norm) {
  double sq = 0.0;
  for (Scalar v : grads.flat()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const auto s = static_cast<Scalar>(max_norm / norm);
    for (auto& v : grads.flat()) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints of model + optimizer

inline nlohmann::json checkpoint_config(const ModelConfig& model, const std::optional<TrainConfig>& train) {
  nlohmann::json j = {{"model", model}};
  if (train) j["train"] = *train;
  return j;
}

/// Parameters, plus the optimizer moments when `opt` is given, in registry
/// order.
inline void save_model(const std::string& path, const ParamBuffer<float>& params, const OptimizerState<float>* opt,
                       const std::optional<TrainConfig>& train, std::uint64_t seed, long step) {
  CheckpointManifest m;
  m.config = checkpoint_config(params.registry().config(), train);
  m.seed = seed;
  m.step = step;
  m.tensors = params.registry().manifest_entries();
  std::vector<float> blob(params.flat().begin(), params.flat().end());
  if (opt) {
    const auto n = static_cast<std::int64_t>(params.size());
    m.tensors.push_back({"optimizer.m", {n}, "f32", 0});
    m.tensors.push_back({"optimizer.v", {n}, "f32", 0});
    blob.insert(blob.end(), opt->m.begin(), opt->m.end());
    blob.insert(blob.end(), opt->v.begin(), opt->v.end());
  }
  m.layout();
  save_checkpoint(path, std::move(m), blob);
}

struct LoadedModel {
  CheckpointManifest manifest;
  ModelConfig model;
  std::optional<TrainConfig> train;
  ParamBuffer<float> params;
  std::optional<OptimizerState<float>> optimizer;
};

inline LoadedModel load_model(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  ModelConfig mc;
  std::optional<TrainConfig> tc;
  try {
    mc = ck.manifest.config.at("model").get<ModelConfig>();
    if (ck.manifest.config.contains("train")) tc = ck.manifest.config.at("train").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": bad config in manifest: " + e.what());
  }
  auto registry = std::make_shared<const ParamRegistry>(mc);
  const auto& expected = registry->tensors();
  const auto& tensors = ck.manifest.tensors;
  if (tensors.size() != expected.size() && tensors.size() != expected.size() + 2) {
    throw Error(ErrorCode::ShapeError, path + ": tensor count does not match the model config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (tensors[i].name != expected[i].name || tensors[i].shape != expected[i].shape()) {
      throw Error(ErrorCode::ShapeError, path + ": tensor " + tensors[i].name + " does not match the registry");
    }
  }
  LoadedModel out{ck.manifest, mc, tc, ParamBuffer<float>(registry), std::nullopt};
  const std::size_t n = registry->total_size();
  std::copy(ck.values.begin(), ck.values.begin() + static_cast<std::ptrdiff_t>(n), out.params.flat().begin());
  if (tensors.size() == expected.size() + 2) {
    OptimizerState<float> opt(n);
    std::copy(ck.values.begin() + static_cast<std::ptrdiff_t>(n), ck.values.begin() + static_cast<std::ptrdiff_t>(2 * n),
              opt.m.begin());
    std::copy(ck.values.begin() + static_cast<std::ptrdiff_t>(2 * n), ck.values.end(), opt.v.begin());
    opt.step = static_cast<long>(ck.manifest.step);
    out.optimizer = std::move(opt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data preparation shared by training and evaluation

/// Normalizes and pads a raw bout to a multiple of F frames.
inline std::pair<SkeletonSequence, NormalizationRecord> prepare_bout(const SkeletonSequence& raw, const ModelConfig& cfg) {
  if (raw.J != cfg.J) {
    throw Error(ErrorCode::ShapeError, "bout '" + raw.bout_id + "' has " + std::to_string(raw.J) +
                                           " joints, model expects " + std::to_string(cfg.J));
  }
  auto [norm, rec] = normalize_bout(raw);
  SkeletonSequence padded = pad_frames(norm, cfg.F);
  if (padded.T > cfg.max_T) {
    throw Error(ErrorCode::PositionOutOfRange, "bout '" + raw.bout_id + "' has more frames than max_T");
  }
  return {std::move(padded), rec};
}

// ---------------------------------------------------------------------------
// Training loop

struct MetricsRecord {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

inline std::string metrics_line(const MetricsRecord& r) {
  return nlohmann::json{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}, {"wall_ms", r.wall_ms}}.dump();
}

struct TrainResult {
  std::string final_checkpoint;
  std::vector<MetricsRecord> metrics;  // steps run by this call
};

struct TrainOptions {
  int threads = 1;
  std::optional<std::string> resume;
  std::function<void(const MetricsRecord&)> on_step;
};

inline std::string checkpoint_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08ld.msae", step);
  return buf;
}

/// Runs steps [start, total_steps): batch -> mask plans -> forward/backward
/// -> clip -> Adam. Appends one JSON line per step to out_dir/metrics.jsonl
/// and checkpoints every `checkpoint_every` steps and at the end (also
/// copied to out_dir/final.msae).
inline TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  model_cfg.validate();
  const LossSupport support = loss_support_from_string(cfg.loss_on);
  if (cfg.data_path.empty()) throw Error(ErrorCode::InvalidConfig, "data_path is required");

  std::vector<SkeletonSequence> bouts;
  for (const auto& raw : read_bouts(cfg.data_path)) bouts.push_back(prepare_bout(raw, model_cfg).first);
  if (bouts.empty()) throw Error(ErrorCode::InvalidConfig, cfg.data_path + " contains no bouts");

  auto registry = std::make_shared<const ParamRegistry>(model_cfg);
  ParamBuffer<float> params(registry);
  OptimizerState<float> opt(params.size());
  long start = 0;
  if (opts.resume) {
    LoadedModel loaded = load_model(*opts.resume);
    if (!(loaded.model == model_cfg)) throw Error(ErrorCode::InvalidConfig, "resume checkpoint has a different model config");
    if (!loaded.optimizer) throw Error(ErrorCode::InvalidConfig, "resume checkpoint carries no optimizer state");
    params = std::move(loaded.params);
    opt = std::move(*loaded.optimizer);
    start = static_cast<long>(loaded.manifest.step);
  } else {
    params.initialize(cfg.seed);
  }

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const fs::path out_dir(cfg.out_dir);
  const std::string metrics_path = (out_dir / "metrics.jsonl").string();
  std::vector<std::string> kept;
  if (opts.resume && fs::exists(metrics_path)) {
    std::ifstream in(metrics_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<long>() < start) kept.push_back(line);
    }
  }
  auto log = detail::open_for_write(metrics_path, std::ios::out | std::ios::trunc);
  for (const auto& line : kept) log << line << '\n';
  log.flush();

  auto save = [&](long step) {
    const std::string path = (out_dir / checkpoint_name(step)).string();
    save_model(path, params, &opt, cfg, cfg.seed, step);
    return path;
  };

  TrainResult result;
  const int n = static_cast<int>(bouts.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long cached_epoch = -1;
  std::vector<std::vector<int>> epoch_batches;
  std::string last_saved;
  if (start == 0 && cfg.total_steps == 0) last_saved = save(0);

  for (long step = start; step < cfg.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const long epoch = step / steps_per_epoch;
    if (epoch != cached_epoch) {
      epoch_batches = make_batches(n, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
      cached_epoch = epoch;
    }
    const auto& idx = epoch_batches[static_cast<std::size_t>(step % steps_per_epoch)];
    try {
      std::vector<SkeletonSequence> batch;
      std::vector<MaskPlan> plans;
      for (int i : idx) {
        const auto& b = bouts[static_cast<std::size_t>(i)];
        batch.push_back(b);
        plans.push_back(plan_mask(b.T, b.J, model_cfg.F, cfg.r_t, cfg.r_s,
                                  mask_seed(cfg.seed, b.bout_id, static_cast<std::uint64_t>(epoch))));
      }
      auto fb = forward_backward<float>(batch, plans, params, support, opts.threads);
      if (!std::isfinite(fb.loss)) {
        check_finite(fb.grad);
        throw Error(ErrorCode::NonFiniteGradient, "loss is not finite");
      }
      const double lr = lr_at(step, cfg);
      clip_grad_norm(fb.grad, cfg.grad_clip);
      adam_step(params, fb.grad, opt, lr, cfg);

      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      MetricsRecord rec{step, fb.loss, lr, cfg.log_wall_time ? ms : 0.0};
      log << metrics_line(rec) << '\n';
      log.flush();
      result.metrics.push_back(rec);
      if (opts.on_step) opts.on_step(rec);
    } catch (const Error& e) {
      throw Error(e.code(), "step " + std::to_string(step) + ": " + e.what());
    }

    const long done = step + 1;
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) last_saved = save(done);
  }
  const long final_step = std::max<long>(start, cfg.total_steps);
  if (last_saved.empty() || last_saved != (out_dir / checkpoint_name(final_step)).string()) last_saved = save(final_step);
  const std::string final_path = (out_dir / "final.msae").string();
  fs::copy_file(last_saved, final_path, fs::copy_options::overwrite_existing);
  result.final_checkpoint = final_path;
  return result;
}

}  // namespace msae
