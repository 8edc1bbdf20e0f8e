#pragma once

// Command implementations behind the `msae` executable. Each returns a
// process exit code: 0 success, 2 usage/config error, 3 data error,
// 4 numeric failure.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msae/datagen.hpp"
#include "msae/io.hpp"
#include "msae/render.hpp"
#include "msae/train.hpp"

namespace msae::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::EmptyVisible:
    case ErrorCode::EmptyLossSupport:
      return kUsage;
    case ErrorCode::NonFiniteGradient:
      return kNumeric;
    default:
      return kData;
  }
}

/// Runs `body`, reporting library errors on `err` and mapping them to exit
/// codes.
inline int guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

inline void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::InvalidConfig, flag + " is required");
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::InvalidConfig, flag + " " + path + " does not exist");
}

inline void write_text(const std::string& path, const std::string& text) {
  auto out = detail::open_for_write(path, std::ios::out | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::Io, path);
}

// ---------------------------------------------------------------------------

struct GenOptions {
  int n = 8;
  SynthParams synth;
  double jitter = 0.2;
  std::string out;
};

inline int cmd_gen(const GenOptions& o, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
        if (o.n < 0) throw Error(ErrorCode::InvalidConfig, "--n must be >= 0");
        const auto bouts = generate_dataset(o.synth, o.n, o.synth.seed, o.jitter);
        write_bouts(o.out, bouts);
        return kOk;
      },
      err);
}

// ---------------------------------------------------------------------------

struct TrainOptionsCli {
  TrainConfig train;
  ModelConfig model;
  int threads = 1;
  std::optional<std::string> resume;
  bool quiet = false;
};

inline int cmd_train(const TrainOptionsCli& o, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require_file("--data_path", o.train.data_path);
        TrainOptions opts;
        opts.threads = o.threads;
        opts.resume = o.resume;
        if (!o.quiet) {
          opts.on_step = [&](const MetricsRecord& r) {
            if (r.step % 50 == 0) log << "step " << r.step << " loss " << r.loss << " lr " << r.lr << '\n';
          };
        }
        const TrainResult r = train(o.train, o.model, opts);
        log << "checkpoint: " << r.final_checkpoint << '\n';
        return kOk;
      },
      err);
}

// ---------------------------------------------------------------------------

struct ReconstructOptions {
  std::string ckpt;
  std::string data;
  std::optional<std::string> bout_id;
  double r_t = 0.25;
  double r_s = 1.0 / 3.0;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<std::string> dump_plan;
  std::optional<std::string> render;
  RenderSpec render_spec;
};

struct Reconstruction {
  SkeletonSequence restored;   // raw units, original length
  SkeletonSequence predicted;  // raw units, original length, every position predicted
  MaskPlan plan;               // over the padded length
  MaskGrid hidden;             // over the original length
};

/// Masks a raw bout, runs encoder + decoder and restores raw units: visible
/// positions keep the input exactly.
inline Reconstruction reconstruct_bout(const SkeletonSequence& raw, const ParamBuffer<float>& params, double r_t,
                                       double r_s, std::uint64_t seed) {
  const auto& cfg = params.registry().config();
  auto [prepared, rec] = prepare_bout(raw, cfg);
  MaskPlan plan = plan_mask(prepared.T, prepared.J, cfg.F, r_t, r_s, mask_seed(seed, raw.bout_id, 0));
  const SkeletonSequence pred_raw = denormalize(predict_grid(prepared, plan, params), rec);
  const SkeletonSequence restored = scatter_restore(pred_raw, pad_frames(raw, cfg.F), plan);

  auto truncate = [&](SkeletonSequence s) {
    s.coords.resize(raw.coords.size());
    s.T = raw.T;
    return s;
  };
  MaskGrid hidden = mask_indicator(plan);
  hidden.cells.resize(static_cast<std::size_t>(raw.T) * static_cast<std::size_t>(raw.J));
  hidden.T = raw.T;
  return {truncate(restored), truncate(pred_raw), std::move(plan), std::move(hidden)};
}

inline int cmd_reconstruct(const ReconstructOptions& o, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require_file("--ckpt", o.ckpt);
        require_file("--data", o.data);
        if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
        const LoadedModel model = load_model(o.ckpt);
        std::vector<SkeletonSequence> restored;
        nlohmann::json plans = nlohmann::json::array();
        std::optional<Reconstruction> first;
        for (const auto& raw : read_bouts(o.data)) {
          if (o.bout_id && raw.bout_id != *o.bout_id) continue;
          Reconstruction r = reconstruct_bout(raw, model.params, o.r_t, o.r_s, o.seed);
          restored.push_back(r.restored);
          nlohmann::json plan = to_json(r.plan);
          plan["bout_id"] = raw.bout_id;
          plans.push_back(std::move(plan));
          if (!first) first = std::move(r);
        }
        if (restored.empty()) {
          throw Error(ErrorCode::InvalidConfig, o.bout_id ? "bout '" + *o.bout_id + "' not found" : "no bouts in data");
        }
        write_bouts(o.out, restored);
        if (o.dump_plan) write_text(*o.dump_plan, (plans.size() == 1 ? plans[0] : plans).dump(2) + "\n");
        if (o.render) {
          write_text(*o.render, render_reconstruction_svg(first->restored, first->predicted, first->hidden, o.render_spec));
        }
        return kOk;
      },
      err);
}

// ---------------------------------------------------------------------------

struct EmbedOptions {
  std::string ckpt;
  std::string data;
  std::string out;
};

inline int cmd_embed(const EmbedOptions& o, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require_file("--ckpt", o.ckpt);
        require_file("--data", o.data);
        if (o.out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
        const LoadedModel model = load_model(o.ckpt);
        std::vector<std::string> ids;
        std::vector<std::vector<double>> rows;
        for (const auto& raw : read_bouts(o.data)) {
          ids.push_back(raw.bout_id);
          rows.push_back(embed_bout(prepare_bout(raw, model.model).first, model.params));
        }
        write_embeddings_csv(o.out, ids, rows, model.model.d_enc);
        return kOk;
      },
      err);
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string ckpt;
  std::string data;
  double r_t = 0.25;
  double r_s = 1.0 / 3.0;
  std::uint64_t seed = 0;
  int seeds = 1;
  std::optional<std::string> out;
};

/// Mean masked MSE (normalized units) per bout over `seeds` mask draws, and
/// the mean over bouts.
inline nlohmann::json evaluate(const ParamBuffer<float>& params, const std::vector<SkeletonSequence>& raw_bouts,
                               double r_t, double r_s, std::uint64_t seed, int seeds) {
  if (raw_bouts.empty()) throw Error(ErrorCode::InvalidConfig, "evaluation set is empty");
  if (seeds < 1) throw Error(ErrorCode::InvalidConfig, "--seeds must be >= 1");
  const auto& cfg = params.registry().config();
  nlohmann::json per_bout = nlohmann::json::array();
  double total = 0.0;
  for (const auto& raw : raw_bouts) {
    const SkeletonSequence seq = prepare_bout(raw, cfg).first;
    double sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const MaskPlan plan =
          plan_mask(seq.T, seq.J, cfg.F, r_t, r_s, mask_seed(seed, seq.bout_id, static_cast<std::uint64_t>(s)));
      sum += static_cast<double>(bout_loss<float>(seq, plan, params, LossSupport::Masked, nullptr));
    }
    const double mse = sum / seeds;
    total += mse;
    per_bout.push_back({{"bout_id", seq.bout_id}, {"masked_mse", mse}});
  }
  return {{"mean_masked_mse", total / static_cast<double>(raw_bouts.size())}, {"per_bout", std::move(per_bout)}};
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require_file("--ckpt", o.ckpt);
        require_file("--data", o.data);
        const LoadedModel model = load_model(o.ckpt);
        const nlohmann::json report = evaluate(model.params, read_bouts(o.data), o.r_t, o.r_s, o.seed, o.seeds);
        if (o.out) {
          write_text(*o.out, report.dump(2) + "\n");
        } else {
          out << report.dump(2) << '\n';
        }
        return kOk;
      },
      err);
}

}  // namespace msae::cli
