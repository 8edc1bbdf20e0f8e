// msae: generate synthetic bouts, train, reconstruct, embed and evaluate.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "msae/cli/commands.hpp"

namespace {

using msae::cli::ExitCode;

struct TrainFlags {
  std::optional<std::string> config_path;
  std::string preset = "default";
  std::optional<double> lr, eps, weight_decay, grad_clip, r_t, r_s;
  std::vector<double> betas;
  std::optional<int> warmup_steps, total_steps, batch_size, checkpoint_every;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss_on, data_path, out_dir;
  std::optional<bool> log_wall_time;
  std::optional<int> J, F, d_enc, d_dec, n_enc, n_dec, heads, mlp_ratio, max_T, iffa_kernel;
};

template <typename T>
void apply(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, msae::cli::TrainOptionsCli& o) {
  cmd->add_option("--config", f.config_path, "JSON file with TrainConfig and ModelConfig fields");
  cmd->add_option("--preset", f.preset, "model preset: default | tiny")->check(CLI::IsMember({"default", "tiny"}));
  cmd->add_option("--resume", o.resume, "continue from a checkpoint (restores optimizer state and step)");
  cmd->add_option("--threads", o.threads, "worker threads for batch forward/backward")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", o.quiet, "suppress progress lines");

  cmd->add_option("--lr", f.lr);
  cmd->add_option("--betas", f.betas)->expected(2);
  cmd->add_option("--eps", f.eps);
  cmd->add_option("--weight_decay", f.weight_decay);
  cmd->add_option("--warmup_steps", f.warmup_steps);
  cmd->add_option("--total_steps", f.total_steps);
  cmd->add_option("--batch_size", f.batch_size);
  cmd->add_option("--grad_clip", f.grad_clip);
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--r_t", f.r_t);
  cmd->add_option("--r_s", f.r_s);
  cmd->add_option("--loss_on", f.loss_on)->check(CLI::IsMember({"masked", "all"}));
  cmd->add_option("--checkpoint_every", f.checkpoint_every);
  cmd->add_option("--data_path", f.data_path);
  cmd->add_option("--out_dir", f.out_dir);
  cmd->add_option("--log_wall_time", f.log_wall_time);

  cmd->add_option("--J", f.J);
  cmd->add_option("--F", f.F);
  cmd->add_option("--d_enc", f.d_enc);
  cmd->add_option("--d_dec", f.d_dec);
  cmd->add_option("--n_enc", f.n_enc);
  cmd->add_option("--n_dec", f.n_dec);
  cmd->add_option("--heads", f.heads);
  cmd->add_option("--mlp_ratio", f.mlp_ratio);
  cmd->add_option("--max_T", f.max_T);
  cmd->add_option("--iffa_kernel", f.iffa_kernel);
}

/// Precedence: preset (or the resumed checkpoint) < --config file < flags.
void resolve_train(const TrainFlags& f, msae::cli::TrainOptionsCli& o) {
  o.model = f.preset == "tiny" ? msae::ModelConfig::tiny() : msae::ModelConfig{};
  if (o.resume) {
    const msae::LoadedModel ck = msae::load_model(*o.resume);
    o.model = ck.model;
    if (ck.train) o.train = *ck.train;
  }
  if (f.config_path) {
    std::ifstream in(*f.config_path);
    if (!in) throw msae::Error(msae::ErrorCode::InvalidConfig, "cannot open config " + *f.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw msae::Error(msae::ErrorCode::InvalidConfig, *f.config_path + ": " + e.what());
    }
    const auto& train_j = j.contains("train") ? j["train"] : j;
    const auto& model_j = j.contains("model") ? j["model"] : j;
    msae::from_json(train_j, o.train);
    msae::from_json(model_j, o.model);
  }
  auto& t = o.train;
  apply(f.lr, t.lr);
  if (f.betas.size() == 2) {
    t.b1 = f.betas[0];
    t.b2 = f.betas[1];
  }
  apply(f.eps, t.eps);
  apply(f.weight_decay, t.weight_decay);
  apply(f.warmup_steps, t.warmup_steps);
  apply(f.total_steps, t.total_steps);
  apply(f.batch_size, t.batch_size);
  apply(f.grad_clip, t.grad_clip);
  apply(f.seed, t.seed);
  apply(f.r_t, t.r_t);
  apply(f.r_s, t.r_s);
  apply(f.loss_on, t.loss_on);
  apply(f.checkpoint_every, t.checkpoint_every);
  apply(f.data_path, t.data_path);
  apply(f.out_dir, t.out_dir);
  apply(f.log_wall_time, t.log_wall_time);
  auto& m = o.model;
  apply(f.J, m.J);
  apply(f.F, m.F);
  apply(f.d_enc, m.d_enc);
  apply(f.d_dec, m.d_dec);
  apply(f.n_enc, m.n_enc);
  apply(f.n_dec, m.n_dec);
  apply(f.heads, m.heads);
  apply(f.mlp_ratio, m.mlp_ratio);
  apply(f.max_T, m.max_T);
  apply(f.iffa_kernel, m.iffa_kernel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked skeleton-sequence autoencoder toolkit"};
  app.require_subcommand(1);

  msae::cli::GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "write synthetic larval bouts as JSON lines");
  gen_cmd->add_option("--n", gen.n, "number of bouts");
  gen_cmd->add_option("--T", gen.synth.T, "frames per bout");
  gen_cmd->add_option("--J", gen.synth.J, "joints per frame");
  gen_cmd->add_option("--fps", gen.synth.fps);
  gen_cmd->add_option("--seed", gen.synth.seed);
  gen_cmd->add_option("--tail_freq", gen.synth.tail_freq);
  gen_cmd->add_option("--amp", gen.synth.amp);
  gen_cmd->add_option("--wave_number", gen.synth.wave_number);
  gen_cmd->add_option("--heading_drift", gen.synth.heading_drift);
  gen_cmd->add_option("--noise_sigma", gen.synth.noise_sigma);
  gen_cmd->add_option("--jitter", gen.jitter, "per-bout relative jitter of frequency/amplitude/drift");
  gen_cmd->add_option("--out", gen.out)->required();

  msae::cli::TrainOptionsCli train;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "pre-train the masked autoencoder");
  add_train_flags(train_cmd, train_flags, train);

  msae::cli::ReconstructOptions rec;
  auto* rec_cmd = app.add_subcommand("reconstruct", "mask bouts and fill them in with a trained model");
  rec_cmd->add_option("--ckpt", rec.ckpt)->required();
  rec_cmd->add_option("--data", rec.data)->required();
  rec_cmd->add_option("--bout-id", rec.bout_id);
  rec_cmd->add_option("--r_t", rec.r_t);
  rec_cmd->add_option("--r_s", rec.r_s);
  rec_cmd->add_option("--seed", rec.seed);
  rec_cmd->add_option("--out", rec.out)->required();
  rec_cmd->add_option("--dump-plan", rec.dump_plan, "write the mask plan as JSON");
  rec_cmd->add_option("--render", rec.render, "write an SVG of the first reconstructed bout");
  rec_cmd->add_option("--frames-per-row", rec.render_spec.frames_per_row);

  msae::cli::EmbedOptions emb;
  auto* emb_cmd = app.add_subcommand("embed", "export mean-pooled encoder embeddings as CSV");
  emb_cmd->add_option("--ckpt", emb.ckpt)->required();
  emb_cmd->add_option("--data", emb.data)->required();
  emb_cmd->add_option("--out", emb.out)->required();

  msae::cli::EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "masked reconstruction error report");
  eval_cmd->add_option("--ckpt", ev.ckpt)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--r_t", ev.r_t);
  eval_cmd->add_option("--r_s", ev.r_s);
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--seeds", ev.seeds, "mask draws per bout");
  eval_cmd->add_option("--out", ev.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ExitCode::kUsage;
  }

  if (*gen_cmd) return msae::cli::cmd_gen(gen);
  if (*train_cmd) {
    const int rc = msae::cli::guarded([&] {
      resolve_train(train_flags, train);
      return 0;
    });
    if (rc != 0) return rc;
    return msae::cli::cmd_train(train);
  }
  if (*rec_cmd) return msae::cli::cmd_reconstruct(rec);
  if (*emb_cmd) return msae::cli::cmd_embed(emb);
  if (*eval_cmd) return msae::cli::cmd_eval(ev);
  return ExitCode::kUsage;
}
