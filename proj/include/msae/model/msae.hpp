#pragma once

#include <exception>
#include <span>
#include <thread>
#include <vector>

#include "msae/masking.hpp"
#include "msae/model/layers.hpp"
#include "msae/model/params.hpp"
#include "msae/skeleton.hpp"

namespace msae {

enum class LossSupport { Masked, All };

inline const char* to_string(LossSupport s) { return s == LossSupport::Masked ? "masked" : "all"; }

inline LossSupport loss_support_from_string(const std::string& s) {
  if (s == "masked") return LossSupport::Masked;
  if (s == "all") return LossSupport::All;
  throw Error(ErrorCode::InvalidConfig, "loss_on must be 'masked' or 'all', got '" + s + "'");
}

template <typename Scalar>
Mat<Scalar> coords_matrix(const std::vector<double>& flat) {
  Mat<Scalar> m(static_cast<Eigen::Index>(flat.size() / 2), 2);
  for (std::size_t i = 0; i < flat.size(); ++i) m.data()[i] = static_cast<Scalar>(flat[i]);
  return m;
}

// ---------------------------------------------------------------------------
// Tokenization

/// token = W_proj * coord + frame_pos[frame] + joint_pos[joint], with slice
/// ids assigned from a slice map over the distinct frames present.
template <typename Scalar>
TokenSet<Scalar> stse_encode(const Mat<Scalar>& coords, const std::vector<Position>& positions,
                             const ParamBuffer<Scalar>& p) {
  const auto& cfg = p.registry().config();
  const auto& E = p.registry().enc_embedding();
  if (positions.empty()) throw Error(ErrorCode::EmptyVisible, "no visible tokens to encode");
  if (coords.rows() != static_cast<Eigen::Index>(positions.size()) || coords.cols() != 2) {
    throw Error(ErrorCode::ShapeError, "coordinate matrix must be N x 2 aligned with positions");
  }
  std::vector<int> frames;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& pos = positions[i];
    if (pos.frame < 0 || pos.frame >= cfg.max_T || pos.joint < 0 || pos.joint >= cfg.J) {
      throw Error(ErrorCode::PositionOutOfRange, "position (" + std::to_string(pos.frame) + ", " +
                                                     std::to_string(pos.joint) + ") outside [0," +
                                                     std::to_string(cfg.max_T) + ")x[0," + std::to_string(cfg.J) + ")");
    }
    if (i > 0) {
      const auto& prev = positions[i - 1];
      if (pos.frame < prev.frame || (pos.frame == prev.frame && pos.joint <= prev.joint)) {
        throw Error(ErrorCode::ShapeError, "positions must be strictly ascending in (frame, joint)");
      }
    }
    if (frames.empty() || frames.back() != pos.frame) frames.push_back(pos.frame);
  }
  const SliceMap map = build_slice_map(frames, cfg.F);

  TokenSet<Scalar> out;
  out.positions = positions;
  out.tokens = coords * p.mat(E.coord_proj).transpose();
  const auto frame_pos = p.mat(E.frame_pos);
  const auto joint_pos = p.mat(E.joint_pos);
  out.slice_of_token.resize(positions.size());
  std::size_t frame_slot = 0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i].frame != frames[frame_slot]) ++frame_slot;
    out.slice_of_token[i] = map.slice_of_frame[frame_slot];
    const auto r = static_cast<Eigen::Index>(i);
    out.tokens.row(r) += frame_pos.row(positions[i].frame) + joint_pos.row(positions[i].joint);
  }
  out.groups = groups_from_slices(out.slice_of_token);
  return out;
}

// ---------------------------------------------------------------------------
// Encoder

template <typename Scalar>
struct EncoderCache {
  Mat<Scalar> coords;
  std::vector<Position> positions;
  std::vector<BlockCache<Scalar>> blocks;
};

template <typename Scalar>
TokenSet<Scalar> encoder_forward(const Mat<Scalar>& coords, const std::vector<Position>& positions,
                                 const ParamBuffer<Scalar>& p, EncoderCache<Scalar>* cache = nullptr) {
  const auto& reg = p.registry();
  TokenSet<Scalar> ts = stse_encode(coords, positions, p);
  if (cache) {
    cache->coords = coords;
    cache->positions = positions;
    cache->blocks.resize(reg.enc_blocks().size());
  }
  for (std::size_t i = 0; i < reg.enc_blocks().size(); ++i) {
    ts.tokens = block_forward(ts.tokens, ts.groups, p, reg.enc_blocks()[i], reg.config().heads,
                              cache ? &cache->blocks[i] : nullptr);
  }
  return ts;
}

template <typename Scalar>
TokenSet<Scalar> encoder_forward(const VisibleSet& visible, const ParamBuffer<Scalar>& p,
                                 EncoderCache<Scalar>* cache = nullptr) {
  return encoder_forward(coords_matrix<Scalar>(visible.coords), visible.positions, p, cache);
}

template <typename Scalar>
void encoder_backward(const Mat<Scalar>& dlatent, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                      const EncoderCache<Scalar>& c, ParamBuffer<Scalar>& grad) {
  const auto& reg = p.registry();
  Mat<Scalar> d = dlatent;
  for (std::size_t i = reg.enc_blocks().size(); i-- > 0;) {
    d = block_backward(d, groups, p, reg.enc_blocks()[i], reg.config().heads, c.blocks[i], grad);
  }
  const auto& E = reg.enc_embedding();
  grad.mat(E.coord_proj).noalias() += d.transpose() * c.coords;
  auto dframe = grad.mat(E.frame_pos);
  auto djoint = grad.mat(E.joint_pos);
  for (std::size_t i = 0; i < c.positions.size(); ++i) {
    dframe.row(c.positions[i].frame) += d.row(static_cast<Eigen::Index>(i));
    djoint.row(c.positions[i].joint) += d.row(static_cast<Eigen::Index>(i));
  }
}

// ---------------------------------------------------------------------------
// Decoder

template <typename Scalar>
struct DecoderCache {
  Mat<Scalar> latent;
  std::vector<int> source;  // per grid row: latent row, or -1 for mask token
  std::vector<Group> groups;
  std::vector<BlockCache<Scalar>> blocks;
  Mat<Scalar> final_tokens;
  int T = 0;
};

/// Full [T*J][2] coordinate prediction, rows in (frame, joint) order.
template <typename Scalar>
Mat<Scalar> decoder_forward(const TokenSet<Scalar>& latent, const MaskPlan& plan, const ParamBuffer<Scalar>& p,
                            DecoderCache<Scalar>* cache = nullptr) {
  const auto& reg = p.registry();
  const auto& cfg = reg.config();
  if (plan.J != cfg.J) throw Error(ErrorCode::PlanMismatch, "plan joint count differs from the model's J");
  if (plan.T > cfg.max_T) throw Error(ErrorCode::PositionOutOfRange, "plan T exceeds max_T");
  if (plan.T % cfg.F != 0) {
    throw Error(ErrorCode::SliceMisaligned, "decoder needs T divisible by F (T=" + std::to_string(plan.T) + ")");
  }
  const int T = plan.T;
  const int J = cfg.J;
  const MaskGrid hidden = mask_indicator(plan);

  std::vector<int> source(static_cast<std::size_t>(T) * static_cast<std::size_t>(J), -1);
  for (std::size_t i = 0; i < latent.positions.size(); ++i) {
    const auto& pos = latent.positions[i];
    if (pos.frame < 0 || pos.frame >= T || pos.joint < 0 || pos.joint >= J || hidden(pos.frame, pos.joint)) {
      throw Error(ErrorCode::PlanMismatch, "latent token at (" + std::to_string(pos.frame) + ", " +
                                               std::to_string(pos.joint) + ") is not visible under the plan");
    }
    source[static_cast<std::size_t>(pos.frame * J + pos.joint)] = static_cast<int>(i);
  }

  const Mat<Scalar> projected =
      (latent.tokens * p.mat(reg.dec_proj_weight()).transpose()).rowwise() + p.vec(reg.dec_proj_bias());
  const auto& E = reg.dec_embedding();
  const auto frame_pos = p.mat(E.frame_pos);
  const auto joint_pos = p.mat(E.joint_pos);
  const auto mask_token = p.vec(reg.mask_token());
  Mat<Scalar> x(static_cast<Eigen::Index>(T) * J, cfg.d_dec);
  for (int f = 0; f < T; ++f) {
    for (int j = 0; j < J; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(f) * J + j;
      const int src = source[static_cast<std::size_t>(r)];
      if (src >= 0) {
        x.row(r) = projected.row(src);
      } else {
        x.row(r) = mask_token;
      }
      x.row(r) += frame_pos.row(f) + joint_pos.row(j);
    }
  }
  std::vector<Group> groups;
  for (int s = 0; s < T / cfg.F; ++s) groups.push_back({s * cfg.F * J, cfg.F * J});

  if (cache) cache->blocks.resize(reg.dec_blocks().size());
  for (std::size_t i = 0; i < reg.dec_blocks().size(); ++i) {
    x = block_forward(x, groups, p, reg.dec_blocks()[i], cfg.heads, cache ? &cache->blocks[i] : nullptr);
  }
  Mat<Scalar> out = (x * p.mat(reg.head_weight()).transpose()).rowwise() + p.vec(reg.head_bias());
  if (cache) {
    cache->latent = latent.tokens;
    cache->source = std::move(source);
    cache->groups = std::move(groups);
    cache->final_tokens = std::move(x);
    cache->T = T;
  }
  return out;
}

/// Returns the gradient with respect to the latent tokens.
template <typename Scalar>
Mat<Scalar> decoder_backward(const Mat<Scalar>& dout, const ParamBuffer<Scalar>& p, const DecoderCache<Scalar>& c,
                             ParamBuffer<Scalar>& grad) {
  const auto& reg = p.registry();
  const auto& cfg = reg.config();
  grad.mat(reg.head_weight()).noalias() += dout.transpose() * c.final_tokens;
  grad.vec(reg.head_bias()) += dout.colwise().sum();
  Mat<Scalar> d = dout * p.mat(reg.head_weight());
  for (std::size_t i = reg.dec_blocks().size(); i-- > 0;) {
    d = block_backward(d, c.groups, p, reg.dec_blocks()[i], cfg.heads, c.blocks[i], grad);
  }
  const auto& E = reg.dec_embedding();
  auto dframe = grad.mat(E.frame_pos);
  auto djoint = grad.mat(E.joint_pos);
  auto dmask = grad.vec(reg.mask_token());
  Mat<Scalar> dprojected = Mat<Scalar>::Zero(c.latent.rows(), cfg.d_dec);
  const int J = cfg.J;
  for (int f = 0; f < c.T; ++f) {
    for (int j = 0; j < J; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(f) * J + j;
      dframe.row(f) += d.row(r);
      djoint.row(j) += d.row(r);
      const int src = c.source[static_cast<std::size_t>(r)];
      if (src >= 0) {
        dprojected.row(src) += d.row(r);
      } else {
        dmask += d.row(r);
      }
    }
  }
  grad.mat(reg.dec_proj_weight()).noalias() += dprojected.transpose() * c.latent;
  grad.vec(reg.dec_proj_bias()) += dprojected.colwise().sum();
  return dprojected * p.mat(reg.dec_proj_weight());
}

// ---------------------------------------------------------------------------
// Loss

/// Mean squared coordinate error over masked positions (or the full grid).
/// `dpred`, when given, receives dLoss/dpred.
template <typename Scalar>
Scalar masked_mse(const Mat<Scalar>& pred, const Mat<Scalar>& target, const MaskGrid& indicator,
                  LossSupport support = LossSupport::Masked, Mat<Scalar>* dpred = nullptr) {
  const auto cells = static_cast<Eigen::Index>(indicator.T) * indicator.J;
  if (pred.rows() != target.rows() || pred.cols() != 2 || target.cols() != 2 || pred.rows() != cells) {
    throw Error(ErrorCode::ShapeError, "prediction, target and indicator grids differ in shape");
  }
  std::size_t count = 0;
  Scalar sum = 0;
  if (dpred) *dpred = Mat<Scalar>::Zero(pred.rows(), 2);
  for (Eigen::Index r = 0; r < cells; ++r) {
    if (support == LossSupport::Masked && !indicator.cells[static_cast<std::size_t>(r)]) continue;
    ++count;
    for (int c = 0; c < 2; ++c) {
      const Scalar e = pred(r, c) - target(r, c);
      sum += e * e;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyLossSupport, "no masked positions to score");
  const Scalar denom = static_cast<Scalar>(2 * count);
  if (dpred) {
    for (Eigen::Index r = 0; r < cells; ++r) {
      if (support == LossSupport::Masked && !indicator.cells[static_cast<std::size_t>(r)]) continue;
      dpred->row(r) = (pred.row(r) - target.row(r)) * (Scalar(2) / denom);
    }
  }
  return sum / denom;
}

// ---------------------------------------------------------------------------
// Training objective

/// Loss of one model-ready bout under one plan; accumulates into `grad`
/// when given.
template <typename Scalar>
Scalar bout_loss(const SkeletonSequence& seq, const MaskPlan& plan, const ParamBuffer<Scalar>& p,
                 LossSupport support, ParamBuffer<Scalar>* grad) {
  const VisibleSet visible = gather_visible(seq, plan);
  if (visible.size() == 0) throw Error(ErrorCode::EmptyVisible, "bout '" + seq.bout_id + "' has no visible tokens");
  EncoderCache<Scalar> enc_cache;
  DecoderCache<Scalar> dec_cache;
  const TokenSet<Scalar> latent = encoder_forward(visible, p, grad ? &enc_cache : nullptr);
  const Mat<Scalar> pred = decoder_forward(latent, plan, p, grad ? &dec_cache : nullptr);
  const Mat<Scalar> target = coords_matrix<Scalar>(seq.coords);
  Mat<Scalar> dpred;
  const Scalar loss = masked_mse(pred, target, mask_indicator(plan), support, grad ? &dpred : nullptr);
  if (grad) {
    const Mat<Scalar> dlatent = decoder_backward(dpred, p, dec_cache, *grad);
    encoder_backward(dlatent, latent.groups, p, enc_cache, *grad);
  }
  return loss;
}

template <typename Scalar>
struct BatchResult {
  double loss = 0.0;
  std::vector<double> per_bout;
  ParamBuffer<Scalar> grad;
};

/// Mean per-bout loss and its exact gradient. Bouts may run on `threads`
/// workers; per-bout gradients are summed in batch order so the result does
/// not depend on scheduling.
template <typename Scalar>
BatchResult<Scalar> forward_backward(std::span<const SkeletonSequence> bouts, std::span<const MaskPlan> plans,
                                     const ParamBuffer<Scalar>& p, LossSupport support = LossSupport::Masked,
                                     int threads = 1) {
  if (bouts.empty()) throw Error(ErrorCode::InvalidConfig, "empty batch");
  if (bouts.size() != plans.size()) throw Error(ErrorCode::PlanMismatch, "one plan per bout is required");
  const std::size_t n = bouts.size();
  std::vector<ParamBuffer<Scalar>> grads(n, ParamBuffer<Scalar>(p.registry_ptr()));
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      losses[i] = static_cast<double>(bout_loss(bouts[i], plans[i], p, support, &grads[i]));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BatchResult<Scalar> result{0.0, losses, ParamBuffer<Scalar>(p.registry_ptr())};
  auto total = result.grad.flat();
  for (std::size_t i = 0; i < n; ++i) {
    result.loss += losses[i];
    const auto g = grads[i].flat();
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += g[k];
  }
  result.loss /= static_cast<double>(n);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(n);
  for (auto& v : total) v *= inv;
  return result;
}

// ---------------------------------------------------------------------------
// Inference

/// Mean-pooled encoder output over the unmasked bout. `seq` must already be
/// normalized; frames are padded to a multiple of F by repeating the last.
template <typename Scalar>
std::vector<double> embed_bout(const SkeletonSequence& seq, const ParamBuffer<Scalar>& p) {
  const auto& cfg = p.registry().config();
  const SkeletonSequence padded = pad_frames(seq, cfg.F);
  const MaskPlan plan = plan_mask(padded.T, padded.J, cfg.F, 0.0, 0.0, 0);
  const TokenSet<Scalar> latent = encoder_forward(gather_visible(padded, plan), p);
  const RowVec<Scalar> mean = latent.tokens.colwise().mean();
  return std::vector<double>(mean.data(), mean.data() + mean.size());
}

/// Decoder prediction for every (frame, joint) of a model-ready bout.
template <typename Scalar>
SkeletonSequence predict_grid(const SkeletonSequence& seq, const MaskPlan& plan, const ParamBuffer<Scalar>& p) {
  const TokenSet<Scalar> latent = encoder_forward(gather_visible(seq, plan), p);
  const Mat<Scalar> pred = decoder_forward(latent, plan, p);
  SkeletonSequence out = seq;
  for (std::size_t i = 0; i < out.coords.size(); ++i) out.coords[i] = static_cast<double>(pred.data()[i]);
  return out;
}

}  // namespace msae
