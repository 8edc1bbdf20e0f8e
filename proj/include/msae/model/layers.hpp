#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "msae/masking.hpp"
#include "msae/model/params.hpp"

namespace msae {

/// Contiguous run of tokens sharing one time slice.
struct Group {
  int start = 0;
  int count = 0;
};

/// Ragged token set: one row per visible (frame, joint), rows sorted by
/// (frame, joint) so every slice occupies a contiguous row range.
template <typename Scalar>
struct TokenSet {
  Mat<Scalar> tokens;
  std::vector<Position> positions;
  std::vector<int> slice_of_token;
  std::vector<Group> groups;

  int size() const { return static_cast<int>(tokens.rows()); }
  int num_slices() const { return static_cast<int>(groups.size()); }
};

/// Derives contiguous group ranges from per-token slice ids (0, 0, 1, 1, ...).
inline std::vector<Group> groups_from_slices(const std::vector<int>& slice_of_token) {
  std::vector<Group> groups;
  for (std::size_t i = 0; i < slice_of_token.size(); ++i) {
    const int s = slice_of_token[i];
    if (s == static_cast<int>(groups.size())) {
      groups.push_back({static_cast<int>(i), 0});
    } else if (s != static_cast<int>(groups.size()) - 1) {
      throw Error(ErrorCode::ShapeError, "token slice ids must be contiguous and ascending from 0");
    }
    ++groups.back().count;
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Layer norm over the channel axis.

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> xhat;
  std::vector<Scalar> rstd;
};

template <typename Scalar>
Mat<Scalar> layer_norm_forward(const Mat<Scalar>& x, const ParamBuffer<Scalar>& p, int scale_id, int offset_id,
                               LayerNormCache<Scalar>* cache) {
  const auto n = x.rows();
  const auto d = static_cast<Scalar>(x.cols());
  Mat<Scalar> xhat(x.rows(), x.cols());
  std::vector<Scalar> rstd(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mu = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mu).matrix();
    const Scalar var = centered.squaredNorm() / d;
    const Scalar r = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(i) = centered * r;
    rstd[static_cast<std::size_t>(i)] = r;
  }
  Mat<Scalar> y = (xhat.array().rowwise() * p.vec(scale_id).array()).rowwise() + p.vec(offset_id).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const ParamBuffer<Scalar>& p, int scale_id, int offset_id,
                                const LayerNormCache<Scalar>& cache, ParamBuffer<Scalar>& grad) {
  grad.vec(scale_id) += dy.cwiseProduct(cache.xhat).colwise().sum();
  grad.vec(offset_id) += dy.colwise().sum();
  const Mat<Scalar> dxhat = dy.array().rowwise() * p.vec(scale_id).array();
  const auto d = static_cast<Scalar>(dy.cols());
  Mat<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar mean_g = dxhat.row(i).sum() / d;
    const Scalar mean_gx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
    dx.row(i) = cache.rstd[static_cast<std::size_t>(i)] *
                (dxhat.row(i).array() - mean_g - cache.xhat.row(i).array() * mean_gx).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Slice-grouped multi-head self-attention. Tokens only attend within their
// own group.

template <typename Scalar>
struct StgaCache {
  Mat<Scalar> x, q, k, v, attn;
  std::vector<Mat<Scalar>> probs;  // [group * heads + head]
};

template <typename Scalar>
Mat<Scalar> stga_forward(const Mat<Scalar>& x, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                         const BlockLayout& L, int heads, StgaCache<Scalar>* cache) {
  const int d = L.d;
  const int dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Mat<Scalar> q = x * p.mat(L.wq).transpose();
  Mat<Scalar> k = x * p.mat(L.wk).transpose();
  Mat<Scalar> v = x * p.mat(L.wv).transpose();
  Mat<Scalar> attn(x.rows(), d);
  std::vector<Mat<Scalar>> probs;
  if (cache) probs.reserve(groups.size() * static_cast<std::size_t>(heads));
  for (const auto& g : groups) {
    for (int h = 0; h < heads; ++h) {
      Mat<Scalar> s = q.block(g.start, h * dh, g.count, dh) * k.block(g.start, h * dh, g.count, dh).transpose() * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const Scalar mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      attn.block(g.start, h * dh, g.count, dh).noalias() = s * v.block(g.start, h * dh, g.count, dh);
      if (cache) probs.push_back(std::move(s));
    }
  }
  Mat<Scalar> out = (attn * p.mat(L.wo).transpose()).rowwise() + p.vec(L.bo);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->probs = std::move(probs);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> stga_backward(const Mat<Scalar>& dout, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                          const BlockLayout& L, int heads, const StgaCache<Scalar>& c, ParamBuffer<Scalar>& grad) {
  const int d = L.d;
  const int dh = d / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  grad.mat(L.wo).noalias() += dout.transpose() * c.attn;
  grad.vec(L.bo) += dout.colwise().sum();
  const Mat<Scalar> dattn = dout * p.mat(L.wo);

  Mat<Scalar> dq(dout.rows(), d), dk(dout.rows(), d), dv(dout.rows(), d);
  std::size_t idx = 0;
  for (const auto& g : groups) {
    for (int h = 0; h < heads; ++h, ++idx) {
      const Mat<Scalar>& P = c.probs[idx];
      const auto da = dattn.block(g.start, h * dh, g.count, dh);
      const Mat<Scalar> dP = da * c.v.block(g.start, h * dh, g.count, dh).transpose();
      dv.block(g.start, h * dh, g.count, dh).noalias() = P.transpose() * da;
      Mat<Scalar> ds = P.cwiseProduct(dP);
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = ds.rowwise().sum();
      ds = P.cwiseProduct((dP.colwise() - row_dot).eval()) * scale;
      dq.block(g.start, h * dh, g.count, dh).noalias() = ds * c.k.block(g.start, h * dh, g.count, dh);
      dk.block(g.start, h * dh, g.count, dh).noalias() = ds.transpose() * c.q.block(g.start, h * dh, g.count, dh);
    }
  }
  grad.mat(L.wq).noalias() += dq.transpose() * c.x;
  grad.mat(L.wk).noalias() += dk.transpose() * c.x;
  grad.mat(L.wv).noalias() += dv.transpose() * c.x;
  Mat<Scalar> dx = dq * p.mat(L.wq);
  dx.noalias() += dk * p.mat(L.wk);
  dx.noalias() += dv * p.mat(L.wv);
  return dx;
}

// ---------------------------------------------------------------------------
// Inter-slice aggregation: slice means -> depthwise conv along the slice
// axis (zero padding, stride 1) -> pointwise mix. The returned branch is
// broadcast to every token of its slice; the residual add is the caller's.

template <typename Scalar>
struct IffaCache {
  Mat<Scalar> summary, conv;
};

template <typename Scalar>
Mat<Scalar> slice_means(const Mat<Scalar>& x, const std::vector<Group>& groups) {
  Mat<Scalar> s(static_cast<Eigen::Index>(groups.size()), x.cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    s.row(static_cast<Eigen::Index>(i)) =
        x.middleRows(groups[i].start, groups[i].count).colwise().sum() / static_cast<Scalar>(groups[i].count);
  }
  return s;
}

template <typename Scalar>
Mat<Scalar> iffa_branch_forward(const Mat<Scalar>& x, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                                const BlockLayout& L, IffaCache<Scalar>* cache) {
  const auto kernel = p.mat(L.iffa_depthwise);
  const auto K = static_cast<int>(kernel.cols());
  const int half = K / 2;
  const auto S = static_cast<int>(groups.size());
  Mat<Scalar> summary = slice_means(x, groups);
  Mat<Scalar> conv = Mat<Scalar>::Zero(S, x.cols());
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < K; ++t) {
      const int src = s + t - half;
      if (src < 0 || src >= S) continue;
      conv.row(s).array() += kernel.col(t).transpose().array() * summary.row(src).array();
    }
  }
  const Mat<Scalar> mixed = conv * p.mat(L.iffa_pointwise).transpose();
  Mat<Scalar> out(x.rows(), x.cols());
  for (int s = 0; s < S; ++s) {
    out.middleRows(groups[static_cast<std::size_t>(s)].start, groups[static_cast<std::size_t>(s)].count).rowwise() =
        mixed.row(s);
  }
  if (cache) {
    cache->summary = std::move(summary);
    cache->conv = std::move(conv);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> iffa_branch_backward(const Mat<Scalar>& dout, const std::vector<Group>& groups,
                                 const ParamBuffer<Scalar>& p, const BlockLayout& L, const IffaCache<Scalar>& c,
                                 ParamBuffer<Scalar>& grad) {
  const auto kernel = p.mat(L.iffa_depthwise);
  const auto K = static_cast<int>(kernel.cols());
  const int half = K / 2;
  const auto S = static_cast<int>(groups.size());
  Mat<Scalar> dmixed(S, dout.cols());
  for (int s = 0; s < S; ++s) {
    const auto& g = groups[static_cast<std::size_t>(s)];
    dmixed.row(s) = dout.middleRows(g.start, g.count).colwise().sum();
  }
  grad.mat(L.iffa_pointwise).noalias() += dmixed.transpose() * c.conv;
  const Mat<Scalar> dconv = dmixed * p.mat(L.iffa_pointwise);
  auto dkernel = grad.mat(L.iffa_depthwise);
  Mat<Scalar> dsummary = Mat<Scalar>::Zero(S, dout.cols());
  for (int s = 0; s < S; ++s) {
    for (int t = 0; t < K; ++t) {
      const int src = s + t - half;
      if (src < 0 || src >= S) continue;
      dkernel.col(t).array() += (dconv.row(s).array() * c.summary.row(src).array()).transpose();
      dsummary.row(src).array() += dconv.row(s).array() * kernel.col(t).transpose().array();
    }
  }
  Mat<Scalar> dx(dout.rows(), dout.cols());
  for (int s = 0; s < S; ++s) {
    const auto& g = groups[static_cast<std::size_t>(s)];
    dx.middleRows(g.start, g.count).rowwise() = dsummary.row(s) / static_cast<Scalar>(g.count);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel gate: g = sigmoid(W2 relu(W1 mean(x))), applied to every token.

template <typename Scalar>
struct GateCache {
  Mat<Scalar> x;
  RowVec<Scalar> mean, hidden, gate;
};

template <typename Scalar>
Mat<Scalar> gate_forward(const Mat<Scalar>& x, const ParamBuffer<Scalar>& p, const BlockLayout& L,
                         GateCache<Scalar>* cache) {
  RowVec<Scalar> mean = x.colwise().mean();
  RowVec<Scalar> hidden = mean * p.mat(L.gate_w1).transpose();
  const RowVec<Scalar> z = hidden.cwiseMax(Scalar(0)) * p.mat(L.gate_w2).transpose();
  RowVec<Scalar> gate = (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
  Mat<Scalar> y = x.array().rowwise() * gate.array();
  if (cache) {
    cache->x = x;
    cache->mean = std::move(mean);
    cache->hidden = std::move(hidden);
    cache->gate = std::move(gate);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> gate_backward(const Mat<Scalar>& dy, const ParamBuffer<Scalar>& p, const BlockLayout& L,
                          const GateCache<Scalar>& c, ParamBuffer<Scalar>& grad) {
  const RowVec<Scalar> dgate = dy.cwiseProduct(c.x).colwise().sum();
  const RowVec<Scalar> dz = (dgate.array() * c.gate.array() * (Scalar(1) - c.gate.array())).matrix();
  const RowVec<Scalar> relu = c.hidden.cwiseMax(Scalar(0));
  grad.mat(L.gate_w2).noalias() += dz.transpose() * relu;
  RowVec<Scalar> dhidden = dz * p.mat(L.gate_w2);
  dhidden = (c.hidden.array() > Scalar(0)).select(dhidden, Scalar(0));
  grad.mat(L.gate_w1).noalias() += dhidden.transpose() * c.mean;
  const RowVec<Scalar> dmean = dhidden * p.mat(L.gate_w1);
  Mat<Scalar> dx = dy.array().rowwise() * c.gate.array();
  dx.rowwise() += dmean / static_cast<Scalar>(dy.rows());
  return dx;
}

// ---------------------------------------------------------------------------
// Feed-forward with exact (erf) GELU.

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> / std::numbers::sqrt2_v<Scalar>;
  return cdf + x * pdf;
}

template <typename Scalar>
struct MlpCache {
  Mat<Scalar> x, pre, act;
};

template <typename Scalar>
Mat<Scalar> mlp_forward(const Mat<Scalar>& x, const ParamBuffer<Scalar>& p, const BlockLayout& L,
                        MlpCache<Scalar>* cache) {
  Mat<Scalar> pre = (x * p.mat(L.fc1_w).transpose()).rowwise() + p.vec(L.fc1_b);
  Mat<Scalar> act = pre.unaryExpr([](Scalar v) { return gelu(v); });
  Mat<Scalar> out = (act * p.mat(L.fc2_w).transpose()).rowwise() + p.vec(L.fc2_b);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> mlp_backward(const Mat<Scalar>& dout, const ParamBuffer<Scalar>& p, const BlockLayout& L,
                         const MlpCache<Scalar>& c, ParamBuffer<Scalar>& grad) {
  grad.mat(L.fc2_w).noalias() += dout.transpose() * c.act;
  grad.vec(L.fc2_b) += dout.colwise().sum();
  Mat<Scalar> dpre = dout * p.mat(L.fc2_w);
  dpre.array() *= c.pre.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
  grad.mat(L.fc1_w).noalias() += dpre.transpose() * c.x;
  grad.vec(L.fc1_b) += dpre.colwise().sum();
  return dpre * p.mat(L.fc1_w);
}

// ---------------------------------------------------------------------------
// Block: pre-norm residual composition
//   x += STGA(LN1 x);  x += IFFA-branch(LN2 x);  x = gate(x);  x += MLP(LN3 x)

template <typename Scalar>
struct BlockCache {
  LayerNormCache<Scalar> ln1, ln2, ln3;
  StgaCache<Scalar> stga;
  IffaCache<Scalar> iffa;
  GateCache<Scalar> gate;
  MlpCache<Scalar> mlp;
};

template <typename Scalar>
Mat<Scalar> block_forward(const Mat<Scalar>& x, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                          const BlockLayout& L, int heads, BlockCache<Scalar>* c) {
  Mat<Scalar> h = x;
  h += stga_forward(layer_norm_forward(h, p, L.ln1_scale, L.ln1_offset, c ? &c->ln1 : nullptr), groups, p, L, heads,
                    c ? &c->stga : nullptr);
  h += iffa_branch_forward(layer_norm_forward(h, p, L.ln2_scale, L.ln2_offset, c ? &c->ln2 : nullptr), groups, p, L,
                           c ? &c->iffa : nullptr);
  h = gate_forward(h, p, L, c ? &c->gate : nullptr);
  h += mlp_forward(layer_norm_forward(h, p, L.ln3_scale, L.ln3_offset, c ? &c->ln3 : nullptr), p, L,
                   c ? &c->mlp : nullptr);
  return h;
}

template <typename Scalar>
Mat<Scalar> block_backward(const Mat<Scalar>& dout, const std::vector<Group>& groups, const ParamBuffer<Scalar>& p,
                           const BlockLayout& L, int heads, const BlockCache<Scalar>& c, ParamBuffer<Scalar>& grad) {
  Mat<Scalar> d = dout;
  d += layer_norm_backward(mlp_backward(d, p, L, c.mlp, grad), p, L.ln3_scale, L.ln3_offset, c.ln3, grad);
  d = gate_backward(d, p, L, c.gate, grad);
  d += layer_norm_backward(iffa_branch_backward(d, groups, p, L, c.iffa, grad), p, L.ln2_scale, L.ln2_offset, c.ln2,
                           grad);
  d += layer_norm_backward(stga_backward(d, groups, p, L, heads, c.stga, grad), p, L.ln1_scale, L.ln1_offset, c.ln1,
                           grad);
  return d;
}

// Op-level wrappers on token sets.

template <typename Scalar>
TokenSet<Scalar> stga(const TokenSet<Scalar>& in, const ParamBuffer<Scalar>& p, const BlockLayout& L, int heads) {
  TokenSet<Scalar> out = in;
  out.tokens = stga_forward(in.tokens, in.groups, p, L, heads, static_cast<StgaCache<Scalar>*>(nullptr));
  return out;
}

/// token + mixed_summary[slice of token]
template <typename Scalar>
TokenSet<Scalar> iffa(const TokenSet<Scalar>& in, const ParamBuffer<Scalar>& p, const BlockLayout& L) {
  TokenSet<Scalar> out = in;
  out.tokens += iffa_branch_forward(in.tokens, in.groups, p, L, static_cast<IffaCache<Scalar>*>(nullptr));
  return out;
}

template <typename Scalar>
TokenSet<Scalar> conv_channel_attention(const TokenSet<Scalar>& in, const ParamBuffer<Scalar>& p,
                                        const BlockLayout& L) {
  TokenSet<Scalar> out = in;
  out.tokens = gate_forward(in.tokens, p, L, static_cast<GateCache<Scalar>*>(nullptr));
  return out;
}

template <typename Scalar>
TokenSet<Scalar> sstformer_block(const TokenSet<Scalar>& in, const ParamBuffer<Scalar>& p, const BlockLayout& L,
                                 int heads) {
  TokenSet<Scalar> out = in;
  out.tokens = block_forward(in.tokens, in.groups, p, L, heads, static_cast<BlockCache<Scalar>*>(nullptr));
  return out;
}

}  // namespace msae
