#pragma once

// Brute-force f64 references for the model, loss and optimizer. Nothing in
// here calls into msae/model or msae/train: every kernel is a plain scalar
// loop so the two code paths can check each other.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "msae/masking.hpp"

namespace msae::oracle {

using Vec = std::vector<double>;
using Table = std::vector<Vec>;  // rows of tokens

/// y[o] = sum_i W[o][i] x[i] + b[o]; W is flattened row-major [out][in].
inline Vec affine(const Vec& x, const Vec& W, const Vec* b, std::size_t out) {
  const std::size_t in = x.size();
  Vec y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b ? (*b)[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += W[o * in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline Table layer_norm(const Table& X, const Vec& gamma, const Vec& beta, double eps = 1e-5) {
  Table Y = X;
  for (std::size_t n = 0; n < X.size(); ++n) {
    const double d = static_cast<double>(X[n].size());
    double mu = 0.0;
    for (double v : X[n]) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : X[n]) var += (v - mu) * (v - mu);
    var /= d;
    for (std::size_t c = 0; c < X[n].size(); ++c) {
      Y[n][c] = (X[n][c] - mu) / std::sqrt(var + eps) * gamma[c] + beta[c];
    }
  }
  return Y;
}

/// Softmax attention of one group and one head:
/// out[i] = sum_j softmax_j(scale * Q[i].K[j]) V[j]. Optionally returns the
/// weight rows.
inline Table attention_reference(const Table& Q, const Table& K, const Table& V, double scale,
                                 Table* weights = nullptr) {
  Table out(Q.size(), Vec(V.empty() ? 0 : V[0].size(), 0.0));
  if (weights) weights->assign(Q.size(), Vec(K.size(), 0.0));
  for (std::size_t i = 0; i < Q.size(); ++i) {
    Vec logits(K.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < K.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Q[i].size(); ++c) dot += Q[i][c] * K[j][c];
      logits[j] = dot * scale;
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::size_t j = 0; j < K.size(); ++j) {
      const double w = logits[j] / z;
      if (weights) (*weights)[i][j] = w;
      for (std::size_t c = 0; c < V[j].size(); ++c) out[i][c] += w * V[j][c];
    }
  }
  return out;
}

struct AttentionWeights {
  Vec wq, wk, wv, wo, bo;
};

/// Multi-head attention restricted to tokens with equal slice id.
inline Table stga_reference(const Table& X, const std::vector<int>& slice_of_token, const AttentionWeights& w,
                            int heads) {
  const std::size_t N = X.size();
  const std::size_t d = X.empty() ? 0 : X[0].size();
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  Table Q(N), K(N), V(N);
  for (std::size_t n = 0; n < N; ++n) {
    Q[n] = affine(X[n], w.wq, nullptr, d);
    K[n] = affine(X[n], w.wk, nullptr, d);
    V[n] = affine(X[n], w.wv, nullptr, d);
  }
  Table concat(N, Vec(d, 0.0));
  const int max_slice = slice_of_token.empty() ? -1 : *std::max_element(slice_of_token.begin(), slice_of_token.end());
  for (int s = 0; s <= max_slice; ++s) {
    std::vector<std::size_t> members;
    for (std::size_t n = 0; n < N; ++n) {
      if (slice_of_token[n] == s) members.push_back(n);
    }
    for (int h = 0; h < heads; ++h) {
      Table q, k, v;
      for (auto n : members) {
        const auto begin = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(h) * dh);
        q.emplace_back(Q[n].begin() + begin, Q[n].begin() + begin + static_cast<std::ptrdiff_t>(dh));
        k.emplace_back(K[n].begin() + begin, K[n].begin() + begin + static_cast<std::ptrdiff_t>(dh));
        v.emplace_back(V[n].begin() + begin, V[n].begin() + begin + static_cast<std::ptrdiff_t>(dh));
      }
      const Table a = attention_reference(q, k, v, 1.0 / std::sqrt(static_cast<double>(dh)));
      for (std::size_t m = 0; m < members.size(); ++m) {
        for (std::size_t c = 0; c < dh; ++c) concat[members[m]][static_cast<std::size_t>(h) * dh + c] = a[m][c];
      }
    }
  }
  Table out(N);
  for (std::size_t n = 0; n < N; ++n) out[n] = affine(concat[n], w.wo, &w.bo, d);
  return out;
}

/// x + pointwise(depthwise_conv(slice means))[slice(x)]; kernel is [d][K],
/// pointwise is [d][d].
inline Table iffa_reference(const Table& X, const std::vector<int>& slice_of_token, const Vec& kernel,
                            const Vec& pointwise, int K) {
  const std::size_t d = X.empty() ? 0 : X[0].size();
  const int S = X.empty() ? 0 : *std::max_element(slice_of_token.begin(), slice_of_token.end()) + 1;
  Table mean(static_cast<std::size_t>(S), Vec(d, 0.0));
  std::vector<int> count(static_cast<std::size_t>(S), 0);
  for (std::size_t n = 0; n < X.size(); ++n) {
    const auto s = static_cast<std::size_t>(slice_of_token[n]);
    ++count[s];
    for (std::size_t c = 0; c < d; ++c) mean[s][c] += X[n][c];
  }
  for (std::size_t s = 0; s < mean.size(); ++s) {
    for (double& v : mean[s]) v /= count[s];
  }
  Table mixed(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    Vec conv(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
      for (int t = 0; t < K; ++t) {
        const int src = s + t - K / 2;
        if (src >= 0 && src < S) {
          conv[c] += kernel[c * static_cast<std::size_t>(K) + static_cast<std::size_t>(t)] *
                     mean[static_cast<std::size_t>(src)][c];
        }
      }
    }
    mixed[static_cast<std::size_t>(s)] = affine(conv, pointwise, nullptr, d);
  }
  Table out = X;
  for (std::size_t n = 0; n < X.size(); ++n) {
    for (std::size_t c = 0; c < d; ++c) out[n][c] += mixed[static_cast<std::size_t>(slice_of_token[n])][c];
  }
  return out;
}

/// Every token scaled by sigmoid(W2 relu(W1 mean(X))).
inline Table gate_reference(const Table& X, const Vec& w1, const Vec& w2, std::size_t hidden) {
  const std::size_t d = X.empty() ? 0 : X[0].size();
  Vec mean(d, 0.0);
  for (const auto& row : X) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += row[c] / static_cast<double>(X.size());
  }
  Vec h = affine(mean, w1, nullptr, hidden);
  for (double& v : h) v = v > 0.0 ? v : 0.0;
  const Vec z = affine(h, w2, nullptr, d);
  Table out = X;
  for (auto& row : out) {
    for (std::size_t c = 0; c < d; ++c) row[c] *= 1.0 / (1.0 + std::exp(-z[c]));
  }
  return out;
}

struct BlockWeights {
  Vec ln1_scale, ln1_offset;
  AttentionWeights attn;
  Vec ln2_scale, ln2_offset;
  Vec depthwise, pointwise;
  Vec gate_w1, gate_w2;
  Vec ln3_scale, ln3_offset;
  Vec fc1_w, fc1_b, fc2_w, fc2_b;
};

using TensorLookup = std::function<Vec(const std::string&)>;

inline BlockWeights block_weights(const TensorLookup& get, const std::string& p) {
  BlockWeights b;
  b.ln1_scale = get(p + ".ln1.scale");
  b.ln1_offset = get(p + ".ln1.offset");
  b.attn = {get(p + ".stga.wq"), get(p + ".stga.wk"), get(p + ".stga.wv"), get(p + ".stga.wo"), get(p + ".stga.bo")};
  b.ln2_scale = get(p + ".ln2.scale");
  b.ln2_offset = get(p + ".ln2.offset");
  b.depthwise = get(p + ".iffa.depthwise");
  b.pointwise = get(p + ".iffa.pointwise");
  b.gate_w1 = get(p + ".gate.w1");
  b.gate_w2 = get(p + ".gate.w2");
  b.ln3_scale = get(p + ".ln3.scale");
  b.ln3_offset = get(p + ".ln3.offset");
  b.fc1_w = get(p + ".mlp.fc1.weight");
  b.fc1_b = get(p + ".mlp.fc1.bias");
  b.fc2_w = get(p + ".mlp.fc2.weight");
  b.fc2_b = get(p + ".mlp.fc2.bias");
  return b;
}

inline Table add(const Table& a, const Table& b) {
  Table out = a;
  for (std::size_t n = 0; n < a.size(); ++n) {
    for (std::size_t c = 0; c < a[n].size(); ++c) out[n][c] += b[n][c];
  }
  return out;
}

inline Table block_reference(const Table& X, const std::vector<int>& slice_of_token, const BlockWeights& w, int heads,
                             int K) {
  const std::size_t d = X.empty() ? 0 : X[0].size();
  Table x = add(X, stga_reference(layer_norm(X, w.ln1_scale, w.ln1_offset), slice_of_token, w.attn, heads));
  const Table normed = layer_norm(x, w.ln2_scale, w.ln2_offset);
  const Table aggregated = iffa_reference(normed, slice_of_token, w.depthwise, w.pointwise, K);
  for (std::size_t n = 0; n < x.size(); ++n) {
    for (std::size_t c = 0; c < d; ++c) x[n][c] += aggregated[n][c] - normed[n][c];
  }
  x = gate_reference(x, w.gate_w1, w.gate_w2, w.gate_w1.size() / d);
  const Table a = layer_norm(x, w.ln3_scale, w.ln3_offset);
  const std::size_t hidden = w.fc1_b.size();
  for (std::size_t n = 0; n < x.size(); ++n) {
    Vec h = affine(a[n], w.fc1_w, &w.fc1_b, hidden);
    for (double& v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    const Vec m = affine(h, w.fc2_w, &w.fc2_b, d);
    for (std::size_t c = 0; c < d; ++c) x[n][c] += m[c];
  }
  return x;
}

struct Config {
  int J = 3;
  int F = 3;
  int d_enc = 4;
  int d_dec = 4;
  int n_enc = 1;
  int n_dec = 1;
  int heads = 1;
  int iffa_kernel = 3;
};

/// STSE tokens for visible (frame, joint) pairs listed in ascending order;
/// `slice_of_token` receives the slice id of each token.
inline Table stse_reference(const Vec& coords, const std::vector<Position>& positions, const Vec& proj,
                            const Vec& frame_pos, const Vec& joint_pos, int d, int F,
                            std::vector<int>* slice_of_token) {
  const auto D = static_cast<std::size_t>(d);
  Table out;
  std::vector<int> distinct;
  slice_of_token->clear();
  for (std::size_t n = 0; n < positions.size(); ++n) {
    if (distinct.empty() || distinct.back() != positions[n].frame) distinct.push_back(positions[n].frame);
    slice_of_token->push_back((static_cast<int>(distinct.size()) - 1) / F);
    Vec tok(D);
    for (std::size_t c = 0; c < D; ++c) {
      tok[c] = proj[c * 2] * coords[2 * n] + proj[c * 2 + 1] * coords[2 * n + 1] +
               frame_pos[static_cast<std::size_t>(positions[n].frame) * D + c] +
               joint_pos[static_cast<std::size_t>(positions[n].joint) * D + c];
    }
    out.push_back(std::move(tok));
  }
  return out;
}

/// Mean of squared errors over masked cells x 2 coordinates (or all cells).
inline double masked_mse_reference(const Vec& pred, const Vec& target, const std::vector<unsigned char>& masked,
                                   bool all_cells = false) {
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t cell = 0; cell < masked.size(); ++cell) {
    if (!all_cells && !masked[cell]) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      const double e = pred[cell * 2 + c] - target[cell * 2 + c];
      sum += e * e;
      count += 1.0;
    }
  }
  return sum / count;
}

/// Full scalar pipeline: visible gather -> STSE -> encoder blocks ->
/// projection + mask tokens + decoder positions -> decoder blocks -> head
/// -> masked MSE. `coords` is the [T][J][2] target.
inline double pipeline_reference(const Config& cfg, const TensorLookup& get, const Vec& coords, int T,
                                 const MaskPlan& plan, bool all_cells = false) {
  const auto J = static_cast<std::size_t>(cfg.J);
  std::vector<unsigned char> masked(static_cast<std::size_t>(T) * J, 0);
  for (int f : plan.masked_frames) {
    for (std::size_t j = 0; j < J; ++j) masked[static_cast<std::size_t>(f) * J + j] = 1;
  }
  for (std::size_t i = 0; i < plan.visible_frames.size(); ++i) {
    for (int j : plan.masked_joints_per_visible_frame[i]) {
      masked[static_cast<std::size_t>(plan.visible_frames[i]) * J + static_cast<std::size_t>(j)] = 1;
    }
  }

  Vec vis_coords;
  std::vector<Position> positions;
  for (int f = 0; f < T; ++f) {
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t cell = static_cast<std::size_t>(f) * J + j;
      if (masked[cell]) continue;
      positions.push_back({f, static_cast<int>(j)});
      vis_coords.push_back(coords[cell * 2]);
      vis_coords.push_back(coords[cell * 2 + 1]);
    }
  }

  std::vector<int> slices;
  Table x = stse_reference(vis_coords, positions, get("enc.stse.coord_proj"), get("enc.stse.frame_pos"),
                           get("enc.stse.joint_pos"), cfg.d_enc, cfg.F, &slices);
  for (int b = 0; b < cfg.n_enc; ++b) {
    x = block_reference(x, slices, block_weights(get, "enc.blocks." + std::to_string(b)), cfg.heads,
                        cfg.iffa_kernel);
  }

  const auto D = static_cast<std::size_t>(cfg.d_dec);
  const Vec proj_w = get("dec.proj.weight");
  const Vec proj_b = get("dec.proj.bias");
  const Vec mask_token = get("dec.mask_token");
  const Vec frame_pos = get("dec.frame_pos");
  const Vec joint_pos = get("dec.joint_pos");
  Table y;
  std::vector<int> dec_slices;
  std::size_t next_visible = 0;
  for (int f = 0; f < T; ++f) {
    for (std::size_t j = 0; j < J; ++j) {
      const std::size_t cell = static_cast<std::size_t>(f) * J + j;
      Vec tok = masked[cell] ? mask_token : affine(x[next_visible++], proj_w, &proj_b, D);
      for (std::size_t c = 0; c < D; ++c) {
        tok[c] += frame_pos[static_cast<std::size_t>(f) * D + c] + joint_pos[j * D + c];
      }
      y.push_back(std::move(tok));
      dec_slices.push_back(f / cfg.F);
    }
  }
  for (int b = 0; b < cfg.n_dec; ++b) {
    y = block_reference(y, dec_slices, block_weights(get, "dec.blocks." + std::to_string(b)), cfg.heads,
                        cfg.iffa_kernel);
  }
  const Vec head_w = get("dec.head.weight");
  const Vec head_b = get("dec.head.bias");
  Vec pred;
  for (const auto& tok : y) {
    const Vec out = affine(tok, head_w, &head_b, 2);
    pred.push_back(out[0]);
    pred.push_back(out[1]);
  }
  return masked_mse_reference(pred, coords, masked, all_cells);
}

struct AdamHyper {
  double lr = 1e-3;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected Adam step with decoupled weight decay; `step` is the
/// 1-based index of the step being taken.
inline void adam_reference(Vec& p, const Vec& g, Vec& m, Vec& v, long step, const AdamHyper& h) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = h.b1 * m[i] + (1.0 - h.b1) * g[i];
    v[i] = h.b2 * v[i] + (1.0 - h.b2) * g[i] * g[i];
    const double mhat = m[i] / (1.0 - std::pow(h.b1, static_cast<double>(step)));
    const double vhat = v[i] / (1.0 - std::pow(h.b2, static_cast<double>(step)));
    p[i] -= h.lr * (mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * p[i]);
  }
}

/// Central differences (L(p + h e_i) - L(p - h e_i)) / 2h.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& loss, Vec params, double h) {
  Vec grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double up = loss(params);
    params[i] = orig - h;
    const double down = loss(params);
    params[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

struct TensorRange {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct FinDiffReport {
  std::vector<std::pair<std::string, double>> per_tensor;  // max error per tensor
  double global_max = 0.0;
  long failing_index = -1;  // first entry above tolerance, -1 if none
};

/// Relative error |a - n| / max(|a|, |n|); entries with |a| + |n| below
/// `abs_floor` are compared absolutely.
inline FinDiffReport compare_gradients(const Vec& analytic, const Vec& numeric, const std::vector<TensorRange>& ranges,
                                       double tolerance, double abs_floor = 1e-8) {
  FinDiffReport report;
  for (const auto& r : ranges) {
    double worst = 0.0;
    for (std::size_t i = r.offset; i < r.offset + r.size; ++i) {
      const double a = analytic[i];
      const double n = numeric[i];
      const double diff = std::abs(a - n);
      const double err = std::abs(a) + std::abs(n) < abs_floor ? diff : diff / std::max(std::abs(a), std::abs(n));
      worst = std::max(worst, err);
      if (err > tolerance && report.failing_index < 0) report.failing_index = static_cast<long>(i);
    }
    report.per_tensor.emplace_back(r.name, worst);
    report.global_max = std::max(report.global_max, worst);
  }
  return report;
}

}  // namespace msae::oracle
