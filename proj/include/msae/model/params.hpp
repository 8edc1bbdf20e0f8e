#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "msae/checkpoint.hpp"
#include "msae/model/config.hpp"
#include "msae/rng.hpp"

namespace msae {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using MatMap = Eigen::Map<Mat<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const Mat<Scalar>>;
template <typename Scalar>
using RowMap = Eigen::Map<RowVec<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowVec<Scalar>>;

enum class Init { Zeros, Ones, Xavier, Normal002 };

struct TensorSpec {
  std::string name;
  int rows = 1;  // vectors are stored as a single row
  int cols = 1;
  bool is_vector = false;
  std::size_t offset = 0;
  Init init = Init::Zeros;
  int fan_in = 0;
  int fan_out = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  std::vector<std::int64_t> shape() const {
    if (is_vector) return {cols};
    return {rows, cols};
  }
};

/// Tensor ids of one transformer block.
struct BlockLayout {
  int d = 0;
  int ln1_scale, ln1_offset;
  int wq, wk, wv, wo, bo;
  int ln2_scale, ln2_offset;
  int iffa_depthwise, iffa_pointwise;
  int gate_w1, gate_w2;
  int ln3_scale, ln3_offset;
  int fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Coordinate projection plus frame and joint positional tables.
struct EmbeddingLayout {
  int d = 0;
  int coord_proj = -1;  // encoder only
  int frame_pos = -1;
  int joint_pos = -1;
};

/// Ordered registry of every learnable tensor. The order defines the flat
/// parameter vector and the checkpoint tensor order.
class ParamRegistry {
 public:
  explicit ParamRegistry(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    enc_embed_.d = cfg.d_enc;
    enc_embed_.coord_proj = add_matrix("enc.stse.coord_proj", cfg.d_enc, 2, Init::Xavier, 2, cfg.d_enc);
    enc_embed_.frame_pos = add_matrix("enc.stse.frame_pos", cfg.max_T, cfg.d_enc, Init::Normal002);
    enc_embed_.joint_pos = add_matrix("enc.stse.joint_pos", cfg.J, cfg.d_enc, Init::Normal002);
    for (int i = 0; i < cfg.n_enc; ++i) enc_blocks_.push_back(add_block("enc.blocks." + std::to_string(i), cfg.d_enc));

    dec_proj_w_ = add_matrix("dec.proj.weight", cfg.d_dec, cfg.d_enc, Init::Xavier, cfg.d_enc, cfg.d_dec);
    dec_proj_b_ = add_vector("dec.proj.bias", cfg.d_dec, Init::Zeros);
    mask_token_ = add_vector("dec.mask_token", cfg.d_dec, Init::Normal002);
    dec_embed_.d = cfg.d_dec;
    dec_embed_.frame_pos = add_matrix("dec.frame_pos", cfg.max_T, cfg.d_dec, Init::Normal002);
    dec_embed_.joint_pos = add_matrix("dec.joint_pos", cfg.J, cfg.d_dec, Init::Normal002);
    for (int i = 0; i < cfg.n_dec; ++i) dec_blocks_.push_back(add_block("dec.blocks." + std::to_string(i), cfg.d_dec));
    head_w_ = add_matrix("dec.head.weight", 2, cfg.d_dec, Init::Xavier, cfg.d_dec, 2);
    head_b_ = add_vector("dec.head.bias", 2, Init::Zeros);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& tensor(int id) const { return tensors_[static_cast<std::size_t>(id)]; }
  std::size_t total_size() const { return total_; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  const EmbeddingLayout& enc_embedding() const { return enc_embed_; }
  const EmbeddingLayout& dec_embedding() const { return dec_embed_; }
  const std::vector<BlockLayout>& enc_blocks() const { return enc_blocks_; }
  const std::vector<BlockLayout>& dec_blocks() const { return dec_blocks_; }
  int dec_proj_weight() const { return dec_proj_w_; }
  int dec_proj_bias() const { return dec_proj_b_; }
  int mask_token() const { return mask_token_; }
  int head_weight() const { return head_w_; }
  int head_bias() const { return head_b_; }

  std::vector<TensorEntry> manifest_entries() const {
    std::vector<TensorEntry> out;
    for (const auto& t : tensors_) out.push_back({t.name, t.shape(), "f32", t.offset * 4});
    return out;
  }

 private:
  int add(TensorSpec spec) {
    spec.offset = total_;
    total_ += spec.size();
    tensors_.push_back(std::move(spec));
    return static_cast<int>(tensors_.size()) - 1;
  }
  int add_matrix(std::string name, int rows, int cols, Init init, int fan_in = 0, int fan_out = 0) {
    return add({std::move(name), rows, cols, false, 0, init, fan_in, fan_out});
  }
  int add_vector(std::string name, int n, Init init) { return add({std::move(name), 1, n, true, 0, init, 0, 0}); }

  BlockLayout add_block(const std::string& p, int d) {
    const int hidden = d * cfg_.mlp_ratio;
    const int g = gate_width(d);
    const int k = cfg_.iffa_kernel;
    BlockLayout b;
    b.d = d;
    b.ln1_scale = add_vector(p + ".ln1.scale", d, Init::Ones);
    b.ln1_offset = add_vector(p + ".ln1.offset", d, Init::Zeros);
    b.wq = add_matrix(p + ".stga.wq", d, d, Init::Xavier, d, d);
    b.wk = add_matrix(p + ".stga.wk", d, d, Init::Xavier, d, d);
    b.wv = add_matrix(p + ".stga.wv", d, d, Init::Xavier, d, d);
    b.wo = add_matrix(p + ".stga.wo", d, d, Init::Xavier, d, d);
    b.bo = add_vector(p + ".stga.bo", d, Init::Zeros);
    b.ln2_scale = add_vector(p + ".ln2.scale", d, Init::Ones);
    b.ln2_offset = add_vector(p + ".ln2.offset", d, Init::Zeros);
    b.iffa_depthwise = add_matrix(p + ".iffa.depthwise", d, k, Init::Xavier, k, k);
    b.iffa_pointwise = add_matrix(p + ".iffa.pointwise", d, d, Init::Xavier, d, d);
    b.gate_w1 = add_matrix(p + ".gate.w1", g, d, Init::Xavier, d, g);
    b.gate_w2 = add_matrix(p + ".gate.w2", d, g, Init::Xavier, g, d);
    b.ln3_scale = add_vector(p + ".ln3.scale", d, Init::Ones);
    b.ln3_offset = add_vector(p + ".ln3.offset", d, Init::Zeros);
    b.fc1_w = add_matrix(p + ".mlp.fc1.weight", hidden, d, Init::Xavier, d, hidden);
    b.fc1_b = add_vector(p + ".mlp.fc1.bias", hidden, Init::Zeros);
    b.fc2_w = add_matrix(p + ".mlp.fc2.weight", d, hidden, Init::Xavier, hidden, d);
    b.fc2_b = add_vector(p + ".mlp.fc2.bias", d, Init::Zeros);
    return b;
  }

  ModelConfig cfg_;
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
  EmbeddingLayout enc_embed_, dec_embed_;
  std::vector<BlockLayout> enc_blocks_, dec_blocks_;
  int dec_proj_w_ = -1, dec_proj_b_ = -1, mask_token_ = -1, head_w_ = -1, head_b_ = -1;
};

/// Flat storage for all registry tensors (also used for gradients).
template <typename Scalar>
class ParamBuffer {
 public:
  explicit ParamBuffer(std::shared_ptr<const ParamRegistry> registry)
      : registry_(std::move(registry)), values_(registry_->total_size(), Scalar(0)) {}

  const ParamRegistry& registry() const { return *registry_; }
  std::shared_ptr<const ParamRegistry> registry_ptr() const { return registry_; }

  std::span<Scalar> flat() { return values_; }
  std::span<const Scalar> flat() const { return values_; }
  std::size_t size() const { return values_.size(); }

  MatMap<Scalar> mat(int id) {
    const auto& t = registry_->tensor(id);
    return MatMap<Scalar>(values_.data() + t.offset, t.rows, t.cols);
  }
  ConstMatMap<Scalar> mat(int id) const {
    const auto& t = registry_->tensor(id);
    return ConstMatMap<Scalar>(values_.data() + t.offset, t.rows, t.cols);
  }
  RowMap<Scalar> vec(int id) {
    const auto& t = registry_->tensor(id);
    return RowMap<Scalar>(values_.data() + t.offset, static_cast<Eigen::Index>(t.size()));
  }
  ConstRowMap<Scalar> vec(int id) const {
    const auto& t = registry_->tensor(id);
    return ConstRowMap<Scalar>(values_.data() + t.offset, static_cast<Eigen::Index>(t.size()));
  }
  std::span<Scalar> tensor(int id) {
    const auto& t = registry_->tensor(id);
    return {values_.data() + t.offset, t.size()};
  }
  std::span<const Scalar> tensor(int id) const {
    const auto& t = registry_->tensor(id);
    return {values_.data() + t.offset, t.size()};
  }

  void set_zero() { std::fill(values_.begin(), values_.end(), Scalar(0)); }

  /// Weights ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); mask token
  /// and positional tables ~ N(0, 0.02^2); LN scales 1; biases 0. Values are
  /// drawn in double precision so f32 and f64 models agree up to rounding.
  void initialize(std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, 0x1417ULL));
    for (const auto& t : registry_->tensors()) {
      Scalar* p = values_.data() + t.offset;
      for (std::size_t i = 0; i < t.size(); ++i) {
        double v = 0.0;
        switch (t.init) {
          case Init::Zeros: v = 0.0; break;
          case Init::Ones: v = 1.0; break;
          case Init::Xavier: {
            const double a = std::sqrt(6.0 / static_cast<double>(t.fan_in + t.fan_out));
            v = rng.uniform(-a, a);
            break;
          }
          case Init::Normal002: v = 0.02 * rng.gaussian(); break;
        }
        p[i] = static_cast<Scalar>(v);
      }
    }
  }

  template <typename Other>
  ParamBuffer<Other> cast() const {
    ParamBuffer<Other> out(registry_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.flat()[i] = static_cast<Other>(values_[i]);
    return out;
  }

 private:
  std::shared_ptr<const ParamRegistry> registry_;
  std::vector<Scalar> values_;
};

}  // namespace msae
