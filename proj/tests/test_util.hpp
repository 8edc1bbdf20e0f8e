#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "msae/msae.hpp"
#include "msae/oracle.hpp"

namespace msae::test {

/// Model config small enough for brute-force references.
inline ModelConfig small_config(int n_enc = 1, int n_dec = 1) {
  ModelConfig c;
  c.J = 3;
  c.F = 3;
  c.d_enc = 4;
  c.d_dec = 4;
  c.n_enc = n_enc;
  c.n_dec = n_dec;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.max_T = 9;
  c.iffa_kernel = 3;
  return c;
}

inline oracle::Config oracle_config(const ModelConfig& c) {
  return {c.J, c.F, c.d_enc, c.d_dec, c.n_enc, c.n_dec, c.heads, c.iffa_kernel};
}

/// Initialized parameters with every entry (LN scales and biases included)
/// perturbed so no tensor sits at a special value.
template <typename Scalar>
ParamBuffer<Scalar> random_params(const ModelConfig& cfg, std::uint64_t seed, double jitter = 0.3) {
  ParamBuffer<Scalar> p(std::make_shared<const ParamRegistry>(cfg));
  p.initialize(seed);
  SplitMix64 rng(seed ^ 0xABCDEFULL);
  for (auto& v : p.flat()) v += static_cast<Scalar>(rng.uniform(-jitter, jitter));
  return p;
}

template <typename Scalar>
oracle::TensorLookup lookup(const ParamBuffer<Scalar>& p) {
  return [&p](const std::string& name) {
    const int id = p.registry().find(name);
    if (id < 0) throw std::runtime_error("no tensor " + name);
    const auto t = p.tensor(id);
    return oracle::Vec(t.begin(), t.end());
  };
}

inline SkeletonSequence random_sequence(int T, int J, std::uint64_t seed, double scale = 1.0, std::string id = "r") {
  SkeletonSequence s(std::move(id), 100.0, T, J);
  SplitMix64 rng(seed);
  for (auto& v : s.coords) v = scale * rng.uniform(-1.0, 1.0);
  return s;
}

template <typename Scalar>
oracle::Table to_table(const Mat<Scalar>& m) {
  oracle::Table t(static_cast<std::size_t>(m.rows()), oracle::Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
  }
  return t;
}

template <typename Scalar>
Mat<Scalar> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
  return m;
}

inline double max_abs_diff(const oracle::Table& a, const oracle::Table& b) {
  double worst = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a[r].size(); ++c) worst = std::max(worst, std::abs(a[r][c] - b[r][c]));
  }
  return worst;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("msae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace msae::test
