#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "msae/error.hpp"
#include "msae/rng.hpp"
#include "msae/skeleton.hpp"

namespace msae {

/// Synthetic undulating-midline bout. Amplitudes and noise are in body
/// lengths (nose to tail = 1).
struct SynthParams {
  int J = 19;
  int T = 24;
  double fps = 200.0;
  double tail_freq = 25.0;
  double amp = 0.2;
  double wave_number = 0.5;
  double heading_drift = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Joint k sits at arc position k/(J-1) along the body; its lateral offset is
///   amp * (k/(J-1))^2 * sin(2*pi*(tail_freq*t/fps - wave_number*k/(J-1))).
/// The axial coordinate is accumulated so every segment keeps length
/// 1/(J-1) as long as the lateral step between neighbours does not exceed
/// it (true whenever amp*sqrt(4 + 4*pi^2*wave_number^2) < 1).
inline SkeletonSequence generate_bout(const SynthParams& p, std::string bout_id = "synth") {
  if (p.J < 2 || p.T < 1) throw Error(ErrorCode::InvalidConfig, "synthetic bout needs J >= 2 and T >= 1");
  if (p.amp < 0.0 || p.noise_sigma < 0.0) throw Error(ErrorCode::InvalidConfig, "amp and noise_sigma must be >= 0");
  if (!(p.fps > 0.0)) throw Error(ErrorCode::InvalidConfig, "fps must be positive");

  SkeletonSequence seq(std::move(bout_id), p.fps, p.T, p.J);
  SplitMix64 rng(p.seed);
  const double seg = 1.0 / static_cast<double>(p.J - 1);
  std::vector<double> lateral(static_cast<std::size_t>(p.J));
  for (int t = 0; t < p.T; ++t) {
    for (int k = 0; k < p.J; ++k) {
      const double s = static_cast<double>(k) * seg;
      const double phase = 2.0 * std::numbers::pi * (p.tail_freq * t / p.fps - p.wave_number * s);
      lateral[static_cast<std::size_t>(k)] = p.amp * s * s * std::sin(phase);
    }
    const double heading = p.heading_drift * t;
    const double c = std::cos(heading);
    const double sn = std::sin(heading);
    double axial = 0.0;
    for (int k = 0; k < p.J; ++k) {
      const double lat = lateral[static_cast<std::size_t>(k)];
      if (k > 0) {
        const double dy = lat - lateral[static_cast<std::size_t>(k - 1)];
        axial += std::sqrt(std::max(seg * seg - dy * dy, 0.0));
      }
      seq.x(t, k) = c * axial - sn * lat;
      seq.y(t, k) = sn * axial + c * lat;
    }
  }
  if (p.noise_sigma > 0.0) {
    for (double& v : seq.coords) v += p.noise_sigma * rng.gaussian();
  }
  return seq;
}

/// `n` bouts around `base`: bout i draws its own seed and jitters tail
/// frequency, amplitude and heading drift by up to +/- `jitter` (relative;
/// drift jitter is absolute in rad/frame scaled by 0.05).
inline std::vector<SkeletonSequence> generate_dataset(const SynthParams& base, int n, std::uint64_t seed,
                                                      double jitter = 0.2) {
  std::vector<SkeletonSequence> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i), 0x6E4ULL));
    SynthParams p = base;
    p.seed = rng.next();
    p.tail_freq *= 1.0 + jitter * rng.uniform(-1.0, 1.0);
    p.amp *= 1.0 + jitter * rng.uniform(-1.0, 1.0);
    p.heading_drift += 0.05 * jitter * rng.uniform(-1.0, 1.0);
    out.push_back(generate_bout(p, "bout_" + std::to_string(i)));
  }
  return out;
}

}  // namespace msae
