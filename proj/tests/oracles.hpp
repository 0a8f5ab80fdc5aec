#pragma once

// Independent reference computations used only by the tests. Nothing here
// shares code with the paths it checks.

#include <qkdsim/beam_optics.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qkdsim::oracle {

struct McEstimate {
  double p = 0.0;
  double stderr_ = 0.0;
};

/// Samples photon positions from the beam's transverse Gaussian (per-axis
/// standard deviation w / 2) and counts joint captures.
inline McEstimate mc_coincidence(double w, optics::Vec2 c1, double a1, optics::Vec2 c2, double a2,
                                 optics::CorrelationMode mode, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, w / 2.0);
  std::size_t hits = 0;
  const double sign = mode == optics::CorrelationMode::Inverted ? 1.0 : -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g(rng);
    const double y = g(rng);
    const bool in1 = std::hypot(x - c1.x, y - c1.y) <= a1;
    const bool in2 = std::hypot(sign * x - c2.x, sign * y - c2.y) <= a2;
    hits += (in1 && in2);
  }
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(std::max(p * (1.0 - p), 1.0 / static_cast<double>(n)) / static_cast<double>(n))};
}

inline McEstimate mc_capture(double w, optics::Vec2 c, double a, std::size_t n, std::uint64_t seed) {
  return mc_coincidence(w, c, a, c, a, optics::CorrelationMode::Inverted, n, seed);
}

/// Brute-force correlation over explicit event lists (not binned series).
inline std::vector<std::int64_t> brute_lag_histogram(const std::vector<std::int64_t>& bins_a,
                                                     const std::vector<std::int64_t>& bins_b,
                                                     std::int64_t lmax) {
  std::vector<std::int64_t> h(static_cast<std::size_t>(2 * lmax + 1), 0);
  for (auto i : bins_a)
    for (auto j : bins_b) {
      const auto l = j - i;
      if (l >= -lmax && l <= lmax) h[static_cast<std::size_t>(l + lmax)]++;
    }
  return h;
}

}  // namespace qkdsim::oracle
