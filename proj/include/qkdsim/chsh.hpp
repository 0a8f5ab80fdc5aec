#pragma once

// Polarisation measurements on entangled pairs: joint outcome statistics at
// two analyser angles, simulated runs over the three-by-three setting grid,
// the correlation coefficient E, the CHSH combination S and the QBER of the
// parallel (key) settings.

#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>
#include <qkdsim/pair_source.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

namespace qkdsim::chsh {

enum Setting : std::size_t { kSetting0 = 0, kSetting1 = 1, kKeySetting = 2 };

/// Analyser angles in degrees; each setting's orthogonal channel sits at +90.
struct BasisSettings {
  std::array<double, 3> alice{22.5, 67.5, 0.0};
  std::array<double, 3> bob{0.0, 45.0, 0.0};
};

inline double complement(double angle_deg) { return angle_deg + 90.0; }

enum class PairState {
  PhiPlus,  ///< (|HH> + |VV>) / sqrt2: parallel analysers agree
  Singlet,  ///< (|HV> - |VH>) / sqrt2: parallel analysers disagree
};

struct PairStateModel {
  double visibility = 1.0;
  double accidental_fraction = 0.0;
  PairState state = PairState::PhiPlus;

  void validate() const {
    if (!(visibility >= 0.0 && visibility <= 1.0)) {
      throw DomainError("PairStateModel: visibility must lie in [0, 1]");
    }
    if (!(accidental_fraction >= 0.0 && accidental_fraction <= 1.0)) {
      throw DomainError("PairStateModel: accidental fraction must lie in [0, 1]");
    }
  }
};

struct JointProbabilities {
  double pp = 0.0;
  double pm = 0.0;
  double mp = 0.0;
  double mm = 0.0;
};

inline JointProbabilities joint_probabilities(double a_deg, double b_deg,
                                              const PairStateModel& m) {
  m.validate();
  const double d = (a_deg - b_deg) * std::numbers::pi / 180.0;
  double same = std::cos(d) * std::cos(d);
  double diff = std::sin(d) * std::sin(d);
  if (m.state == PairState::Singlet) std::swap(same, diff);
  const double v = m.visibility;
  const double alpha = m.accidental_fraction;
  auto mix = [&](double x) { return (1.0 - alpha) * (v * x / 2.0 + (1.0 - v) / 4.0) + alpha / 4.0; };
  return {mix(same), mix(diff), mix(diff), mix(same)};
}

struct OutcomeCounts {
  std::uint64_t pp = 0;
  std::uint64_t pm = 0;
  std::uint64_t mp = 0;
  std::uint64_t mm = 0;

  std::uint64_t total() const { return pp + pm + mp + mm; }
  void add(std::uint8_t outcome_a, std::uint8_t outcome_b) {
    if (outcome_a == 0) {
      (outcome_b == 0 ? pp : pm)++;
    } else {
      (outcome_b == 0 ? mp : mm)++;
    }
  }
  friend bool operator==(const OutcomeCounts&, const OutcomeCounts&) = default;
};

/// counts[i][j]: Alice setting i, Bob setting j.
struct SettingCounts {
  std::array<std::array<OutcomeCounts, 3>, 3> counts{};

  OutcomeCounts& at(std::size_t a, std::size_t b) { return counts[a][b]; }
  const OutcomeCounts& at(std::size_t a, std::size_t b) const { return counts[a][b]; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (const auto& c : row) t += c.total();
    return t;
  }
  friend bool operator==(const SettingCounts&, const SettingCounts&) = default;
};

/// Draws the two outcomes (0 = '+', 1 = '-') for one pair.
template <class Rng>
std::pair<std::uint8_t, std::uint8_t> sample_outcomes(const JointProbabilities& p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  if (x < p.pp) return {0, 0};
  if (x < p.pp + p.pm) return {0, 1};
  if (x < p.pp + p.pm + p.mp) return {1, 0};
  return {1, 1};
}

/// Every pair gets independent, uniformly chosen settings on both sides.
inline SettingCounts simulate_run(const BasisSettings& settings, const PairStateModel& model,
                                  std::uint64_t n_pairs, std::uint64_t seed) {
  model.validate();
  if (n_pairs == 0) throw UsageError("simulate_run: n_pairs must be positive");
  std::array<std::array<JointProbabilities, 3>, 3> probs;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      probs[i][j] = joint_probabilities(settings.alice[i], settings.bob[j], model);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, 2);
  SettingCounts out;
  for (std::uint64_t k = 0; k < n_pairs; ++k) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    const auto [oa, ob] = sample_outcomes(probs[i][j], rng);
    out.at(i, j).add(oa, ob);
  }
  return out;
}

/// E = (N++ + N-- - N+- - N-+) / (N++ + N-- + N+- + N-+). Unprimed detector
/// labels are Alice's (+, -) channels, primed ones Bob's.
inline double correlation_E(const OutcomeCounts& c) {
  const auto total = c.total();
  if (total == 0) throw InsufficientDataError("correlation_E: no coincidences");
  const double num = static_cast<double>(c.pp) + static_cast<double>(c.mm) -
                     static_cast<double>(c.pm) - static_cast<double>(c.mp);
  return num / static_cast<double>(total);
}

/// Binomial standard error of E.
inline double correlation_E_error(const OutcomeCounts& c) {
  const double e = correlation_E(c);
  return std::sqrt(std::max(0.0, 1.0 - e * e) / static_cast<double>(c.total()));
}

inline double s_value(double e00, double e01, double e11, double e10) {
  return e00 + e01 + e11 - e10;
}

struct ChshReport {
  double e00 = 0.0, e01 = 0.0, e11 = 0.0, e10 = 0.0;
  double e00_err = 0.0, e01_err = 0.0, e11_err = 0.0, e10_err = 0.0;
  double s = 0.0;
  double s_err = 0.0;
};

inline ChshReport evaluate(const SettingCounts& c) {
  ChshReport r;
  r.e00 = correlation_E(c.at(kSetting0, kSetting0));
  r.e01 = correlation_E(c.at(kSetting0, kSetting1));
  r.e11 = correlation_E(c.at(kSetting1, kSetting1));
  r.e10 = correlation_E(c.at(kSetting1, kSetting0));
  r.e00_err = correlation_E_error(c.at(kSetting0, kSetting0));
  r.e01_err = correlation_E_error(c.at(kSetting0, kSetting1));
  r.e11_err = correlation_E_error(c.at(kSetting1, kSetting1));
  r.e10_err = correlation_E_error(c.at(kSetting1, kSetting0));
  r.s = s_value(r.e00, r.e01, r.e11, r.e10);
  r.s_err = std::sqrt(r.e00_err * r.e00_err + r.e01_err * r.e01_err + r.e11_err * r.e11_err +
                      r.e10_err * r.e10_err);
  return r;
}

/// Mismatch fraction among coincidences recorded at the parallel settings.
inline double qber_from_parallel(const OutcomeCounts& key_counts) {
  const auto total = key_counts.total();
  if (total == 0) throw InsufficientDataError("qber_from_parallel: no key-setting coincidences");
  return static_cast<double>(key_counts.pm + key_counts.mp) / static_cast<double>(total);
}

/// Pair labeller for the timestamp generator: settings drawn uniformly on the
/// 3 x 3 grid, outcomes from the state model. Basis tags are setting indices.
struct ChshLabeler {
  std::array<std::array<JointProbabilities, 3>, 3> probs{};

  ChshLabeler(const BasisSettings& s, const PairStateModel& m) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) probs[i][j] = joint_probabilities(s.alice[i], s.bob[j], m);
  }

  template <class Rng>
  source::PairLabel operator()(Rng& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, 2);
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    const auto [oa, ob] = sample_outcomes(probs[i][j], rng);
    return {static_cast<std::uint8_t>(i), oa, static_cast<std::uint8_t>(j), ob};
  }
};

inline constexpr std::string_view kCountsHeader = "setting_a,setting_b,n_pp,n_pm,n_mp,n_mm";

inline std::string alice_label(std::size_t i) { return i == kKeySetting ? "Ak" : "A" + std::to_string(i); }
inline std::string bob_label(std::size_t j) { return j == kKeySetting ? "Bk" : "B" + std::to_string(j); }

inline void write_counts(std::ostream& out, const SettingCounts& c) {
  out << kCountsHeader << '\n';
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& k = c.at(i, j);
      out << alice_label(i) << ',' << bob_label(j) << ',' << k.pp << ',' << k.pm << ',' << k.mp
          << ',' << k.mm << '\n';
    }
  }
}

inline SettingCounts read_counts(std::istream& in) {
  SettingCounts c;
  auto index = [](std::string_view label, char side, std::size_t line) -> std::size_t {
    if (label.size() == 2 && label[0] == side) {
      if (label[1] == '0') return 0;
      if (label[1] == '1') return 1;
      if (label[1] == 'k') return 2;
    }
    throw InputError("unknown setting label '" + std::string(label) + "'", line);
  };
  csv::read_rows(in, kCountsHeader, 6, [&](const auto& f, std::size_t line) {
    auto& k = c.at(index(f[0], 'A', line), index(f[1], 'B', line));
    k.pp = csv::parse_number<std::uint64_t>(f[2], line);
    k.pm = csv::parse_number<std::uint64_t>(f[3], line);
    k.mp = csv::parse_number<std::uint64_t>(f[4], line);
    k.mm = csv::parse_number<std::uint64_t>(f[5], line);
  });
  return c;
}

}  // namespace qkdsim::chsh
