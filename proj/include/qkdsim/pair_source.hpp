#pragma once

// SPDC pair-source model: coherence time, combined timing width, the
// detector-convolved second-order correlation g2(tau), and synthetic
// generation of correlated timestamp streams for two receiving nodes.

#include <qkdsim/errors.hpp>
#include <qkdsim/timestamp_stream.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace qkdsim::source {

/// tau_c = 1 / (2 pi dnu)
inline double coherence_time(double bandwidth_hz) {
  if (!(bandwidth_hz > 0.0)) throw DomainError("coherence_time: bandwidth must be positive");
  return 1.0 / (2.0 * std::numbers::pi * bandwidth_hz);
}

/// tau_w = sqrt(2 tau_j^2 + (tau_b / 2)^2)
inline double combined_width(double jitter, double coincidence_bin) {
  if (!(jitter >= 0.0) || !(coincidence_bin >= 0.0)) {
    throw DomainError("combined_width: jitter and bin must be non-negative");
  }
  return std::sqrt(2.0 * jitter * jitter + 0.25 * coincidence_bin * coincidence_bin);
}

struct SourceModel {
  double pair_rate = 5e6;          ///< pairs / s
  double bandwidth = 500e6;        ///< Hz
  double jitter = 100e-12;         ///< detector timing jitter, s
  double coincidence_bin = 1e-9;   ///< s
  double scale = 1.0;              ///< overall g2 prefactor

  double coherence_time() const { return source::coherence_time(bandwidth); }
  double combined_width() const { return source::combined_width(jitter, coincidence_bin); }

  void validate() const {
    if (!(pair_rate > 0.0)) throw DomainError("SourceModel: pair rate must be positive");
    if (!(bandwidth > 0.0)) throw DomainError("SourceModel: bandwidth must be positive");
    if (!(jitter >= 0.0) || !(coincidence_bin >= 0.0)) {
      throw DomainError("SourceModel: jitter and coincidence bin must be non-negative");
    }
  }
};

namespace detail {

/// log(erfc(y)), accurate for large positive y where erfc underflows.
inline double log_erfc(double y) {
  if (y < 10.0) return std::log(std::erfc(y));
  const double inv2 = 1.0 / (y * y);
  const double series =
      1.0 + inv2 * (-0.5 + inv2 * (0.75 + inv2 * (-1.875 + inv2 * 6.5625)));
  return -y * y - std::log(y * std::sqrt(std::numbers::pi)) + std::log(series);
}

}  // namespace detail

/// Detector-convolved second-order correlation:
///   g2(tau) = exp(tau_w / tau_c) [f+(tau) + f-(tau)]
///   f+-(tau) = exp(+-tau / tau_c) [1 -+ erf((tau +- tau_w^2 / tau_c) / (sqrt2 tau_w))]
/// With tau_w = 0 the detector response is a delta and the curve reduces to
/// the bare two-sided exponential 2 exp(-|tau| / tau_c).
inline double g2(double tau, const SourceModel& m) {
  m.validate();
  const double tc = m.coherence_time();
  const double tw = m.combined_width();
  if (tw == 0.0) return m.scale * 2.0 * std::exp(-std::abs(tau) / tc);
  const double root2_tw = std::numbers::sqrt2 * tw;
  const double shift = tw * tw / tc;
  // 1 - erf(y) = erfc(y) and 1 + erf(y) = erfc(-y).
  const double log_plus = tau / tc + detail::log_erfc((tau + shift) / root2_tw);
  const double log_minus = -tau / tc + detail::log_erfc((shift - tau) / root2_tw);
  const double pre = tw / tc;
  return m.scale * (std::exp(pre + log_plus) + std::exp(pre + log_minus));
}

/// Detection efficiency, background and fixed delay of one receive channel.
struct ChannelModel {
  double efficiency = 1.0;       ///< survival probability per photon
  double background_rate = 0.0;  ///< uncorrelated counts / s
  Picoseconds true_delay = 0;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
      throw DomainError("ChannelModel: efficiency must lie in [0, 1]");
    }
    if (!(background_rate >= 0.0)) throw DomainError("ChannelModel: background must be >= 0");
  }
};

/// Basis tags and outcomes assigned to the two photons of one pair.
struct PairLabel {
  std::uint8_t basis_a = 0;
  std::uint8_t outcome_a = 0;
  std::uint8_t basis_b = 0;
  std::uint8_t outcome_b = 0;
};

/// Default labelling: each side picks one of `bases` uniformly; outcomes agree
/// whenever the bases match and are independent otherwise.
struct MatchingBasisLabeler {
  int bases = 2;

  template <class Rng>
  PairLabel operator()(Rng& rng) const {
    std::uniform_int_distribution<int> pick(0, bases - 1);
    std::bernoulli_distribution coin(0.5);
    PairLabel l;
    l.basis_a = static_cast<std::uint8_t>(pick(rng));
    l.basis_b = static_cast<std::uint8_t>(pick(rng));
    l.outcome_a = coin(rng);
    l.outcome_b = l.basis_a == l.basis_b ? l.outcome_a : coin(rng);
    return l;
  }
};

struct GenerationOptions {
  Picoseconds time_bin = 1;  ///< quantisation step of the recorded times
  int background_bases = 2;  ///< basis tags drawn uniformly for background counts
};

struct PairStreams {
  TimestampStream a;
  TimestampStream b;
  std::size_t emitted_pairs = 0;
};

namespace detail {

struct RawEvent {
  double time;  // ps, unquantised
  DetectionEvent event;
};

inline TimestampStream finalize(std::vector<RawEvent>& raw, const char* node,
                                Picoseconds duration, Picoseconds time_bin) {
  std::stable_sort(raw.begin(), raw.end(),
                   [](const RawEvent& l, const RawEvent& r) { return l.time < r.time; });
  TimestampStream s;
  s.node_id = node;
  s.duration = duration;
  s.time_bin = time_bin;
  s.events.reserve(raw.size());
  for (const auto& r : raw) {
    if (r.time < 0.0 || r.time > static_cast<double>(duration)) continue;
    auto t = static_cast<Picoseconds>(std::floor(r.time));
    t -= t % time_bin;
    // Only the earliest photon of a bin is kept.
    if (!s.events.empty() && s.events.back().time == t) continue;
    DetectionEvent e = r.event;
    e.time = t;
    s.events.push_back(e);
  }
  return s;
}

template <class Rng>
void add_background(std::vector<RawEvent>& raw, double rate, double duration_ps,
                    int bases, Rng& rng) {
  if (rate <= 0.0) return;
  std::exponential_distribution<double> gap(rate / kPsPerSecond);
  std::uniform_int_distribution<int> pick(0, std::max(bases, 1) - 1);
  std::bernoulli_distribution coin(0.5);
  for (double t = gap(rng); t < duration_ps; t += gap(rng)) {
    DetectionEvent e;
    e.basis = static_cast<std::uint8_t>(pick(rng));
    e.outcome = coin(rng);
    raw.push_back({t, e});
  }
}

}  // namespace detail

/// Generates two correlated detection streams over `duration` seconds.
/// Pair emission is a Poisson process at the model's pair rate. Each photon
/// survives its channel independently, picks up Gaussian timing noise of
/// standard deviation `model.jitter`, and is shifted by the channel delay.
/// Uniform background is merged in before quantisation. The result is a
/// pure function of the two channel seeds.
template <class Labeler = MatchingBasisLabeler>
PairStreams generate_pair_events(const SourceModel& model, const ChannelModel& ch_a,
                                 const ChannelModel& ch_b, double duration,
                                 const GenerationOptions& opts = {},
                                 Labeler labeler = {}) {
  model.validate();
  ch_a.validate();
  ch_b.validate();
  if (!(duration > 0.0)) throw DomainError("generate_pair_events: duration must be positive");
  if (opts.time_bin <= 0) throw DomainError("generate_pair_events: time bin must be positive");

  const double duration_ps = duration * kPsPerSecond;
  const auto duration_int = static_cast<Picoseconds>(std::floor(duration_ps));

  std::seed_seq pair_seq{ch_a.rng_seed, ch_b.rng_seed, std::uint64_t{0x5eed}};
  std::mt19937_64 pair_rng(pair_seq);
  std::mt19937_64 rng_a(ch_a.rng_seed);
  std::mt19937_64 rng_b(ch_b.rng_seed ^ 0x9e3779b97f4a7c15ULL);

  const double jitter_ps = model.jitter * kPsPerSecond;
  std::normal_distribution<double> noise(0.0, jitter_ps > 0.0 ? jitter_ps : 1.0);
  std::bernoulli_distribution keep_a(ch_a.efficiency);
  std::bernoulli_distribution keep_b(ch_b.efficiency);
  std::exponential_distribution<double> gap(model.pair_rate / kPsPerSecond);

  std::vector<detail::RawEvent> raw_a;
  std::vector<detail::RawEvent> raw_b;
  std::size_t emitted = 0;
  for (double t = gap(pair_rng); t < duration_ps; t += gap(pair_rng)) {
    ++emitted;
    const PairLabel label = labeler(pair_rng);
    // Draw every variate unconditionally so the streams stay aligned.
    const bool a_alive = keep_a(rng_a);
    const double a_noise = jitter_ps > 0.0 ? noise(rng_a) : 0.0;
    const bool b_alive = keep_b(rng_b);
    const double b_noise = jitter_ps > 0.0 ? noise(rng_b) : 0.0;
    if (a_alive) {
      raw_a.push_back({t + a_noise + static_cast<double>(ch_a.true_delay),
                       {0, label.basis_a, label.outcome_a}});
    }
    if (b_alive) {
      raw_b.push_back({t + b_noise + static_cast<double>(ch_b.true_delay),
                       {0, label.basis_b, label.outcome_b}});
    }
  }
  detail::add_background(raw_a, ch_a.background_rate, duration_ps, opts.background_bases,
                         rng_a);
  detail::add_background(raw_b, ch_b.background_rate, duration_ps, opts.background_bases,
                         rng_b);

  PairStreams out;
  out.a = detail::finalize(raw_a, "a", duration_int, opts.time_bin);
  out.b = detail::finalize(raw_b, "b", duration_int, opts.time_bin);
  out.emitted_pairs = emitted;
  return out;
}

}  // namespace qkdsim::source
