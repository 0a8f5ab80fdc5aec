#pragma once

// End-to-end compositions driven by a Scenario: the link rate chain, the
// two-party key generation run and the datasets behind the figures.

#include <qkdsim/beam_optics.hpp>
#include <qkdsim/chsh.hpp>
#include <qkdsim/coincidence.hpp>
#include <qkdsim/key_pipeline.hpp>
#include <qkdsim/pair_source.hpp>
#include <qkdsim/scenario.hpp>
#include <qkdsim/timing_side_channel.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace qkdsim::pipeline {

using scenario::Scenario;

struct RateStage {
  std::string name;
  double value = 0.0;
  std::string unit;
};

struct RateChainReport {
  double pair_rate_hz = 0.0;
  double coincidence_probability = 0.0;
  double link_rate_hz = 0.0;
  double window_factor = 0.0;
  double detected_rate_hz = 0.0;
  double accidental_rate_hz = 0.0;
  double sifted_rate_hz = 0.0;
  double expected_qber = 0.0;
  double sifted_bits = 0.0;
  double sample_bits = 0.0;
  double corrected_bits = 0.0;
  double final_bits = 0.0;

  std::vector<RateStage> stages() const {
    return {{"pair_rate", pair_rate_hz, "1/s"},
            {"link_transmitted_rate", link_rate_hz, "1/s"},
            {"detected_coincidence_rate", detected_rate_hz, "1/s"},
            {"sifted_rate", sifted_rate_hz, "1/s"},
            {"corrected_length", corrected_bits, "bits/run"},
            {"final_key_length", final_bits, "bits/run"}};
  }
};

namespace detail {

inline optics::PointingJitter jitter_of(const Scenario& s) {
  optics::PointingJitter j;
  j.sigma_rad = s.link.pointing_sigma_rad;
  j.samples = s.link.pointing_samples;
  j.seed = scenario::derive_seed(s.seed, scenario::kSeedPointing);
  j.common_offset = true;
  return j;
}

/// Mean single-receiver capture under the same pointing draws as the
/// coincidence average.
inline double mean_capture(const optics::BeamGeometry& g, double radius,
                           const optics::PointingJitter& j) {
  if (j.sigma_rad == 0.0) return optics::capture_probability(g, optics::ApertureSpec(radius));
  std::mt19937_64 rng(j.seed);
  std::normal_distribution<double> normal(0.0, j.sigma_rad);
  double sum = 0.0;
  for (std::size_t i = 0; i < j.samples; ++i) {
    const auto d = optics::pointing_offset(g.distance(), {normal(rng), normal(rng)});
    if (!j.common_offset) {
      normal(rng);
      normal(rng);
    }
    sum += optics::capture_probability(g, optics::ApertureSpec(radius, d));
  }
  return sum / static_cast<double>(j.samples);
}

inline double key_setting_qber(const Scenario& s) {
  const auto p = chsh::joint_probabilities(s.state.angles.alice[chsh::kKeySetting],
                                           s.state.angles.bob[chsh::kKeySetting], s.state.model());
  return (p.pm + p.mp) / (p.pp + p.pm + p.mp + p.mm);
}

}  // namespace detail

/// Pair rate -> coincidence capture through the link -> detector efficiency
/// and timing window -> key-setting sifting -> sampling, reconciliation and
/// privacy amplification arithmetic.
inline RateChainReport run_linkbudget(const Scenario& s) {
  s.validate();
  RateChainReport r;
  const optics::BeamGeometry g(s.link.wavelength_m, s.link.waist_m, s.link.distance_m);
  const double radius = s.link.aperture_diameter_m / 2.0;
  const auto jitter = detail::jitter_of(s);

  r.pair_rate_hz = s.source.pair_rate_hz;
  r.coincidence_probability =
      optics::mean_coincidence_probability(g, radius, radius, s.link.mode, jitter);
  r.link_rate_hz = r.pair_rate_hz * r.coincidence_probability;

  // Relative arrival time of a pair is Gaussian with sd sqrt2 * jitter.
  const double jitter_ps = s.source.jitter_ps;
  const double half_window = static_cast<double>(s.protocol.window_ps) / 2.0;
  r.window_factor = jitter_ps > 0.0 ? std::erf(half_window / (2.0 * jitter_ps)) : 1.0;
  r.detected_rate_hz =
      r.link_rate_hz * s.channel_a.efficiency * s.channel_b.efficiency * r.window_factor;

  const double cap = detail::mean_capture(g, radius, jitter);
  const double singles_a = r.pair_rate_hz * cap * s.channel_a.efficiency + s.channel_a.background_hz;
  const double singles_b = r.pair_rate_hz * cap * s.channel_b.efficiency + s.channel_b.background_hz;
  r.accidental_rate_hz = coincidence::accidental_rate(
      singles_a, singles_b, static_cast<double>(s.protocol.window_ps) * 1e-12);

  // Both sides pick the key setting with probability 1/3 each.
  const double key_fraction = 1.0 / 9.0;
  r.sifted_rate_hz = r.detected_rate_hz * key_fraction;

  const double q_state = detail::key_setting_qber(s);
  const double total = r.detected_rate_hz + r.accidental_rate_hz;
  r.expected_qber = total > 0.0 ? (r.detected_rate_hz * q_state + 0.5 * r.accidental_rate_hz) / total
                                : 0.0;

  r.sifted_bits = std::floor(r.sifted_rate_hz * s.protocol.duration_s);
  r.sample_bits = std::round(s.protocol.qber_sample_fraction * r.sifted_bits);
  r.corrected_bits = r.sifted_bits - r.sample_bits;
  const double leak_ec =
      std::ceil(s.protocol.cascade_efficiency * keys::binary_entropy(r.expected_qber) * r.corrected_bits);
  r.final_bits = std::max(0.0, r.corrected_bits - leak_ec - r.sample_bits -
                                   static_cast<double>(s.protocol.security_margin_bits));
  return r;
}

inline source::ChannelModel channel_model(const scenario::ChannelConfig& c, std::uint64_t seed) {
  return {c.efficiency, c.background_hz, c.delay_ps, seed};
}

inline source::PairStreams generate_streams(const Scenario& s, double duration_s) {
  s.validate();
  source::GenerationOptions opts;
  opts.time_bin = s.source.time_bin_ps;
  opts.background_bases = 3;
  const chsh::ChshLabeler labeler(s.state.angles, s.state.model());
  return source::generate_pair_events(
      s.source.model(), channel_model(s.channel_a, scenario::derive_seed(s.seed, scenario::kSeedChannelA)),
      channel_model(s.channel_b, scenario::derive_seed(s.seed, scenario::kSeedChannelB)), duration_s,
      opts, labeler);
}

/// Events with time < span, re-windowed to [0, span].
inline TimestampStream prefix(const TimestampStream& s, Picoseconds span) {
  TimestampStream out;
  out.node_id = s.node_id;
  out.time_bin = s.time_bin;
  out.duration = std::min(span, s.duration);
  for (const auto& e : s.events) {
    if (e.time >= out.duration) break;
    out.events.push_back(e);
  }
  return out;
}

inline coincidence::CorrelationResult correlate_streams(const TimestampStream& a,
                                                        const TimestampStream& b,
                                                        Picoseconds bin, Picoseconds max_lag) {
  const auto ba = coincidence::bin_timestamps(a, bin);
  const auto bb = coincidence::bin_timestamps(b, bin);
  return coincidence::cross_correlate_fft(ba, bb, max_lag);
}

/// Median arrival difference of the pairs found around a bin-level delay.
inline Picoseconds refine_delay(const TimestampStream& a, const TimestampStream& b,
                                Picoseconds coarse, Picoseconds bin) {
  const auto c = coincidence::extract_coincidences(a, b, coarse, 4 * bin);
  if (c.pairs.empty()) return coarse;
  std::vector<Picoseconds> d;
  d.reserve(c.pairs.size());
  for (auto [i, j] : c.pairs) d.push_back(b.events[j].time - a.events[i].time);
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

struct KeygenResult {
  std::size_t emitted_pairs = 0;
  std::size_t events_a = 0;
  std::size_t events_b = 0;
  Picoseconds coarse_delay = 0;
  Picoseconds delay = 0;
  double delay_significance = 0.0;
  std::size_t coincidences = 0;
  chsh::SettingCounts counts;
  chsh::ChshReport chsh;
  std::size_t sifted_bits = 0;
  double sifted_mismatch = 0.0;  ///< true error fraction, not visible to the parties
  double qber_estimate = 0.0;
  std::size_t sample_bits = 0;
  std::size_t corrected_bits = 0;
  std::vector<keys::PassStats> cascade_passes;
  std::size_t cascade_corrections = 0;
  keys::LeakageLedger ledger;
  keys::KeyMaterial alice;
  keys::KeyMaterial bob;
};

/// Full two-party run. Throws SecurityAbort when the CHSH value falls below
/// the configured threshold and ReconciliationError when Cascade fails.
inline KeygenResult run_keygen(const Scenario& s) {
  KeygenResult r;
  const auto streams = generate_streams(s, s.protocol.duration_s);
  r.emitted_pairs = streams.emitted_pairs;
  r.events_a = streams.a.size();
  r.events_b = streams.b.size();

  const auto span = static_cast<Picoseconds>(s.protocol.correlation_span_s * kPsPerSecond);
  const auto corr = correlate_streams(prefix(streams.a, span), prefix(streams.b, span),
                                      s.protocol.bin_ps, s.protocol.max_lag_ps);
  const auto est = coincidence::find_delay(corr);
  r.coarse_delay = est.delay;
  r.delay_significance = est.significance;
  r.delay = refine_delay(streams.a, streams.b, est.delay, s.protocol.bin_ps);

  const auto co = coincidence::extract_coincidences(streams.a, streams.b, r.delay, s.protocol.window_ps);
  r.coincidences = co.pairs.size();
  std::vector<keys::RawKeyRecord> ra, rb;
  ra.reserve(co.pairs.size());
  rb.reserve(co.pairs.size());
  for (auto [i, j] : co.pairs) {
    const auto& ea = streams.a.events[i];
    const auto& eb = streams.b.events[j];
    ra.push_back({ea.basis, ea.outcome});
    rb.push_back({eb.basis, eb.outcome});
    r.counts.at(ea.basis, eb.basis).add(ea.outcome, eb.outcome);
  }
  r.chsh = chsh::evaluate(r.counts);
  if (r.chsh.s < s.protocol.s_threshold) {
    throw SecurityAbort("CHSH value S = " + csv::format_double(r.chsh.s) + " is below the threshold " +
                        csv::format_double(s.protocol.s_threshold));
  }

  auto [ka, kb] = keys::sift(ra, rb, keys::SiftRule{std::uint8_t{chsh::kKeySetting}});
  r.sifted_bits = ka.length();
  r.sifted_mismatch = keys::mismatch_fraction(ka.bits, kb.bits);

  keys::PublicChannel channel;
  const auto q = keys::estimate_qber(ka.bits, kb.bits, s.protocol.qber_sample_fraction,
                                     scenario::derive_seed(s.seed, scenario::kSeedQberSample), channel);
  r.qber_estimate = q.qber;
  r.sample_bits = q.sample_size;

  keys::CascadeParams cp;
  cp.passes = s.protocol.cascade_passes;
  cp.shuffle_seed = scenario::derive_seed(s.seed, scenario::kSeedCascade);
  const auto cr = keys::cascade_correct(q.remaining_a, q.remaining_b, q.qber, cp, channel);
  r.corrected_bits = cr.corrected.size();
  r.cascade_passes = cr.passes;
  r.cascade_corrections = cr.corrections;
  r.ledger = channel.ledger();

  const auto hash_seed = scenario::derive_seed(s.seed, scenario::kSeedHash);
  r.alice = {keys::KeyStage::Final,
             keys::privacy_amplify(q.remaining_a, r.ledger, s.protocol.security_margin_bits, hash_seed),
             q.qber};
  r.bob = {keys::KeyStage::Final,
           keys::privacy_amplify(cr.corrected, r.ledger, s.protocol.security_margin_bits, hash_seed),
           q.qber};
  return r;
}

struct Fig3Row {
  double offset_m = 0.0;
  double p_anticorrelated = 0.0;
  double p_inverted = 0.0;
};

/// Coincidence probability against a common transverse pointing offset of
/// both receivers, for the plain and the inverted relay.
inline std::vector<Fig3Row> figure3(const Scenario& s, std::size_t points = 21) {
  s.validate();
  const optics::BeamGeometry g(s.link.wavelength_m, s.link.waist_m, s.link.distance_m);
  const double w = g.beam_width();
  const double radius = s.link.aperture_diameter_m / 2.0;
  std::vector<Fig3Row> rows;
  for (std::size_t k = 0; k < points; ++k) {
    const double d = points > 1 ? 3.0 * w * static_cast<double>(k) / static_cast<double>(points - 1) : 0.0;
    const optics::ApertureSpec ap(radius, {d, 0.0});
    rows.push_back({d, optics::coincidence_probability(g, ap, ap, optics::CorrelationMode::AntiCorrelated),
                    optics::coincidence_probability(g, ap, ap, optics::CorrelationMode::Inverted)});
  }
  return rows;
}

struct G2Row {
  double bandwidth_hz = 0.0;
  double tau_ps = 0.0;
  double g2 = 0.0;
};

inline std::vector<G2Row> g2_curve(const source::SourceModel& m, double span_ps, double step_ps) {
  std::vector<G2Row> rows;
  const auto n = static_cast<long>(std::floor(span_ps / step_ps + 1e-9));
  for (long k = -n; k <= n; ++k) {
    const double tau = static_cast<double>(k) * step_ps;
    rows.push_back({m.bandwidth, tau, source::g2(tau * 1e-12, m)});
  }
  return rows;
}

/// g2 curves for every bandwidth of the sweep.
inline std::vector<G2Row> figure4(const Scenario& s) {
  s.validate();
  std::vector<G2Row> rows;
  for (double bw : s.source.bandwidth_sweep_hz) {
    auto m = s.source.model();
    m.bandwidth = bw;
    auto c = g2_curve(m, s.source.tau_span_ps, s.source.tau_step_ps);
    rows.insert(rows.end(), c.begin(), c.end());
  }
  return rows;
}

/// Lag histogram of generated streams over the correlation span.
inline coincidence::CorrelationResult figure5(const Scenario& s) {
  const auto streams = generate_streams(s, s.protocol.correlation_span_s);
  return correlate_streams(streams.a, streams.b, s.protocol.bin_ps, s.protocol.max_lag_ps);
}

/// Two detector histograms whose centroids differ by dt0.
inline std::vector<sidechannel::DetectorHistogram> detector_pair(const scenario::SideChannelConfig& c,
                                                                 Picoseconds dt0) {
  const double centre = 6.0 * c.sigma_ps;
  sidechannel::DetectorHistogram profile;
  if (c.profile == "tail") {
    const auto len = static_cast<Picoseconds>(std::ceil(12.0 * c.sigma_ps + 20.0 * c.tail_ps));
    profile = sidechannel::exponential_tail_profile(c.sigma_ps, c.tail_ps, centre, len);
  } else {
    const auto len = static_cast<Picoseconds>(std::ceil(12.0 * c.sigma_ps));
    profile = sidechannel::gaussian_profile(c.sigma_ps, centre, len);
  }
  auto [d0, d1] = sidechannel::make_shifted_histograms(profile, dt0);
  return {std::move(d0), std::move(d1)};
}

inline sidechannel::MiCurve sidechannel_curve(const Scenario& s, Picoseconds dt0) {
  s.validate();
  const auto h = detector_pair(s.sidechannel, dt0);
  return sidechannel::mi_vs_binwidth(sidechannel::OutcomePrior::uniform(2), h,
                                     s.sidechannel.bin_widths_ps, s.sidechannel.start_offsets_ps);
}

}  // namespace qkdsim::pipeline
