#pragma once

// Leakage of measurement outcomes through publicly announced detection times.
// Each outcome x has its own detector timing histogram d_x(t); announcing
// binned times leaks I(X; T) = H(X) + H(T) - H(X, T) bits per detection.
// All entropies are discrete entropies of bin masses under a BinningScheme.

#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>
#include <qkdsim/pair_source.hpp>
#include <qkdsim/timestamp_stream.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

namespace qkdsim::sidechannel {

/// Photon counting density sampled on a uniform 1 ps grid starting at `origin`.
/// Each sample holds the probability mass of its picosecond.
struct DetectorHistogram {
  Picoseconds origin = 0;
  std::vector<double> density;

  std::size_t size() const { return density.size(); }
  double total() const { return std::accumulate(density.begin(), density.end(), 0.0); }
  double centroid() const {
    double m = 0.0, w = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) {
      m += density[i] * static_cast<double>(origin + static_cast<Picoseconds>(i));
      w += density[i];
    }
    return m / w;
  }
  void normalize() {
    const double t = total();
    if (!(t > 0.0)) throw DomainError("DetectorHistogram: zero total mass");
    for (double& d : density) d /= t;
  }
};

/// Gaussian response of width sigma centred at `centroid`, on [0, length).
inline DetectorHistogram gaussian_profile(double sigma_ps, double centroid_ps,
                                          Picoseconds length_ps) {
  if (!(sigma_ps > 0.0) || length_ps <= 0) throw DomainError("gaussian_profile: bad parameters");
  DetectorHistogram h;
  h.density.resize(static_cast<std::size_t>(length_ps));
  for (std::size_t i = 0; i < h.density.size(); ++i) {
    const double z = (static_cast<double>(i) - centroid_ps) / sigma_ps;
    h.density[i] = std::exp(-0.5 * z * z);
  }
  h.normalize();
  return h;
}

/// Gaussian convolved with a one-sided exponential tail of time constant
/// `tail_ps` (exponentially modified Gaussian); `peak_ps` is the Gaussian mean.
inline DetectorHistogram exponential_tail_profile(double sigma_ps, double tail_ps, double peak_ps,
                                                  Picoseconds length_ps) {
  if (!(sigma_ps > 0.0) || !(tail_ps > 0.0) || length_ps <= 0) {
    throw DomainError("exponential_tail_profile: bad parameters");
  }
  const double lambda = 1.0 / tail_ps;
  DetectorHistogram h;
  h.density.resize(static_cast<std::size_t>(length_ps));
  for (std::size_t i = 0; i < h.density.size(); ++i) {
    const double x = static_cast<double>(i);
    const double log_d = 0.5 * lambda * (2.0 * peak_ps + lambda * sigma_ps * sigma_ps - 2.0 * x) +
                         source::detail::log_erfc((peak_ps + lambda * sigma_ps * sigma_ps - x) /
                                                  (std::sqrt(2.0) * sigma_ps));
    h.density[i] = std::exp(log_d);
  }
  h.normalize();
  return h;
}

/// Two detectors with the same response, the second delayed by `delta_t0`.
/// Both are returned on a common grid extended by the shift.
inline std::pair<DetectorHistogram, DetectorHistogram> make_shifted_histograms(
    const DetectorHistogram& profile, Picoseconds delta_t0) {
  if (delta_t0 < 0) throw DomainError("make_shifted_histograms: shift must be non-negative");
  if (delta_t0 > static_cast<Picoseconds>(profile.size())) {
    throw DomainError("make_shifted_histograms: shift exceeds the histogram grid");
  }
  const auto shift = static_cast<std::size_t>(delta_t0);
  DetectorHistogram d0{profile.origin, profile.density};
  d0.density.resize(profile.size() + shift, 0.0);
  DetectorHistogram d1{profile.origin, std::vector<double>(shift, 0.0)};
  d1.density.insert(d1.density.end(), profile.density.begin(), profile.density.end());
  return {std::move(d0), std::move(d1)};
}

struct OutcomePrior {
  std::vector<double> p;

  static OutcomePrior uniform(std::size_t n) { return {std::vector<double>(n, 1.0 / static_cast<double>(n))}; }

  void validate() const {
    if (p.empty()) throw DomainError("OutcomePrior: empty");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw DomainError("OutcomePrior: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DomainError("OutcomePrior: probabilities must sum to 1");
  }
};

struct BinningScheme {
  Picoseconds bin_width = 1;
  Picoseconds start_offset = 0;
};

namespace detail {

inline Picoseconds floor_div(Picoseconds a, Picoseconds b) {
  Picoseconds q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline double entropy_of(std::span<const double> masses) {
  double h = 0.0;
  for (double m : masses) {
    if (m > 0.0) h -= m * std::log2(m);
  }
  return h;
}

}  // namespace detail

/// masses[x][k]: probability mass of histogram x in bin k. Bins are indexed
/// floor((t - start_offset) / bin_width) and shifted to start at zero.
inline std::vector<std::vector<double>> bin_masses(std::span<const DetectorHistogram> hists,
                                                   const BinningScheme& b) {
  if (b.bin_width <= 0) throw DomainError("BinningScheme: bin width must be positive");
  if (hists.empty()) throw UsageError("bin_masses: no histograms");
  const Picoseconds origin = hists.front().origin;
  const std::size_t len = hists.front().size();
  for (const auto& h : hists) {
    if (h.origin != origin || h.size() != len) {
      throw UsageError("bin_masses: histograms must share one grid");
    }
  }
  if (len == 0) return std::vector<std::vector<double>>(hists.size());
  const Picoseconds first = detail::floor_div(origin - b.start_offset, b.bin_width);
  const Picoseconds last =
      detail::floor_div(origin + static_cast<Picoseconds>(len) - 1 - b.start_offset, b.bin_width);
  const auto nbins = static_cast<std::size_t>(last - first + 1);
  std::vector<std::vector<double>> out(hists.size(), std::vector<double>(nbins, 0.0));
  // Walk the grid bin by bin rather than dividing per sample.
  for (std::size_t x = 0; x < hists.size(); ++x) {
    const auto& d = hists[x].density;
    std::size_t i = 0;
    for (std::size_t k = 0; k < nbins && i < len; ++k) {
      const Picoseconds bin_end = (first + static_cast<Picoseconds>(k) + 1) * b.bin_width + b.start_offset;
      double m = 0.0;
      while (i < len && origin + static_cast<Picoseconds>(i) < bin_end) m += d[i++];
      out[x][k] = m;
    }
  }
  return out;
}

inline double entropy_X(const OutcomePrior& prior) {
  prior.validate();
  return detail::entropy_of(prior.p);
}

/// Entropy of a joint mass table p(x, k); rows are outcomes.
inline double joint_entropy_table(const std::vector<std::vector<double>>& joint) {
  double h = 0.0;
  for (const auto& row : joint) h += detail::entropy_of(row);
  return h;
}

/// I(X; K) for a joint mass table, clamped at zero against rounding.
inline double mutual_information_table(const std::vector<std::vector<double>>& joint) {
  std::vector<double> px;
  std::vector<double> pk;
  for (const auto& row : joint) {
    px.push_back(std::accumulate(row.begin(), row.end(), 0.0));
    if (pk.size() < row.size()) pk.resize(row.size(), 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) pk[k] += row[k];
  }
  const double mi = detail::entropy_of(px) + detail::entropy_of(pk) - joint_entropy_table(joint);
  return std::max(mi, 0.0);
}

namespace detail {

inline std::vector<std::vector<double>> joint_table(const OutcomePrior& prior,
                                                    std::span<const DetectorHistogram> hists,
                                                    const BinningScheme& b) {
  prior.validate();
  if (prior.p.size() != hists.size()) {
    throw UsageError("side channel: prior and histogram counts differ");
  }
  auto m = bin_masses(hists, b);
  for (std::size_t x = 0; x < m.size(); ++x)
    for (double& v : m[x]) v *= prior.p[x];
  return m;
}

}  // namespace detail

/// H(T) of the prior-weighted mixture of the binned histograms.
inline double entropy_T(const OutcomePrior& prior, std::span<const DetectorHistogram> hists,
                        const BinningScheme& b) {
  const auto joint = detail::joint_table(prior, hists, b);
  std::vector<double> mix(joint.front().size(), 0.0);
  for (const auto& row : joint)
    for (std::size_t k = 0; k < row.size(); ++k) mix[k] += row[k];
  return detail::entropy_of(mix);
}

/// H(X, T) over the joint masses p0(x) * (bin mass of d_x).
inline double joint_entropy(const OutcomePrior& prior, std::span<const DetectorHistogram> hists,
                            const BinningScheme& b) {
  return joint_entropy_table(detail::joint_table(prior, hists, b));
}

inline double mutual_information(const OutcomePrior& prior,
                                 std::span<const DetectorHistogram> hists,
                                 const BinningScheme& b) {
  const double mi = entropy_X(prior) + entropy_T(prior, hists, b) - joint_entropy(prior, hists, b);
  return std::max(mi, 0.0);
}

struct MiPoint {
  Picoseconds bin_width = 0;
  Picoseconds start_offset = 0;
  double mi_bits = 0.0;
};

struct MiSummary {
  Picoseconds bin_width = 0;
  double min_bits = 0.0;
  double max_bits = 0.0;
  Picoseconds argmin_offset = 0;
  Picoseconds argmax_offset = 0;
};

struct MiCurve {
  std::vector<MiPoint> points;
  std::vector<MiSummary> per_width;
};

/// Evaluates MI on every (bin width, start offset) pair.
inline MiCurve mi_vs_binwidth(const OutcomePrior& prior, std::span<const DetectorHistogram> hists,
                              std::span<const Picoseconds> widths,
                              std::span<const Picoseconds> offsets) {
  if (widths.empty() || offsets.empty()) throw UsageError("mi_vs_binwidth: empty grid");
  MiCurve c;
  for (Picoseconds w : widths) {
    MiSummary s;
    s.bin_width = w;
    s.min_bits = std::numeric_limits<double>::infinity();
    s.max_bits = -std::numeric_limits<double>::infinity();
    for (Picoseconds o : offsets) {
      const double mi = mutual_information(prior, hists, BinningScheme{w, o});
      c.points.push_back({w, o, mi});
      if (mi < s.min_bits) {
        s.min_bits = mi;
        s.argmin_offset = o;
      }
      if (mi > s.max_bits) {
        s.max_bits = mi;
        s.argmax_offset = o;
      }
    }
    c.per_width.push_back(s);
  }
  return c;
}

inline constexpr std::string_view kCurveHeader = "bin_width_ps,start_offset_ps,mi_bits";
inline constexpr std::string_view kDensityHeader = "t_ps,density";

inline void write_curve(std::ostream& out, const MiCurve& c) {
  out << kCurveHeader << '\n';
  for (const auto& p : c.points) {
    out << p.bin_width << ',' << p.start_offset << ',' << csv::format_double(p.mi_bits) << '\n';
  }
}

inline std::vector<MiPoint> read_curve(std::istream& in) {
  std::vector<MiPoint> pts;
  csv::read_rows(in, kCurveHeader, 3, [&](const auto& f, std::size_t line) {
    pts.push_back({csv::parse_number<Picoseconds>(f[0], line),
                   csv::parse_number<Picoseconds>(f[1], line), csv::parse_number<double>(f[2], line)});
  });
  return pts;
}

inline void write_density(std::ostream& out, const DetectorHistogram& h) {
  out << kDensityHeader << '\n';
  for (std::size_t i = 0; i < h.size(); ++i) {
    out << h.origin + static_cast<Picoseconds>(i) << ',' << csv::format_double(h.density[i]) << '\n';
  }
}

/// Reads a density table; rows must sit on consecutive picoseconds.
inline DetectorHistogram read_density(std::istream& in) {
  DetectorHistogram h;
  bool first = true;
  csv::read_rows(in, kDensityHeader, 2, [&](const auto& f, std::size_t line) {
    const auto t = csv::parse_number<Picoseconds>(f[0], line);
    const auto d = csv::parse_number<double>(f[1], line);
    if (first) {
      h.origin = t;
      first = false;
    } else if (t != h.origin + static_cast<Picoseconds>(h.size())) {
      throw InputError("density rows must be on a contiguous 1 ps grid", line);
    }
    if (!(d >= 0.0)) throw InputError("density must be non-negative", line);
    h.density.push_back(d);
  });
  return h;
}

}  // namespace qkdsim::sidechannel
