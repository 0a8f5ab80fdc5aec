#pragma once

// Timestamp binning, lag cross-correlation (dense time domain and FFT),
// delay recovery and coincidence extraction between two detection streams.

#include <qkdsim/csv.hpp>
#include <qkdsim/errors.hpp>
#include <qkdsim/timestamp_stream.hpp>

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qkdsim::coincidence {

/// Dense per-bin occupancy; bin i covers [origin + i*bin_size, origin + (i+1)*bin_size).
struct BinnedSeries {
  Picoseconds bin_size = 1;
  Picoseconds origin = 0;
  std::vector<std::uint8_t> counts;

  std::size_t size() const { return counts.size(); }
  std::size_t occupied() const {
    return static_cast<std::size_t>(std::count(counts.begin(), counts.end(), 1));
  }
};

inline BinnedSeries bin_timestamps(const TimestampStream& stream, Picoseconds bin_size,
                                   Picoseconds origin = 0) {
  if (bin_size <= 0) throw DomainError("bin_timestamps: bin size must be positive");
  BinnedSeries out;
  out.bin_size = bin_size;
  out.origin = origin;
  const Picoseconds span = std::max<Picoseconds>(stream.duration - origin, 0);
  std::size_t n = static_cast<std::size_t>((span + bin_size - 1) / bin_size);
  if (!stream.empty() && stream.events.back().time >= origin) {
    n = std::max(n, static_cast<std::size_t>((stream.events.back().time - origin) / bin_size) + 1);
  }
  out.counts.assign(n, 0);
  for (const auto& e : stream.events) {
    if (e.time < origin) continue;
    out.counts[static_cast<std::size_t>((e.time - origin) / bin_size)] = 1;
  }
  return out;
}

struct CorrelationResult {
  Picoseconds bin_size = 1;
  std::vector<Picoseconds> lags;
  std::vector<std::int64_t> histogram;
  Picoseconds recovered_delay = 0;
  std::int64_t peak_count = 0;
  double significance = 0.0;
  Picoseconds coincidence_window = 0;
};

struct DelayEstimate {
  Picoseconds delay = 0;
  double significance = 0.0;
  std::int64_t peak_count = 0;
};

/// Lag of the histogram maximum; ties go to the smallest |lag|, then to the
/// smaller signed lag. Significance is the peak over the median of the other
/// bins (infinite when that median is zero).
inline DelayEstimate find_delay(const CorrelationResult& r) {
  if (r.histogram.empty()) throw UsageError("find_delay: empty histogram");
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.histogram.size(); ++i) {
    const auto c = r.histogram[i];
    const auto b = r.histogram[best];
    if (c > b) {
      best = i;
    } else if (c == b) {
      const auto li = std::abs(r.lags[i]);
      const auto lb = std::abs(r.lags[best]);
      if (li < lb || (li == lb && r.lags[i] < r.lags[best])) best = i;
    }
  }
  if (r.histogram[best] == 0) throw NoPeakError("find_delay: histogram has no counts");

  std::vector<std::int64_t> rest;
  rest.reserve(r.histogram.size());
  for (std::size_t i = 0; i < r.histogram.size(); ++i) {
    if (i != best) rest.push_back(r.histogram[i]);
  }
  double median = 0.0;
  if (!rest.empty()) {
    const std::size_t mid = rest.size() / 2;
    std::nth_element(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(mid), rest.end());
    median = static_cast<double>(rest[mid]);
    if (rest.size() % 2 == 0) {
      const auto lower = *std::max_element(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(mid));
      median = 0.5 * (median + static_cast<double>(lower));
    }
  }
  DelayEstimate d;
  d.delay = r.lags[best];
  d.peak_count = r.histogram[best];
  d.significance = median > 0.0 ? static_cast<double>(d.peak_count) / median
                                : std::numeric_limits<double>::infinity();
  return d;
}

/// Default search range: half the longer series, capped at 2^20 bins.
inline Picoseconds default_max_lag(const BinnedSeries& a, const BinnedSeries& b) {
  const std::size_t half = std::max(a.size(), b.size()) / 2;
  const std::size_t bins = std::min<std::size_t>(half, std::size_t{1} << 20);
  return static_cast<Picoseconds>(bins) * a.bin_size;
}

namespace detail {

inline void check_compatible(const BinnedSeries& a, const BinnedSeries& b) {
  if (a.bin_size != b.bin_size) throw UsageError("cross-correlation: bin sizes differ");
  if (a.origin != b.origin) throw UsageError("cross-correlation: series origins differ");
}

inline std::int64_t lag_bins(const BinnedSeries& a, Picoseconds max_lag) {
  if (max_lag < 0) throw UsageError("cross-correlation: max_lag must be non-negative");
  return max_lag / a.bin_size;
}

inline CorrelationResult make_result(const BinnedSeries& a, std::int64_t lmax) {
  CorrelationResult r;
  r.bin_size = a.bin_size;
  r.coincidence_window = a.bin_size;
  const auto n = static_cast<std::size_t>(2 * lmax + 1);
  r.lags.resize(n);
  r.histogram.assign(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    r.lags[k] = (static_cast<std::int64_t>(k) - lmax) * a.bin_size;
  }
  return r;
}

inline void annotate_peak(CorrelationResult& r) {
  const bool any = std::any_of(r.histogram.begin(), r.histogram.end(),
                               [](std::int64_t c) { return c != 0; });
  if (!any) return;
  const auto d = find_delay(r);
  r.recovered_delay = d.delay;
  r.peak_count = d.peak_count;
  r.significance = d.significance;
}

// FFTW's planner is not re-entrant.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> fftw_alloc(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * n));
  if (p == nullptr) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

class Plan {
 public:
  explicit Plan(fftw_plan p) : plan_(p) {
    if (plan_ == nullptr) throw Error("FFTW planner failed");
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

inline std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

}  // namespace detail

/// Exact lag histogram h[l] = sum_i a[i] b[i + l] for |l| <= max_lag / bin.
/// Quadratic cost; serves as the reference for the FFT path.
inline CorrelationResult cross_correlate_direct(const BinnedSeries& a, const BinnedSeries& b,
                                                Picoseconds max_lag) {
  detail::check_compatible(a, b);
  const std::int64_t lmax = detail::lag_bins(a, max_lag);
  auto r = detail::make_result(a, lmax);
  const auto na = static_cast<std::int64_t>(a.size());
  const auto nb = static_cast<std::int64_t>(b.size());
  const std::uint8_t* pa = a.counts.data();
  const std::uint8_t* pb = b.counts.data();
  for (std::int64_t l = -lmax; l <= lmax; ++l) {
    const std::int64_t lo = std::max<std::int64_t>(0, -l);
    const std::int64_t hi = std::min<std::int64_t>(na, nb - l);
    std::uint32_t acc = 0;
    for (std::int64_t i = lo; i < hi; ++i) acc += static_cast<std::uint32_t>(pa[i] & pb[i + l]);
    r.histogram[static_cast<std::size_t>(l + lmax)] = acc;
  }
  detail::annotate_peak(r);
  return r;
}

/// Same histogram computed as IFFT(conj(FFT a) * FFT b) on zero-padded
/// inputs, so the correlation is linear rather than circular.
inline CorrelationResult cross_correlate_fft(const BinnedSeries& a, const BinnedSeries& b,
                                             Picoseconds max_lag) {
  detail::check_compatible(a, b);
  const std::int64_t lmax = detail::lag_bins(a, max_lag);
  auto r = detail::make_result(a, lmax);
  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  if (na == 0 || nb == 0) return r;

  const std::size_t m = detail::next_pow2(na + nb - 1);
  const std::size_t mc = m / 2 + 1;
  auto xa = detail::fftw_alloc<double>(m);
  auto xb = detail::fftw_alloc<double>(m);
  auto fa = detail::fftw_alloc<fftw_complex>(mc);
  auto fb = detail::fftw_alloc<fftw_complex>(mc);

  std::unique_ptr<detail::Plan> fwd_a, fwd_b, inv;
  {
    std::lock_guard lock(detail::planner_mutex());
    const int n = static_cast<int>(m);
    fwd_a = std::make_unique<detail::Plan>(
        fftw_plan_dft_r2c_1d(n, xa.get(), fa.get(), FFTW_ESTIMATE));
    fwd_b = std::make_unique<detail::Plan>(
        fftw_plan_dft_r2c_1d(n, xb.get(), fb.get(), FFTW_ESTIMATE));
    inv = std::make_unique<detail::Plan>(
        fftw_plan_dft_c2r_1d(n, fa.get(), xa.get(), FFTW_ESTIMATE));
  }
  std::fill(xa.get(), xa.get() + m, 0.0);
  std::fill(xb.get(), xb.get() + m, 0.0);
  std::copy(a.counts.begin(), a.counts.end(), xa.get());
  std::copy(b.counts.begin(), b.counts.end(), xb.get());
  fwd_a->execute();
  fwd_b->execute();

  // Correlation theorem: F{f(-t)*} = conj(F{f}).
  for (std::size_t k = 0; k < mc; ++k) {
    const std::complex<double> za(fa[k][0], -fa[k][1]);
    const std::complex<double> zb(fb[k][0], fb[k][1]);
    const auto p = za * zb;
    fa[k][0] = p.real();
    fa[k][1] = p.imag();
  }
  inv->execute();  // c2r overwrites fa; xa now holds m * correlation

  const double scale = 1.0 / static_cast<double>(m);
  const auto lo = -static_cast<std::int64_t>(na) + 1;
  const auto hi = static_cast<std::int64_t>(nb) - 1;
  for (std::int64_t l = std::max(-lmax, lo); l <= std::min(lmax, hi); ++l) {
    const auto idx = static_cast<std::size_t>(l >= 0 ? l : static_cast<std::int64_t>(m) + l);
    r.histogram[static_cast<std::size_t>(l + lmax)] = std::llround(xa[idx] * scale);
  }
  detail::annotate_peak(r);
  return r;
}

struct CoincidenceSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double coincidence_rate = 0.0;          ///< 1/s
  double accidental_rate_estimate = 0.0;  ///< 1/s
};

/// Expected rate of uncorrelated coincidences, r1 r2 tau_b.
inline double accidental_rate(double r1, double r2, double window_s) {
  if (!(r1 >= 0.0) || !(r2 >= 0.0) || !(window_s >= 0.0)) {
    throw DomainError("accidental_rate: inputs must be non-negative");
  }
  return r1 * r2 * window_s;
}

/// Greedy earliest-first one-to-one matching of events with
/// |t_a - (t_b - delay)| <= window / 2.
inline CoincidenceSet extract_coincidences(const TimestampStream& a, const TimestampStream& b,
                                           Picoseconds delay, Picoseconds window) {
  if (window <= 0) throw DomainError("extract_coincidences: window must be positive");
  CoincidenceSet out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    const Picoseconds ta = a.events[i].time;
    // Twice the offset keeps the half-window comparison in integers.
    while (j < b.events.size() && 2 * (b.events[j].time - delay - ta) < -window) ++j;
    if (j == b.events.size()) break;
    if (2 * (b.events[j].time - delay - ta) <= window) {
      out.pairs.emplace_back(i, j);
      ++j;
    }
  }
  const double dur = std::max(a.duration_seconds(), b.duration_seconds());
  if (dur > 0.0) {
    out.coincidence_rate = static_cast<double>(out.pairs.size()) / dur;
    out.accidental_rate_estimate =
        accidental_rate(static_cast<double>(a.size()) / dur, static_cast<double>(b.size()) / dur,
                        static_cast<double>(window) / kPsPerSecond);
  }
  return out;
}

inline constexpr std::string_view kHistogramHeader = "lag_ps,count";

inline void write_histogram(std::ostream& out, const CorrelationResult& r) {
  out << kHistogramHeader << '\n';
  for (std::size_t i = 0; i < r.lags.size(); ++i) out << r.lags[i] << ',' << r.histogram[i] << '\n';
}

/// Reads a lag histogram back; bin size is inferred from the lag spacing.
inline CorrelationResult read_histogram(std::istream& in) {
  CorrelationResult r;
  csv::read_rows(in, kHistogramHeader, 2, [&](const auto& f, std::size_t line) {
    r.lags.push_back(csv::parse_number<Picoseconds>(f[0], line));
    r.histogram.push_back(csv::parse_number<std::int64_t>(f[1], line));
  });
  if (r.lags.size() >= 2) r.bin_size = r.lags[1] - r.lags[0];
  r.coincidence_window = r.bin_size;
  detail::annotate_peak(r);
  return r;
}

}  // namespace qkdsim::coincidence
