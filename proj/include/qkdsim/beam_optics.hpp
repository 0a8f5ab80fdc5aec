#pragma once

// Gaussian-beam propagation and photon capture by circular receive apertures.
//
// Lengths are in metres, angles in radians. The transverse photon density is
// the beam intensity profile normalised to unit power, so every capture
// figure below is a probability.

#include <qkdsim/errors.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace qkdsim::optics {

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  double norm() const { return std::hypot(x, y); }
  Vec2 operator-() const { return {-x, -y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
};

/// Far-field half-angle divergence of a Gaussian beam, lambda / (pi w0).
inline double divergence_angle(double wavelength, double waist) {
  if (!(wavelength > 0.0) || !(waist > 0.0)) {
    throw DomainError("divergence_angle: wavelength and waist must be positive");
  }
  return wavelength / (kPi * waist);
}

class BeamGeometry {
 public:
  BeamGeometry(double wavelength, double waist, double distance)
      : wavelength_(wavelength), waist_(waist), distance_(distance) {
    if (!(wavelength > 0.0) || !(waist > 0.0) || !(distance >= 0.0)) {
      throw DomainError("BeamGeometry: need wavelength > 0, waist > 0, distance >= 0");
    }
  }

  double wavelength() const { return wavelength_; }
  double waist() const { return waist_; }
  double distance() const { return distance_; }
  double divergence() const { return divergence_angle(wavelength_, waist_); }

  /// w(z) = w0 sqrt(1 + (z theta / w0)^2)
  double beam_width() const {
    const double u = distance_ * divergence() / waist_;
    return waist_ * std::sqrt(1.0 + u * u);
  }

  BeamGeometry at_distance(double z) const { return {wavelength_, waist_, z}; }

 private:
  double wavelength_;
  double waist_;
  double distance_;
};

inline double beam_width(const BeamGeometry& g) { return g.beam_width(); }

struct ApertureSpec {
  double radius = 0.0;
  Vec2 offset;  ///< aperture centre relative to beam centre

  ApertureSpec() = default;
  ApertureSpec(double r, Vec2 o = {}) : radius(r), offset(o) {
    if (!(r > 0.0)) throw DomainError("ApertureSpec: radius must be positive");
  }
};

enum class CorrelationMode { AntiCorrelated, Inverted };

/// Transverse intensity at radius r, normalised so the plane integral is 1.
/// Carries the (w0/w)^2 power-conservation factor relative to the on-axis
/// waist intensity.
inline double intensity(double r, const BeamGeometry& g) {
  if (!(r >= 0.0)) throw DomainError("intensity: radius must be non-negative");
  const double w = g.beam_width();
  return 2.0 / (kPi * w * w) * std::exp(-2.0 * r * r / (w * w));
}

namespace detail {

inline constexpr double kQuadratureTol = 1e-11;

/// exp(-x) I0(x), finite for all x >= 0.
inline double bessel_i0_scaled(double x) {
  if (x < 600.0) return std::cyl_bessel_i(0.0, x) * std::exp(-x);
  const double inv = 1.0 / (8.0 * x);
  return (1.0 + inv * (1.0 + 4.5 * inv)) / std::sqrt(2.0 * kPi * x);
}

template <class F>
double integrate(F&& f, double a, double b) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 18,
                                                                       kQuadratureTol);
}

inline std::vector<double> breakpoints(double a, double b, std::vector<double> cuts) {
  // Slivers narrower than this carry no mass but stall the relative-error
  // recursion, so nearly coincident breakpoints are merged.
  const double eps = 1e-9 * (b - a);
  std::vector<double> pts{a};
  std::sort(cuts.begin(), cuts.end());
  for (double c : cuts) {
    if (c > pts.back() + eps && c < b - eps) pts.push_back(c);
  }
  pts.push_back(b);
  return pts;
}

/// Integrates f over [a, b], splitting at the supplied interior breakpoints.
template <class F>
double integrate_split(F&& f, double a, double b, std::vector<double> cuts) {
  const auto pts = breakpoints(a, b, std::move(cuts));
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) sum += integrate(f, pts[i], pts[i + 1]);
  return sum;
}

/// As integrate_split, but each segment is mapped through x = m - h cos(t).
/// Square-root behaviour at the segment ends becomes smooth in t.
template <class F>
double integrate_split_cosine(F&& f, double a, double b, std::vector<double> cuts) {
  const auto pts = breakpoints(a, b, std::move(cuts));
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double m = 0.5 * (pts[i] + pts[i + 1]);
    const double h = 0.5 * (pts[i + 1] - pts[i]);
    auto g = [&](double t) { return f(m - h * std::cos(t)) * h * std::sin(t); };
    sum += integrate(g, 0.0, kPi);
  }
  return sum;
}

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a;
}

/// Probability mass of the beam (width w, centred at the origin) inside the
/// disk (c1, a1), optionally intersected with the disk (c2, a2).
inline double disk_mass(double w, Vec2 c1, double a1, const Vec2* c2, double a2) {
  const double d = c1.norm();
  const double inv_w2 = 1.0 / (w * w);
  // Gaussian tail beyond 9 w from the beam centre is below exp(-162).
  const double reach = 9.0 * w;
  double rho_lo = std::max(0.0, d - reach);
  double rho_hi = std::min(a1, d + reach);

  // Direction from the aperture centre back to the beam centre is psi = 0.
  const double phi_c = std::atan2(c1.y, c1.x);

  double s = 0.0;
  double beta = 0.0;
  std::vector<double> cuts{d};
  if (c2 != nullptr) {
    const Vec2 e = c1 - *c2;
    s = e.norm();
    if (s > 0.0) {
      const double phi_e = std::atan2(e.y, e.x);
      beta = wrap_angle(phi_e - phi_c);
    }
    rho_lo = std::max(rho_lo, s - a2);
    rho_hi = std::min(rho_hi, s + a2);
    cuts.push_back(std::abs(a2 - s));
  }
  if (!(rho_hi > rho_lo)) return 0.0;

  auto exponent = [&](double rho, double psi) {
    return -2.0 * (d * d + rho * rho - 2.0 * rho * d * std::cos(psi)) * inv_w2;
  };

  auto ring = [&](double rho) -> double {
    // Half-width of the admissible angular interval around beta.
    double half = kPi;
    if (c2 != nullptr) {
      if (s == 0.0 || rho == 0.0) {
        if (s * s + rho * rho > a2 * a2) return 0.0;
      } else {
        const double kappa = (a2 * a2 - s * s - rho * rho) / (2.0 * rho * s);
        if (kappa < -1.0) return 0.0;
        if (kappa < 1.0) half = kPi - std::acos(kappa);
      }
    }
    if (half >= kPi) {
      const double x = 4.0 * rho * d * inv_w2;
      return 2.0 * kPi * std::exp(-2.0 * (rho - d) * (rho - d) * inv_w2) *
             bessel_i0_scaled(x);
    }
    auto g = [&](double psi) { return std::exp(exponent(rho, psi)); };
    // The integrand peaks at psi = 0 (mod 2 pi); split there when inside.
    const double lo = beta - half;
    const double hi = beta + half;
    std::vector<double> inner;
    for (double k : {-2.0 * kPi, 0.0, 2.0 * kPi}) {
      if (k > lo && k < hi) inner.push_back(k);
    }
    return integrate_split(g, lo, hi, inner);
  };

  auto radial = [&](double rho) { return rho * ring(rho); };
  return 2.0 * inv_w2 / kPi * integrate_split_cosine(radial, rho_lo, rho_hi, cuts);
}

}  // namespace detail

/// Probability that a photon drawn from the beam's transverse distribution
/// lands inside the (possibly offset) aperture.
inline double capture_probability(const BeamGeometry& g, const ApertureSpec& ap) {
  const double p = detail::disk_mass(g.beam_width(), ap.offset, ap.radius, nullptr, 0.0);
  return std::clamp(p, 0.0, 1.0);
}

/// Probability that both photons of a pair are captured. Photon 1 lands at p;
/// its partner lands at -p (momentum anti-correlation) or at +p when one arm
/// passes through an inverting confocal relay.
inline double coincidence_probability(const BeamGeometry& g, const ApertureSpec& ap1,
                                      const ApertureSpec& ap2, CorrelationMode mode) {
  const Vec2 partner_disk = mode == CorrelationMode::Inverted ? ap2.offset : -ap2.offset;
  const double p =
      detail::disk_mass(g.beam_width(), ap1.offset, ap1.radius, &partner_disk, ap2.radius);
  return std::clamp(p, 0.0, 1.0);
}

/// Static pointing error: transverse offset produced by an angular error.
inline Vec2 pointing_offset(double distance, Vec2 angle) { return distance * angle; }

/// Isotropic Gaussian pointing jitter with per-axis angular standard deviation.
struct PointingJitter {
  double sigma_rad = 50e-6;
  std::size_t samples = 256;
  std::uint64_t seed = 1;
  bool common_offset = true;  ///< both receivers share one draw
};

/// Coincidence probability averaged over random pointing offsets.
inline double mean_coincidence_probability(const BeamGeometry& g, double radius1,
                                           double radius2, CorrelationMode mode,
                                           const PointingJitter& jitter) {
  if (jitter.samples == 0) throw UsageError("PointingJitter: samples must be positive");
  if (jitter.sigma_rad == 0.0) {
    return coincidence_probability(g, ApertureSpec(radius1), ApertureSpec(radius2), mode);
  }
  std::mt19937_64 rng(jitter.seed);
  std::normal_distribution<double> normal(0.0, jitter.sigma_rad);
  double sum = 0.0;
  for (std::size_t i = 0; i < jitter.samples; ++i) {
    const Vec2 d1 = pointing_offset(g.distance(), {normal(rng), normal(rng)});
    Vec2 d2 = d1;
    if (!jitter.common_offset) d2 = pointing_offset(g.distance(), {normal(rng), normal(rng)});
    sum += coincidence_probability(g, ApertureSpec(radius1, d1), ApertureSpec(radius2, d2),
                                   mode);
  }
  return sum / static_cast<double>(jitter.samples);
}

}  // namespace qkdsim::optics
