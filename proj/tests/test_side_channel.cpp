#include <qkdsim/timing_side_channel.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace qkdsim;
using namespace qkdsim::sidechannel;

namespace {

constexpr double kSigma = 350.0;

std::vector<DetectorHistogram> shifted_pair(Picoseconds dt0, double sigma = kSigma) {
  const auto len = static_cast<Picoseconds>(12 * sigma);
  auto [d0, d1] = make_shifted_histograms(gaussian_profile(sigma, 6 * sigma, len), dt0);
  return {d0, d1};
}

std::vector<std::vector<double>> merge_adjacent(const std::vector<std::vector<double>>& t,
                                                std::size_t k) {
  auto out = t;
  for (auto& row : out) {
    row[k] += row[k + 1];
    row.erase(row.begin() + static_cast<std::ptrdiff_t>(k + 1));
  }
  return out;
}

}  // namespace

TEST(EntropyX, Examples) {
  EXPECT_DOUBLE_EQ(entropy_X(OutcomePrior::uniform(2)), 1.0);
  EXPECT_DOUBLE_EQ(entropy_X({{1.0, 0.0}}), 0.0);
  EXPECT_NEAR(entropy_X({{0.25, 0.75}}), 0.8112781244591328, 1e-15);
  EXPECT_THROW(entropy_X({{0.5, 0.6}}), DomainError);
}

TEST(Profiles, NormalisedWithExpectedCentroids) {
  const auto g = gaussian_profile(kSigma, 2000, 4000);
  EXPECT_NEAR(g.total(), 1.0, 1e-12);
  EXPECT_NEAR(g.centroid(), 2000.0, 1e-6);
  const auto t = exponential_tail_profile(kSigma, 500, 1500, 10000);
  EXPECT_NEAR(t.total(), 1.0, 1e-12);
  // Mean of an exponentially modified Gaussian is mu + tau.
  EXPECT_NEAR(t.centroid(), 2000.0, 1.0);
  EXPECT_THROW(gaussian_profile(0.0, 0, 10), DomainError);
}

TEST(ShiftedHistograms, CommonGridAndErrors) {
  const auto g = gaussian_profile(kSigma, 2000, 4000);
  auto [d0, d1] = make_shifted_histograms(g, 300);
  EXPECT_EQ(d0.size(), 4300u);
  EXPECT_EQ(d1.size(), 4300u);
  EXPECT_NEAR(d1.centroid() - d0.centroid(), 300.0, 1e-6);
  EXPECT_THROW(make_shifted_histograms(g, -1), DomainError);
  EXPECT_THROW(make_shifted_histograms(g, 5000), DomainError);
}

TEST(JointEntropy, IdenticalAndDisjointHistograms) {
  const auto same = shifted_pair(0);
  const auto prior = OutcomePrior{{0.3, 0.7}};
  const BinningScheme b{50, 0};
  EXPECT_NEAR(joint_entropy(prior, same, b), entropy_X(prior) + entropy_T(prior, same, b), 1e-12);

  const auto apart = shifted_pair(static_cast<Picoseconds>(12 * kSigma));
  const auto uni = OutcomePrior::uniform(2);
  EXPECT_NEAR(joint_entropy(uni, apart, b), entropy_T(uni, apart, b), 1e-9);
}

TEST(JointEntropy, BoundsOnRandomInstances) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nx = 2 + rng() % 3;
    const std::size_t len = 20 + rng() % 200;
    std::vector<DetectorHistogram> h(nx);
    for (auto& d : h) {
      d.density.resize(len);
      for (auto& v : d.density) v = u(rng) < 0.3 ? 0.0 : u(rng);
      d.density[rng() % len] += 0.1;
      d.normalize();
    }
    std::vector<double> p(nx);
    for (auto& v : p) v = 0.05 + u(rng);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= s;
    const OutcomePrior prior{p};
    const BinningScheme b{1 + static_cast<Picoseconds>(rng() % 15), static_cast<Picoseconds>(rng() % 7)};
    const double hx = entropy_X(prior);
    const double ht = entropy_T(prior, h, b);
    const double hxt = joint_entropy(prior, h, b);
    EXPECT_GE(hxt, std::max(hx, ht) - 1e-12);
    EXPECT_LE(hxt, hx + ht + 1e-12);
    const double mi = mutual_information(prior, h, b);
    EXPECT_GE(mi, 0.0);
    EXPECT_LE(mi, hx + 1e-12);
  }
}

TEST(MutualInformation, ZeroWithoutCentroidOffset) {
  const auto h = shifted_pair(0);
  for (Picoseconds w : {1, 7, 100, 350, 1296, 5000})
    for (Picoseconds o : {0, 3, 123})
      EXPECT_LE(mutual_information(OutcomePrior::uniform(2), h, {w, o}), 1e-9);
}

TEST(MutualInformation, ApproachesOneBitWhenFullySeparated) {
  const auto h = shifted_pair(static_cast<Picoseconds>(10 * kSigma));
  EXPECT_NEAR(mutual_information(OutcomePrior::uniform(2), h, {10, 0}), 1.0, 0.01);
  EXPECT_NEAR(mutual_information(OutcomePrior::uniform(2), h, {1, 0}), 1.0, 0.01);
}

TEST(MutualInformation, SingleBinCarriesNothing) {
  const auto h = shifted_pair(350);
  EXPECT_LE(mutual_information(OutcomePrior::uniform(2), h, {100000, 0}), 1e-12);
}

TEST(MiVsBinWidth, InteriorPeakAtOneSigma) {
  const auto h = shifted_pair(static_cast<Picoseconds>(kSigma));
  std::vector<Picoseconds> widths;
  for (Picoseconds w = 50; w <= 4000; w += 50) widths.push_back(w);
  const std::vector<Picoseconds> offsets{0};
  const auto c = mi_vs_binwidth(OutcomePrior::uniform(2), h, widths, offsets);
  ASSERT_EQ(c.points.size(), widths.size());
  bool interior_max = false;
  for (std::size_t i = 1; i + 1 < c.points.size(); ++i) {
    if (c.points[i].mi_bits > c.points[i - 1].mi_bits && c.points[i].mi_bits > c.points[i + 1].mi_bits)
      interior_max = true;
  }
  EXPECT_TRUE(interior_max);
}

TEST(MiVsBinWidth, FlatZeroWithoutOffset) {
  const auto h = shifted_pair(0);
  const std::vector<Picoseconds> widths{10, 100, 1000};
  const std::vector<Picoseconds> offsets{0, 5, 50};
  const auto c = mi_vs_binwidth(OutcomePrior::uniform(2), h, widths, offsets);
  for (const auto& p : c.points) EXPECT_LE(p.mi_bits, 1e-9);
  EXPECT_THROW(mi_vs_binwidth(OutcomePrior::uniform(2), h, {}, offsets), UsageError);
}

TEST(MiVsBinWidth, StartOffsetMatters) {
  const auto h = shifted_pair(static_cast<Picoseconds>(kSigma));
  std::vector<Picoseconds> offsets;
  for (Picoseconds o = 0; o < 700; o += 10) offsets.push_back(o);
  const std::vector<Picoseconds> widths{350, 700, 1400};
  const auto c = mi_vs_binwidth(OutcomePrior::uniform(2), h, widths, offsets);
  for (const auto& s : c.per_width) {
    if (s.bin_width >= 700) {
      EXPECT_GT(s.max_bits - s.min_bits, 1e-3) << s.bin_width;
    }
    EXPECT_GE(s.max_bits, s.min_bits);
  }
}

TEST(MutualInformation, TranslationInvariant) {
  auto h = shifted_pair(200);
  const auto prior = OutcomePrior::uniform(2);
  for (Picoseconds shift : {1, 17, 1000}) {
    auto moved = h;
    for (auto& d : moved) d.origin += shift;
    for (Picoseconds w : {30, 400})
      for (Picoseconds o : {0, 11})
        EXPECT_NEAR(mutual_information(prior, moved, {w, o + shift}),
                    mutual_information(prior, h, {w, o}), 1e-12);
  }
}

TEST(DataProcessing, MergingBinsNeverIncreasesMi) {
  const auto prior = OutcomePrior::uniform(2);
  for (Picoseconds dt : {100, 350, 700}) {
    const auto h = shifted_pair(dt);
    // Doubling the width at a fixed offset merges neighbouring pairs.
    for (Picoseconds w : {5, 40, 175, 350})
      for (Picoseconds o : {0, 3})
        EXPECT_LE(mutual_information(prior, h, {2 * w, o}), mutual_information(prior, h, {w, o}) + 1e-12);
    // Every single adjacent merge of the joint table.
    auto joint = bin_masses(h, {100, 0});
    for (std::size_t x = 0; x < joint.size(); ++x)
      for (double& v : joint[x]) v *= prior.p[x];
    const double base = mutual_information_table(joint);
    EXPECT_NEAR(base, mutual_information(prior, h, {100, 0}), 1e-12);
    for (std::size_t k = 0; k + 1 < joint.front().size(); ++k)
      EXPECT_LE(mutual_information_table(merge_adjacent(joint, k)), base + 1e-12);
  }
}

TEST(BinMasses, ConserveMassAndFloorIndexing) {
  DetectorHistogram d{-3, {0.1, 0.2, 0.3, 0.4}};  // t = -3 .. 0
  const std::vector<DetectorHistogram> h{d};
  const auto m = bin_masses(h, {2, 0});             // bins [-4,-2), [-2,0), [0,2)
  ASSERT_EQ(m[0].size(), 3u);
  EXPECT_DOUBLE_EQ(m[0][0], 0.1);
  EXPECT_DOUBLE_EQ(m[0][1], 0.2 + 0.3);
  EXPECT_DOUBLE_EQ(m[0][2], 0.4);
  EXPECT_THROW(bin_masses(h, {0, 0}), DomainError);
  const std::vector<DetectorHistogram> mismatched{d, DetectorHistogram{0, {1.0}}};
  EXPECT_THROW(bin_masses(mismatched, {1, 0}), UsageError);
}

TEST(Csv, CurveAndDensityRoundTrip) {
  const auto h = shifted_pair(350);
  const std::vector<Picoseconds> widths{100, 200};
  const std::vector<Picoseconds> offsets{0, 50};
  const auto c = mi_vs_binwidth(OutcomePrior::uniform(2), h, widths, offsets);
  std::stringstream ss;
  write_curve(ss, c);
  const auto pts = read_curve(ss);
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(pts[i].mi_bits, c.points[i].mi_bits);

  std::stringstream ds;
  write_density(ds, h[1]);
  const auto back = read_density(ds);
  EXPECT_EQ(back.density, h[1].density);
  std::stringstream gap("t_ps,density\n0,0.5\n2,0.5\n");
  EXPECT_THROW(read_density(gap), InputError);
}
