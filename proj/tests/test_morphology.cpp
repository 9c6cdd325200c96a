#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <tuple>

#include "porogan/morphology.hpp"
#include "test_util.hpp"

using namespace porogan;
using porogan::test::bernoulli;
using porogan::test::expect_error;

namespace {

/// Brute-force pair counts for one lag vector.
std::pair<std::uint64_t, std::uint64_t> brute_pairs(const VoxelGrid& g, long dx, long dy, long dz) {
  std::uint64_t pp = 0, n = 0;
  const Dims d = g.dims();
  for (long z = 0; z < static_cast<long>(d.nz); ++z)
    for (long y = 0; y < static_cast<long>(d.ny); ++y)
      for (long x = 0; x < static_cast<long>(d.nx); ++x) {
        const long xx = x + dx, yy = y + dy, zz = z + dz;
        if (xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long>(d.nx) || yy >= static_cast<long>(d.ny) ||
            zz >= static_cast<long>(d.nz))
          continue;
        ++n;
        pp += g(x, y, z) && g(xx, yy, zz);
      }
  return {pp, n};
}

/// Closed-cube complex Euler characteristic from explicit cell sets.
long long brute_euler(const VoxelGrid& g) {
  std::set<std::tuple<int, int, int>> v;
  std::set<std::tuple<int, int, int, int>> e, f;
  long long cubes = 0;
  const Dims d = g.dims();
  for (int z = 0; z < static_cast<int>(d.nz); ++z)
    for (int y = 0; y < static_cast<int>(d.ny); ++y)
      for (int x = 0; x < static_cast<int>(d.nx); ++x) {
        if (!g(x, y, z)) continue;
        ++cubes;
        for (int c = 0; c < 8; ++c) v.insert({x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1)});
        for (int a = 0; a < 3; ++a)
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
              // Edges along axis a, faces normal to axis a.
              int p[3] = {x, y, z};
              const int b = (a + 1) % 3, c = (a + 2) % 3;
              p[b] += i;
              p[c] += j;
              e.insert({a, p[0], p[1], p[2]});
            }
        for (int a = 0; a < 3; ++a)
          for (int i = 0; i < 2; ++i) {
            int p[3] = {x, y, z};
            p[a] += i;
            f.insert({a, p[0], p[1], p[2]});
          }
      }
  return static_cast<long long>(v.size()) - static_cast<long long>(e.size()) + static_cast<long long>(f.size()) -
         cubes;
}

}  // namespace

TEST(TwoPoint, AllPoreIsOne) {
  VoxelGrid g({10, 9, 8}, 1.0, VoxelGrid::pore);
  for (Axis a : {Axis::x, Axis::y, Axis::z})
    for (double v : two_point_probability(g, a, 7).values) EXPECT_EQ(v, 1.0);
}

TEST(TwoPoint, MatchesBruteForcePairCount) {
  auto g = bernoulli({13, 11, 9}, 0.4, 21);
  for (Axis a : {Axis::x, Axis::y, Axis::z}) {
    const std::size_t rmax = g.dims().extent(a) - 1;
    auto c = two_point_probability(g, a, rmax);
    for (std::size_t r = 0; r <= rmax; ++r) {
      const long l = static_cast<long>(r);
      auto [pp, n] = brute_pairs(g, a == Axis::x ? l : 0, a == Axis::y ? l : 0, a == Axis::z ? l : 0);
      EXPECT_EQ(c.pore_pairs[r], pp);
      EXPECT_EQ(c.pairs[r], n);
    }
  }
}

TEST(TwoPoint, WideRowsMatchBruteForce) {
  // Rows longer than one 64-bit word exercise the shifted word pairs.
  auto g = bernoulli({150, 3, 2}, 0.5, 3);
  auto c = two_point_probability(g, Axis::x, 149);
  for (std::size_t r : {0u, 1u, 63u, 64u, 65u, 127u, 128u, 149u}) {
    auto [pp, n] = brute_pairs(g, static_cast<long>(r), 0, 0);
    EXPECT_EQ(c.pore_pairs[r], pp) << r;
    EXPECT_EQ(c.pairs[r], n);
  }
}

TEST(TwoPoint, LagZeroIsPorosityExactly) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto g = bernoulli({9, 10, 11}, 0.1 + 0.2 * s, s);
    for (Axis a : {Axis::x, Axis::y, Axis::z}) EXPECT_EQ(two_point_probability(g, a, 3).porosity(), g.porosity());
    EXPECT_EQ(radial_average_covariance(g, 4).porosity(), g.porosity());
  }
}

TEST(TwoPoint, SymmetricUnderReflection) {
  auto g = bernoulli({12, 10, 9}, 0.45, 13);
  VoxelGrid flipped(g.dims());
  for (std::size_t z = 0; z < 9; ++z)
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 12; ++x) flipped(11 - x, y, z) = g(x, y, z);
  EXPECT_EQ(two_point_probability(g, Axis::x, 11).values, two_point_probability(flipped, Axis::x, 11).values);
}

TEST(TwoPoint, LagOutOfRange) {
  VoxelGrid g({8, 8, 8});
  expect_error(Errc::invalid_lag, [&] { two_point_probability(g, Axis::y, 8); });
  expect_error(Errc::invalid_lag, [&] { radial_average_covariance(g, 5); });
}

TEST(TwoPoint, BernoulliHalfIsQuarterWithinEstimatorSigma) {
  const double p = 0.5;
  auto g = bernoulli({64, 64, 64}, p, 1234);
  for (Axis a : {Axis::x, Axis::y, Axis::z}) {
    auto c = two_point_probability(g, a, 16);
    for (std::size_t r = 1; r <= 16; ++r) {
      // Exact variance of the pair count for an independent field: pairs
      // sharing a voxel covary by p^3 - p^4.
      const double n = static_cast<double>(c.pairs[r]);
      const double lines = 64.0 * 64.0;
      const double shared = lines * std::max(0.0, 64.0 - 2.0 * r);
      const double var = (n * (p * p - std::pow(p, 4)) + 2.0 * shared * (std::pow(p, 3) - std::pow(p, 4))) / (n * n);
      EXPECT_NEAR(c.values[r], p * p, 3.0 * std::sqrt(var)) << "lag " << r;
    }
  }
}

TEST(Radial, MatchesBruteForceBinning) {
  auto g = bernoulli({9, 8, 8}, 0.4, 5);
  const long R = 4;
  std::vector<std::uint64_t> pp(R + 1, 0), n(R + 1, 0);
  for (long dz = -R; dz <= R; ++dz)
    for (long dy = -R; dy <= R; ++dy)
      for (long dx = -R; dx <= R; ++dx) {
        const long bin = std::lround(std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz)));
        if (bin > R) continue;
        auto [a, b] = brute_pairs(g, dx, dy, dz);
        pp[bin] += a;
        n[bin] += b;
      }
  auto c = radial_average_covariance(g, R);
  for (long r = 0; r <= R; ++r)
    EXPECT_NEAR(c.values[r], static_cast<double>(pp[r]) / static_cast<double>(n[r]), 1e-15) << r;
}

TEST(Radial, AllGrainIsZero) {
  VoxelGrid g({16, 16, 16});
  for (double v : radial_average_covariance(g, 8).values) EXPECT_EQ(v, 0.0);
}

TEST(Radial, BernoulliFlatAtSquaredProbability) {
  auto g = bernoulli({48, 48, 48}, 0.3, 77);
  auto c = radial_average_covariance(g, 10);
  for (std::size_t r = 1; r <= 10; ++r) EXPECT_NEAR(c.values[r], 0.09, 2e-3) << r;
}

TEST(Radial, SphereLatticeShowsHoleEffect) {
  auto g = sphere_lattice(64, 16, 0.4);
  auto c = radial_average_covariance(g, 16);
  const double phi2 = c.porosity() * c.porosity();
  double lowest = 1.0;
  for (std::size_t r = 1; r <= 16; ++r) lowest = std::min(lowest, c.values[r]);
  EXPECT_LT(lowest, phi2);
}

TEST(Pool, SumsPairCounts) {
  auto a = bernoulli({10, 10, 10}, 0.3, 1), b = bernoulli({12, 12, 12}, 0.6, 2);
  auto ca = two_point_probability(a, Axis::x, 4), cb = two_point_probability(b, Axis::x, 4);
  auto pooled = pool_curves({ca, cb});
  for (std::size_t r = 0; r <= 4; ++r)
    EXPECT_DOUBLE_EQ(pooled.values[r], static_cast<double>(ca.pore_pairs[r] + cb.pore_pairs[r]) /
                                          static_cast<double>(ca.pairs[r] + cb.pairs[r]));
}

TEST(Surface, BernoulliHalfIsOnePerVoxel) {
  auto g = bernoulli({64, 64, 64}, 0.5, 99);
  auto c = radial_average_covariance(g, 4);
  EXPECT_NEAR(covariance_slope(c), -0.25, 0.25 * 0.05);
  EXPECT_NEAR(surface_from_covariance(c).per_voxel, 1.0, 0.05);
  EXPECT_NEAR(minkowski_functionals(g).specific_surface.per_voxel, 1.0, 0.05);
}

TEST(Surface, AllPoreHasNoSurface) {
  VoxelGrid g({8, 8, 8}, 1.0, VoxelGrid::pore);
  auto s = surface_from_covariance(two_point_probability(g, Axis::x, 2));
  EXPECT_EQ(s.per_voxel, 0.0);
  EXPECT_EQ(minkowski_functionals(g).specific_surface.per_voxel, 0.0);
}

TEST(Surface, PositiveSlopeIsInvalid) {
  CovarianceCurve c;
  c.lags = {0, 1};
  c.values = {0.2, 0.3};
  expect_error(Errc::invalid_curve, [&] { surface_from_covariance(c); });
  c.values = {0.2};
  c.lags = {0};
  expect_error(Errc::invalid_curve, [&] { surface_from_covariance(c); });
}

TEST(Surface, PhysicalUnits) {
  auto g = bernoulli({16, 16, 16}, 0.5, 4);
  g.set_voxel_size_um(3.0);
  auto r = minkowski_functionals(g);
  EXPECT_DOUBLE_EQ(r.specific_surface.per_um, r.specific_surface.per_voxel / 3.0);
}

TEST(Surface, StereologyEqualsPerAxisCovarianceSlope) {
  // The lag-1 identity with the porosity of the pair endpoints; this is the
  // exact form of the direct/covariance S_V agreement on a bounded grid.
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto g = bernoulli({11, 13, 9}, 0.2 + 0.08 * seed, seed);
    const auto ic = intercept_counts(g);
    double sv = 0.0;
    for (int a = 0; a < 3; ++a) {
      auto c = two_point_probability(g, static_cast<Axis>(a), 1);
      std::uint64_t first = 0, second = 0;
      const Dims d = g.dims();
      for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
          for (std::size_t x = 0; x < d.nx; ++x) {
            std::size_t p[3] = {x, y, z};
            if (p[a] + 1 < d[a]) first += g(x, y, z);
            if (p[a] >= 1) second += g(x, y, z);
          }
      const double endpoint_phi = 0.5 * static_cast<double>(first + second) / static_cast<double>(c.pairs[1]);
      sv += -4.0 * (c.values[1] - endpoint_phi);
      EXPECT_EQ(ic.pairs[a], c.pairs[1]);
    }
    sv /= 3.0;
    EXPECT_NEAR(minkowski_functionals(g).specific_surface.per_voxel, sv, 1e-12);
  }
}

TEST(Surface, DirectAndCovarianceAgreeUpToBoundaryTerm) {
  auto g = bernoulli({64, 64, 64}, 0.35, 8);
  double sv = 0.0;
  for (int a = 0; a < 3; ++a) sv += surface_from_covariance(two_point_probability(g, static_cast<Axis>(a), 1)).per_voxel;
  sv /= 3.0;
  EXPECT_NEAR(minkowski_functionals(g).specific_surface.per_voxel, sv, 4.0 / 64.0);
}

TEST(Chords, BernoulliPoreChord) {
  for (double p : {0.3, 0.5, 0.7}) {
    auto g = bernoulli({64, 64, 64}, p, static_cast<std::uint64_t>(p * 100));
    auto ch = chord_lengths(radial_average_covariance(g, 2));
    EXPECT_NEAR(ch.pore, 1.0 / (1.0 - p), 0.05 / (1.0 - p)) << p;
    EXPECT_NEAR(ch.grain, 1.0 / p, 0.05 / p) << p;
  }
}

TEST(Chords, SinglePhaseHasNoInterface) {
  VoxelGrid g({8, 8, 8}, 1.0, VoxelGrid::pore);
  expect_error(Errc::no_interface, [&] { chord_lengths(two_point_probability(g, Axis::x, 2)); });
  CovarianceCurve flat;
  flat.lags = {0, 1};
  flat.values = {0.5, 0.5};
  expect_error(Errc::no_interface, [&] { chord_lengths(flat); });
}

TEST(Euler, SingleVoxel) {
  VoxelGrid g({3, 3, 3});
  g(1, 1, 1) = VoxelGrid::pore;
  auto c = euler_counts(g);
  EXPECT_EQ(c.vertices, 8);
  EXPECT_EQ(c.edges, 12);
  EXPECT_EQ(c.faces, 6);
  EXPECT_EQ(c.objects, 1);
  EXPECT_EQ(c.chi(), 1);
  EXPECT_EQ(euler_counts(g, VoxelGrid::pore, EulerComplex::voxel_centres).chi(), 1);
}

TEST(Euler, TwoDisjointVoxels) {
  VoxelGrid g({5, 3, 3});
  g(1, 1, 1) = VoxelGrid::pore;
  g(3, 1, 1) = VoxelGrid::pore;
  EXPECT_EQ(euler_counts(g).chi(), 2);
  EXPECT_EQ(euler_counts(g, VoxelGrid::pore, EulerComplex::voxel_centres).chi(), 2);
  EXPECT_EQ(minkowski_functionals(g).components, 2u);
}

TEST(Euler, RingIsTorus) {
  auto g = porogan::test::ring();
  EXPECT_EQ(euler_counts(g).chi(), 0);
  EXPECT_EQ(euler_counts(g, VoxelGrid::pore, EulerComplex::voxel_centres).chi(), 0);
}

TEST(Euler, HollowShellHasCavity) {
  VoxelGrid g({3, 3, 3}, 1.0, VoxelGrid::pore);
  g(1, 1, 1) = VoxelGrid::grain;
  EXPECT_EQ(euler_counts(g).chi(), 2);
}

TEST(Euler, MatchesExplicitCellSets) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    auto g = bernoulli({7, 6, 5}, 0.2 + 0.05 * seed, 100 + seed);
    EXPECT_EQ(euler_counts(g).chi(), brute_euler(g)) << seed;
  }
}

TEST(Euler, AdditiveOverDisjointBoxes) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto a = bernoulli({6, 6, 6}, 0.5, seed), b = bernoulli({6, 6, 6}, 0.4, seed + 50);
    VoxelGrid both({14, 6, 6});
    for (std::size_t z = 0; z < 6; ++z)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 6; ++x) {
          both(x, y, z) = a(x, y, z);
          both(x + 8, y, z) = b(x, y, z);
        }
    for (auto cx : {EulerComplex::closed_cubes, EulerComplex::voxel_centres})
      EXPECT_EQ(euler_counts(both, VoxelGrid::pore, cx).chi(),
                euler_counts(a, VoxelGrid::pore, cx).chi() + euler_counts(b, VoxelGrid::pore, cx).chi());
  }
}

TEST(Euler, GrainPhaseFlag) {
  VoxelGrid g({3, 3, 3}, 1.0, VoxelGrid::pore);
  g(1, 1, 1) = VoxelGrid::grain;
  auto r = minkowski_functionals(g, VoxelGrid::grain);
  EXPECT_EQ(r.euler.chi(), 1);
  EXPECT_EQ(r.components, 1u);
}

TEST(Ball, RadiusTenFixture) {
  const double r = 10.0;
  auto g = porogan::test::ball(32, r);
  const double n = static_cast<double>(g.size());
  auto rep = minkowski_functionals(g);
  const double phi = 4.0 / 3.0 * std::numbers::pi * r * r * r / n;
  const double sv = 4.0 * std::numbers::pi * r * r / n;
  EXPECT_NEAR(rep.porosity, phi, 0.02 * phi);
  EXPECT_NEAR(rep.specific_surface.per_voxel, sv, 0.15 * sv);
  EXPECT_EQ(rep.euler.chi(), 1);
  EXPECT_EQ(euler_counts(g, VoxelGrid::pore, EulerComplex::voxel_centres).chi(), 1);
  EXPECT_DOUBLE_EQ(rep.euler_density, 1.0 / n);
}

TEST(Analyze, FillsCovarianceColumns) {
  auto g = bernoulli({32, 32, 32}, 0.4, 17);
  auto rep = analyze(g, 8);
  ASSERT_TRUE(rep.porosity_s2 && rep.specific_surface_s2 && rep.chords);
  EXPECT_EQ(*rep.porosity_s2, rep.porosity);
  EXPECT_GT(rep.chords->pore, 0.0);
  EXPECT_GT(rep.chords->grain, 0.0);
  VoxelGrid solid({8, 8, 8});
  auto empty = analyze(solid, 4);
  EXPECT_FALSE(empty.chords);
  EXPECT_EQ(empty.specific_surface.per_voxel, 0.0);
}
