#pragma once

// Two-point statistics and Minkowski functionals of binary volumes.

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "porogan/error.hpp"
#include "porogan/parallel.hpp"
#include "porogan/voxel.hpp"

namespace porogan {

enum class CurveDirection { x = 0, y = 1, z = 2, radial = 3 };

inline const char* direction_name(CurveDirection d) {
  switch (d) {
    case CurveDirection::x: return "x";
    case CurveDirection::y: return "y";
    case CurveDirection::z: return "z";
    case CurveDirection::radial: return "radial";
  }
  return "?";
}

/// S2(r) sampled at integer lags 0..r_max. Pair counts are kept so curves
/// from several volumes can be pooled exactly.
struct CovarianceCurve {
  CurveDirection direction = CurveDirection::x;
  std::vector<std::size_t> lags;
  std::vector<double> values;
  std::vector<std::uint64_t> pore_pairs;
  std::vector<std::uint64_t> pairs;

  double porosity() const { return values.at(0); }
  std::size_t r_max() const { return lags.empty() ? 0 : lags.back(); }
};

namespace detail {

/// Pore indicator bit-packed along x: one row of ceil(nx/64) words per (y, z).
class PackedRows {
 public:
  explicit PackedRows(const VoxelGrid& grid)
      : nx_(grid.nx()), ny_(grid.ny()), nz_(grid.nz()), words_((grid.nx() + 63) / 64),
        bits_(words_ * grid.ny() * grid.nz(), 0) {
    for (std::size_t z = 0; z < nz_; ++z)
      for (std::size_t y = 0; y < ny_; ++y) {
        std::uint64_t* row = &bits_[(y + ny_ * z) * words_];
        for (std::size_t x = 0; x < nx_; ++x)
          if (grid(x, y, z)) row[x / 64] |= std::uint64_t{1} << (x % 64);
      }
  }

  std::size_t words() const { return words_; }
  const std::uint64_t* row(std::size_t y, std::size_t z) const { return &bits_[(y + ny_ * z) * words_]; }

  /// Number of x with a[x] & b[x + shift] set (shift >= 0).
  static std::uint64_t and_count(const std::uint64_t* a, const std::uint64_t* b, std::size_t words,
                                 std::size_t shift) {
    const std::size_t ws = shift / 64, bs = shift % 64;
    std::uint64_t n = 0;
    for (std::size_t w = 0; w + ws < words; ++w) {
      std::uint64_t shifted = b[w + ws] >> bs;
      if (bs && w + ws + 1 < words) shifted |= b[w + ws + 1] << (64 - bs);
      n += static_cast<std::uint64_t>(std::popcount(a[w] & shifted));
    }
    return n;
  }

  /// Pore-pore pair count for the lag (dx, dy, dz), non-periodic.
  std::uint64_t pore_pairs(long long dx, long long dy, long long dz) const {
    // Pairs for -r equal pairs for r; normalise to dz >= 0.
    if (dz < 0 || (dz == 0 && dy < 0)) {
      dx = -dx;
      dy = -dy;
      dz = -dz;
    }
    std::uint64_t n = 0;
    const long long ady = dy;  // >= 0 unless dz > 0
    for (std::size_t z = 0; z + static_cast<std::size_t>(dz) < nz_; ++z) {
      const long long ylo = std::max(0LL, -ady);
      const long long yhi = std::min<long long>(static_cast<long long>(ny_), static_cast<long long>(ny_) - ady);
      for (long long y = ylo; y < yhi; ++y) {
        const auto* a = row(static_cast<std::size_t>(y), z);
        const auto* b = row(static_cast<std::size_t>(y + ady), z + static_cast<std::size_t>(dz));
        n += dx >= 0 ? and_count(a, b, words_, static_cast<std::size_t>(dx))
                     : and_count(b, a, words_, static_cast<std::size_t>(-dx));
      }
    }
    return n;
  }

  std::uint64_t pairs(long long dx, long long dy, long long dz) const {
    auto span = [](std::size_t n, long long d) {
      const auto a = static_cast<std::size_t>(std::llabs(d));
      return a >= n ? std::size_t{0} : n - a;
    };
    return static_cast<std::uint64_t>(span(nx_, dx)) * span(ny_, dy) * span(nz_, dz);
  }

 private:
  std::size_t nx_, ny_, nz_, words_;
  std::vector<std::uint64_t> bits_;
};

}  // namespace detail

/// S2 along one axis: pore-pore pairs over in-domain pairs at each lag.
inline CovarianceCurve two_point_probability(const VoxelGrid& grid, Axis direction, std::size_t r_max) {
  const std::size_t extent = grid.dims().extent(direction);
  require(r_max < extent, Errc::invalid_lag,
          "r_max " + std::to_string(r_max) + " must be below the extent " + std::to_string(extent));
  detail::PackedRows rows(grid);
  CovarianceCurve c;
  c.direction = static_cast<CurveDirection>(direction);
  c.lags.resize(r_max + 1);
  c.values.resize(r_max + 1);
  c.pore_pairs.resize(r_max + 1);
  c.pairs.resize(r_max + 1);
  parallel_for(0, r_max + 1, [&](std::size_t r) {
    const auto lag = static_cast<long long>(r);
    const long long dx = direction == Axis::x ? lag : 0;
    const long long dy = direction == Axis::y ? lag : 0;
    const long long dz = direction == Axis::z ? lag : 0;
    c.lags[r] = r;
    c.pore_pairs[r] = rows.pore_pairs(dx, dy, dz);
    c.pairs[r] = rows.pairs(dx, dy, dz);
    c.values[r] = static_cast<double>(c.pore_pairs[r]) / static_cast<double>(c.pairs[r]);
  });
  return c;
}

/// Radially averaged S2: every integer lag vector is binned by the rounded
/// Euclidean norm and each bin pools its pore-pore and total pair counts.
inline CovarianceCurve radial_average_covariance(const VoxelGrid& grid, std::size_t r_max) {
  require(2 * r_max <= grid.dims().min_extent(), Errc::invalid_lag,
          "radial r_max " + std::to_string(r_max) + " exceeds half the smallest extent");
  detail::PackedRows rows(grid);
  const auto R = static_cast<long long>(r_max);
  // Half-space of lag vectors (the other half has identical counts) plus the origin.
  std::vector<std::array<long long, 3>> lags;
  for (long long dz = 0; dz <= R; ++dz)
    for (long long dy = -R; dy <= R; ++dy)
      for (long long dx = -R; dx <= R; ++dx) {
        if (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))) continue;
        const double norm = std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz));
        if (std::llround(norm) <= R) lags.push_back({dx, dy, dz});
      }
  std::vector<std::uint64_t> pp(lags.size()), np(lags.size());
  parallel_for(0, lags.size(), [&](std::size_t i) {
    const auto& l = lags[i];
    pp[i] = rows.pore_pairs(l[0], l[1], l[2]);
    np[i] = rows.pairs(l[0], l[1], l[2]);
  });
  CovarianceCurve c;
  c.direction = CurveDirection::radial;
  c.lags.resize(r_max + 1);
  c.values.assign(r_max + 1, 0.0);
  c.pore_pairs.assign(r_max + 1, 0);
  c.pairs.assign(r_max + 1, 0);
  for (std::size_t i = 0; i < lags.size(); ++i) {
    const auto& l = lags[i];
    const auto bin = static_cast<std::size_t>(
        std::llround(std::sqrt(static_cast<double>(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]))));
    c.pore_pairs[bin] += pp[i];
    c.pairs[bin] += np[i];
  }
  for (std::size_t r = 0; r <= r_max; ++r) {
    c.lags[r] = r;
    c.values[r] = c.pairs[r] ? static_cast<double>(c.pore_pairs[r]) / static_cast<double>(c.pairs[r]) : 0.0;
  }
  return c;
}

/// Pools curves of the same direction by summing their pair counts.
inline CovarianceCurve pool_curves(const std::vector<CovarianceCurve>& curves) {
  require(!curves.empty(), Errc::config, "no curves to pool");
  CovarianceCurve out = curves.front();
  std::size_t n = out.lags.size();
  for (const auto& c : curves) n = std::min(n, c.lags.size());
  out.lags.resize(n);
  out.values.resize(n);
  out.pore_pairs.assign(n, 0);
  out.pairs.assign(n, 0);
  for (const auto& c : curves)
    for (std::size_t r = 0; r < n; ++r) {
      out.pore_pairs[r] += c.pore_pairs[r];
      out.pairs[r] += c.pairs[r];
    }
  for (std::size_t r = 0; r < n; ++r)
    out.values[r] = out.pairs[r] ? static_cast<double>(out.pore_pairs[r]) / static_cast<double>(out.pairs[r]) : 0.0;
  return out;
}

struct SpecificSurface {
  double per_voxel = 0.0;
  double per_um = 0.0;
};

/// Slope of S2 at the origin by the lag-1 forward difference.
inline double covariance_slope(const CovarianceCurve& curve) {
  require(curve.values.size() >= 2, Errc::invalid_curve, "curve needs lags 0 and 1");
  return curve.values[1] - curve.values[0];
}

/// S_V = -4 S2'(0).
inline SpecificSurface surface_from_covariance(const CovarianceCurve& curve, double voxel_size_um = 1.0) {
  const double slope = covariance_slope(curve);
  require(slope <= 0.0, Errc::invalid_curve, "S2 slope at the origin is positive");
  const double sv = -4.0 * slope;
  return {sv, sv / voxel_size_um};
}

struct ChordLengths {
  double pore = 0.0;
  double grain = 0.0;
};

/// Mean chord lengths phi/|S2'(0)| and (1-phi)/|S2'(0)| in voxels.
inline ChordLengths chord_lengths(const CovarianceCurve& curve) {
  const double phi = curve.porosity();
  require(phi > 0.0 && phi < 1.0, Errc::no_interface, "chord lengths need both phases present");
  const double slope = std::abs(covariance_slope(curve));
  require(slope > 0.0, Errc::no_interface, "S2 has zero slope at the origin");
  return {phi / slope, (1.0 - phi) / slope};
}

// ---------------------------------------------------------------------------
// Minkowski functionals

/// Cell complex used for the Euler characteristic of the selected phase.
///  - closed_cubes: union of closed unit cubes (V, E, F counted as distinct
///    lattice vertices, edges, faces; O = number of cubes). Topologically a
///    26-connected foreground.
///  - voxel_centres: vertices at voxel centres, edges between face neighbours,
///    faces for full 2x2 plaquettes, O for full 2x2x2 blocks. A 6-connected
///    foreground.
enum class EulerComplex { closed_cubes, voxel_centres };

struct EulerCounts {
  std::int64_t vertices = 0, edges = 0, faces = 0, objects = 0;
  std::int64_t chi() const { return vertices - edges + faces - objects; }
};

inline EulerCounts euler_counts(const VoxelGrid& grid, std::uint8_t phase = VoxelGrid::pore,
                                EulerComplex complex = EulerComplex::closed_cubes) {
  const Dims d = grid.dims();
  const auto nx = static_cast<long long>(d.nx), ny = static_cast<long long>(d.ny), nz = static_cast<long long>(d.nz);
  auto in = [&](long long x, long long y, long long z) {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz &&
           grid(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)) == phase;
  };
  EulerCounts c;
  if (complex == EulerComplex::closed_cubes) {
    for (long long z = 0; z <= nz; ++z)
      for (long long y = 0; y <= ny; ++y)
        for (long long x = 0; x <= nx; ++x) {
          const bool v000 = in(x - 1, y - 1, z - 1), v100 = in(x, y - 1, z - 1);
          const bool v010 = in(x - 1, y, z - 1), v110 = in(x, y, z - 1);
          const bool v001 = in(x - 1, y - 1, z), v101 = in(x, y - 1, z);
          const bool v011 = in(x - 1, y, z), v111 = in(x, y, z);
          c.vertices += v000 || v100 || v010 || v110 || v001 || v101 || v011 || v111;
          // Edges leaving this lattice point in +x, +y, +z.
          c.edges += v100 || v110 || v101 || v111;
          c.edges += v010 || v110 || v011 || v111;
          c.edges += v001 || v101 || v011 || v111;
          // Faces with this lattice point as their minimum corner.
          c.faces += v011 || v111;  // x-normal
          c.faces += v101 || v111;  // y-normal
          c.faces += v110 || v111;  // z-normal
          c.objects += v111;
        }
  } else {
    for (long long z = 0; z < nz; ++z)
      for (long long y = 0; y < ny; ++y)
        for (long long x = 0; x < nx; ++x) {
          if (!in(x, y, z)) continue;
          ++c.vertices;
          const bool px = in(x + 1, y, z), py = in(x, y + 1, z), pz = in(x, y, z + 1);
          c.edges += px + py + pz;
          const bool pxy = in(x + 1, y + 1, z), pxz = in(x + 1, y, z + 1), pyz = in(x, y + 1, z + 1);
          c.faces += (px && py && pxy) + (px && pz && pxz) + (py && pz && pyz);
          c.objects += px && py && pz && pxy && pxz && pyz && in(x + 1, y + 1, z + 1);
        }
  }
  return c;
}

/// Per-axis line-intercept counts used by the stereological surface estimate.
struct InterceptCounts {
  std::array<std::uint64_t, 3> transitions{};
  std::array<std::uint64_t, 3> pairs{};
};

inline InterceptCounts intercept_counts(const VoxelGrid& grid) {
  InterceptCounts c;
  const Dims d = grid.dims();
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const auto v = grid(x, y, z);
        if (x + 1 < d.nx) c.transitions[0] += v != grid(x + 1, y, z);
        if (y + 1 < d.ny) c.transitions[1] += v != grid(x, y + 1, z);
        if (z + 1 < d.nz) c.transitions[2] += v != grid(x, y, z + 1);
      }
  c.pairs = {(d.nx - 1) * d.ny * d.nz, d.nx * (d.ny - 1) * d.nz, d.nx * d.ny * (d.nz - 1)};
  return c;
}

struct MorphologyReport {
  Dims dims{};
  double voxel_size_um = 1.0;
  double porosity = 0.0;
  SpecificSurface specific_surface;  // direct, stereological
  std::optional<SpecificSurface> specific_surface_s2;
  std::optional<double> porosity_s2;
  EulerCounts euler;
  double euler_density = 0.0;  // chi per voxel
  std::size_t components = 0;  // 6-connected components of the measured phase
  std::optional<ChordLengths> chords;
  EulerComplex complex = EulerComplex::closed_cubes;
  std::uint8_t euler_phase = VoxelGrid::pore;
};

/// Porosity, stereological specific surface and Euler characteristic.
///
/// The surface estimate counts interface crossings along every axis:
/// N_L = transitions / (2 * line length) is the number of pore-to-grain (or
/// grain-to-pore) crossings per unit length, and S_V = 4 * mean(N_L) = 2 P_L.
inline MorphologyReport minkowski_functionals(const VoxelGrid& grid, std::uint8_t euler_phase = VoxelGrid::pore,
                                              EulerComplex complex = EulerComplex::closed_cubes) {
  MorphologyReport r;
  r.dims = grid.dims();
  r.voxel_size_um = grid.voxel_size_um();
  r.porosity = grid.porosity();
  const auto ic = intercept_counts(grid);
  double nl_sum = 0.0;
  int axes = 0;
  for (int a = 0; a < 3; ++a) {
    if (ic.pairs[a] == 0) continue;
    nl_sum += static_cast<double>(ic.transitions[a]) / (2.0 * static_cast<double>(ic.pairs[a]));
    ++axes;
  }
  const double sv = axes ? 4.0 * nl_sum / axes : 0.0;
  r.specific_surface = {sv, sv / grid.voxel_size_um()};
  r.euler = euler_counts(grid, euler_phase, complex);
  r.euler_density = static_cast<double>(r.euler.chi()) / static_cast<double>(grid.size());
  r.components = connected_components(grid, euler_phase, Connectivity::six).component_count;
  r.complex = complex;
  r.euler_phase = euler_phase;
  return r;
}

/// Full report: direct functionals plus the covariance-derived porosity,
/// S_V and chord lengths from the radially averaged S2.
inline MorphologyReport analyze(const VoxelGrid& grid, std::size_t r_max, const CovarianceCurve* radial = nullptr,
                                EulerComplex complex = EulerComplex::closed_cubes) {
  MorphologyReport r = minkowski_functionals(grid, VoxelGrid::pore, complex);
  CovarianceCurve own;
  if (!radial) {
    own = radial_average_covariance(grid, std::max<std::size_t>(1, r_max));
    radial = &own;
  }
  r.porosity_s2 = radial->porosity();
  r.specific_surface_s2 = surface_from_covariance(*radial, grid.voxel_size_um());
  if (r.porosity > 0.0 && r.porosity < 1.0 && covariance_slope(*radial) < 0.0) r.chords = chord_lengths(*radial);
  return r;
}

}  // namespace porogan
