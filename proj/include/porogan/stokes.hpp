#pragma once

// Creeping-flow permeability on a marker-and-cell grid: pressure at voxel
// centres, velocity components on voxel faces, no-slip on every pore-solid
// face. The steady Stokes system is solved by pressure projection: conjugate
// gradients on the pressure Schur complement G^T A^-1 G, each step projecting
// the viscous velocity update back onto the divergence constraint.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "porogan/error.hpp"
#include "porogan/parallel.hpp"
#include "porogan/voxel.hpp"

namespace porogan {

inline constexpr double um2_per_darcy = 0.9869233;

struct EffectivePoreSpace {
  VoxelGrid mask;  // pore voxels connected to both the inlet and outlet faces
  double porosity = 0.0;
  double effective_porosity = 0.0;
  std::size_t spanning_components = 0;
  std::size_t total_components = 0;
  bool spanning() const { return spanning_components > 0; }
};

/// Keeps the 6-connected pore components touching both faces normal to `axis`.
inline EffectivePoreSpace effective_pore_space(const VoxelGrid& grid, Axis axis) {
  const auto labels = connected_components(grid, VoxelGrid::pore, Connectivity::six);
  const std::size_t n = labels.component_count;
  std::vector<char> at_min(n + 1, 0), at_max(n + 1, 0);
  const Dims d = grid.dims();
  const std::size_t a = static_cast<std::size_t>(axis);
  const std::size_t last = d[a] - 1;
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::array<std::size_t, 3> c{x, y, z};
        if (c[a] != 0 && c[a] != last) continue;
        const auto l = labels.labels(x, y, z);
        if (!l) continue;
        if (c[a] == 0) at_min[l] = 1;
        if (c[a] == last) at_max[l] = 1;
      }
  EffectivePoreSpace out;
  out.mask = VoxelGrid(d, grid.voxel_size_um());
  out.total_components = n;
  for (std::size_t l = 1; l <= n; ++l) out.spanning_components += at_min[l] && at_max[l];
  std::size_t kept = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto l = labels.labels[i];
    if (l && at_min[l] && at_max[l]) {
      out.mask[i] = VoxelGrid::pore;
      ++kept;
    }
  }
  out.porosity = grid.porosity();
  out.effective_porosity = static_cast<double>(kept) / static_cast<double>(grid.size());
  return out;
}

enum class SideWall { no_slip, free_slip };

struct FlowOptions {
  Axis axis = Axis::x;
  double viscosity = 1.0;
  double pressure_drop = 1.0;
  /// Boundary condition on the domain faces normal to each transverse axis
  /// (the entry of the flow axis is unused).
  std::array<SideWall, 3> side_walls{SideWall::no_slip, SideWall::no_slip, SideWall::no_slip};
  double divergence_tol = 1e-8;
  double momentum_tol = 1e-6;
  double pressure_rtol = 1e-11;  // outer residual reduction
  double velocity_rtol = 1e-13;  // viscous sub-solve residual reduction
  std::size_t max_iterations = 100000;
};

struct FlowDomain {
  EffectivePoreSpace pores;
  FlowOptions options;
  double voxel_size_um = 1.0;
};

inline FlowDomain make_flow_domain(const VoxelGrid& grid, const FlowOptions& options = {}) {
  require(options.viscosity > 0.0, Errc::config, "viscosity must be positive");
  return {effective_pore_space(grid, options.axis), options, grid.voxel_size_um()};
}

struct FlowSolution {
  Dims local_dims{};  // (flow, transverse 1, transverse 2)
  Axis axis = Axis::x;
  /// Face velocities in the local frame; component c has extent +1 along c.
  std::array<std::vector<double>, 3> velocity;
  std::vector<double> pressure;  // cell centres, 0 in solid
  std::size_t iterations = 0;
  std::size_t inner_iterations = 0;
  double max_divergence = 0.0;
  double momentum_residual = 0.0;
  std::vector<double> residual_history;  // max |div v| per outer iteration

  /// Local coordinates (flow, t1, t2) of a global voxel coordinate.
  std::array<std::size_t, 3> to_local(std::size_t x, std::size_t y, std::size_t z) const {
    const std::array<std::size_t, 3> g{x, y, z};
    const auto a = static_cast<std::size_t>(axis);
    return {g[a], g[(a + 1) % 3], g[(a + 2) % 3]};
  }

  /// Velocity component along global axis `component` on the face at the
  /// low side of voxel (x, y, z) (index == extent addresses the far boundary).
  double face_velocity(Axis component, std::size_t x, std::size_t y, std::size_t z) const {
    const auto a = static_cast<std::size_t>(axis);
    const std::size_t c = (static_cast<std::size_t>(component) + 3 - a) % 3;
    const auto l = to_local(x, y, z);
    std::array<std::size_t, 3> ext{local_dims.nx, local_dims.ny, local_dims.nz};
    ext[c] += 1;
    return velocity[c][l[0] + ext[0] * (l[1] + ext[1] * l[2])];
  }

  double cell_pressure(std::size_t x, std::size_t y, std::size_t z) const {
    const auto l = to_local(x, y, z);
    return pressure[l[0] + local_dims.nx * (l[1] + local_dims.ny * l[2])];
  }

  /// Volumetric flow rate through each face plane normal to the flow axis.
  std::vector<double> plane_fluxes() const {
    const std::size_t n0 = local_dims.nx, n1 = local_dims.ny, n2 = local_dims.nz;
    std::vector<double> q(n0 + 1, 0.0);
    for (std::size_t k = 0; k < n2; ++k)
      for (std::size_t j = 0; j < n1; ++j)
        for (std::size_t i = 0; i <= n0; ++i) q[i] += velocity[0][i + (n0 + 1) * (j + n1 * k)];
    return q;
  }
};

namespace detail {

/// Symmetric positive-definite operator with at most 6 off-diagonals per row.
struct SparseSpd {
  static constexpr int slots = 6;
  std::vector<double> diag;
  std::vector<std::int64_t> nbr;  // rows * slots, -1 = empty
  std::vector<double> coef;       // off-diagonal entries (negative)

  std::size_t rows() const { return diag.size(); }

  void apply(const std::vector<double>& x, std::vector<double>& y) const {
    y.resize(rows());
    parallel_for(0, rows(), [&](std::size_t r) {
      double s = diag[r] * x[r];
      for (int k = 0; k < slots; ++k) {
        const auto j = nbr[r * slots + k];
        if (j >= 0) s += coef[r * slots + k] * x[static_cast<std::size_t>(j)];
      }
      y[r] = s;
    });
  }
};

inline double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Jacobi-preconditioned CG; x holds the initial guess. Returns iterations.
inline std::size_t pcg(const SparseSpd& A, const std::vector<double>& b, std::vector<double>& x, double rtol,
                       std::size_t max_iter) {
  const std::size_t n = A.rows();
  std::vector<double> r(n), z(n), p(n), q(n);
  A.apply(x, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
  const double bnorm = std::sqrt(dotv(b, b));
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    return 0;
  }
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / A.diag[i];
  p = z;
  double rz = dotv(r, z);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    A.apply(p, q);
    const double pq = dotv(p, q);
    require(pq > 0.0, Errc::non_convergence, "viscous operator is not positive definite");
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    if (std::sqrt(dotv(r, r)) <= rtol * bnorm) return it;
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / A.diag[i];
    const double rz_new = dotv(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  fail(Errc::non_convergence, "viscous sub-solve did not converge in " + std::to_string(max_iter) + " iterations");
}

/// Discrete Stokes system in the local frame (flow along local axis 0).
class StokesSystem {
 public:
  StokesSystem(const FlowDomain& domain) : opt_(domain.options) {
    const auto a = static_cast<std::size_t>(opt_.axis);
    const Dims gd = domain.pores.mask.dims();
    n_ = {gd[a], gd[(a + 1) % 3], gd[(a + 2) % 3]};
    walls_ = {SideWall::no_slip, opt_.side_walls[(a + 1) % 3], opt_.side_walls[(a + 2) % 3]};
    fluid_.assign(n_[0] * n_[1] * n_[2], 0);
    for (std::size_t z = 0; z < gd.nz; ++z)
      for (std::size_t y = 0; y < gd.ny; ++y)
        for (std::size_t x = 0; x < gd.nx; ++x) {
          const std::array<std::size_t, 3> g{x, y, z};
          fluid_[cell(g[a], g[(a + 1) % 3], g[(a + 2) % 3])] = domain.pores.mask(x, y, z);
        }
    number_cells();
    number_faces();
    build_viscous_operator();
  }

  const std::array<std::size_t, 3>& dims() const { return n_; }
  std::size_t cell_unknowns() const { return cell_ids_.size(); }
  std::size_t face_unknowns() const { return faces_.size(); }

  FlowSolution solve() {
    const std::size_t nf = faces_.size(), np = cell_ids_.size();
    require(np > 0 && nf > 0, Errc::impermeable, "no connected pore space to solve on");
    const std::size_t inner_cap = std::max<std::size_t>(1000, 20 * (n_[0] + n_[1] + n_[2]) * 10);

    // Right-hand side from the imposed pressures on the inlet/outlet faces.
    std::vector<double> b(nf, 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fc = faces_[f];
      if (fc.comp != 0) continue;
      if (fc.i == 0) b[f] = opt_.pressure_drop;
      // the outlet pressure is 0
    }

    FlowSolution sol;
    sol.axis = opt_.axis;
    sol.local_dims = {n_[0], n_[1], n_[2]};
    std::vector<double> u(nf, 0.0), p(np, 0.0);
    sol.inner_iterations += pcg(A_, b, u, opt_.velocity_rtol, inner_cap);

    std::vector<double> r(np), d(np), gd(nf), w(nf), sd(np);
    grad_t(u, r);  // residual of S p = G^T A^-1 b at p = 0
    const double r0 = std::sqrt(dotv(r, r));
    d = r;
    double rr = dotv(r, r);
    auto maxabs = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m = std::max(m, std::abs(x));
      return m;
    };
    double div = maxabs(r);
    sol.residual_history.push_back(div);
    std::size_t it = 0;
    while (!(div <= opt_.divergence_tol && std::sqrt(rr) <= opt_.pressure_rtol * r0) && r0 > 0.0) {
      if (it >= opt_.max_iterations) {
        fail(Errc::non_convergence, "pressure projection stalled after " + std::to_string(it) +
                                        " iterations at max |div v| = " + std::to_string(div));
      }
      ++it;
      grad(d, gd);
      std::fill(w.begin(), w.end(), 0.0);
      sol.inner_iterations += pcg(A_, gd, w, opt_.velocity_rtol, inner_cap);
      grad_t(w, sd);
      const double dsd = dotv(d, sd);
      require(dsd > 0.0, Errc::non_convergence, "pressure Schur complement lost definiteness");
      const double alpha = rr / dsd;
      for (std::size_t i = 0; i < np; ++i) {
        p[i] += alpha * d[i];
        r[i] -= alpha * sd[i];
      }
      for (std::size_t f = 0; f < nf; ++f) u[f] -= alpha * w[f];
      const double rr_new = dotv(r, r);
      const double beta = rr_new / rr;
      rr = rr_new;
      for (std::size_t i = 0; i < np; ++i) d[i] = r[i] + beta * d[i];
      // Divergence of the actual velocity field, not the recurrence.
      std::vector<double> true_r(np);
      grad_t(u, true_r);
      div = maxabs(true_r);
      sol.residual_history.push_back(div);
    }
    sol.iterations = it;

    // Final diagnostics.
    std::vector<double> res(nf), gp(nf), divv(np);
    A_.apply(u, res);
    grad(p, gp);
    double num = 0.0;
    for (std::size_t f = 0; f < nf; ++f) {
      const double e = b[f] - res[f] - gp[f];
      num += e * e;
    }
    sol.momentum_residual = std::sqrt(num) / std::sqrt(dotv(b, b));
    grad_t(u, divv);
    sol.max_divergence = maxabs(divv);
    require(sol.max_divergence <= opt_.divergence_tol, Errc::non_convergence,
            "final divergence " + std::to_string(sol.max_divergence) + " above tolerance");
    require(sol.momentum_residual <= opt_.momentum_tol, Errc::non_convergence,
            "final momentum residual " + std::to_string(sol.momentum_residual) + " above tolerance");

    for (int c = 0; c < 3; ++c) {
      std::array<std::size_t, 3> ext = n_;
      ext[c] += 1;
      sol.velocity[c].assign(ext[0] * ext[1] * ext[2], 0.0);
    }
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fc = faces_[f];
      std::array<std::size_t, 3> ext = n_;
      ext[fc.comp] += 1;
      sol.velocity[fc.comp][fc.i + ext[0] * (fc.j + ext[1] * fc.k)] = u[f];
    }
    sol.pressure.assign(fluid_.size(), 0.0);
    for (std::size_t c = 0; c < np; ++c) sol.pressure[cell_ids_[c]] = p[c];
    return sol;
  }

 private:
  struct Face {
    int comp;
    std::size_t i, j, k;
    std::int64_t lo_cell, hi_cell;  // pressure unknowns on either side, -1 if none
  };

  std::size_t cell(std::size_t i, std::size_t j, std::size_t k) const { return i + n_[0] * (j + n_[1] * k); }
  bool fluid(long long i, long long j, long long k) const {
    if (i < 0 || j < 0 || k < 0 || i >= static_cast<long long>(n_[0]) || j >= static_cast<long long>(n_[1]) ||
        k >= static_cast<long long>(n_[2]))
      return false;
    return fluid_[cell(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k))];
  }

  void number_cells() {
    cell_unknown_.assign(fluid_.size(), -1);
    for (std::size_t c = 0; c < fluid_.size(); ++c)
      if (fluid_[c]) {
        cell_unknown_[c] = static_cast<std::int64_t>(cell_ids_.size());
        cell_ids_.push_back(c);
      }
  }

  std::int64_t cell_unknown(std::array<long long, 3> at) const {
    if (!fluid(at[0], at[1], at[2])) return -1;
    return cell_unknown_[cell(static_cast<std::size_t>(at[0]), static_cast<std::size_t>(at[1]),
                              static_cast<std::size_t>(at[2]))];
  }

  /// A face of component c at index (i,j,k) is active when both adjacent
  /// cells are fluid; inlet/outlet faces need only their single interior cell.
  bool face_active(int c, long long i, long long j, long long k) const {
    std::array<long long, 3> lo{i, j, k}, hi{i, j, k};
    lo[c] -= 1;
    const long long idx = c == 0 ? i : c == 1 ? j : k;
    const auto extent = static_cast<long long>(n_[c]);
    if (idx < 0 || idx > extent) return false;
    const bool lo_ok = fluid(lo[0], lo[1], lo[2]);
    const bool hi_ok = fluid(hi[0], hi[1], hi[2]);
    if (c == 0) {
      if (idx == 0) return hi_ok;
      if (idx == extent) return lo_ok;
    }
    return lo_ok && hi_ok;
  }

  std::size_t face_slot(int c, std::size_t i, std::size_t j, std::size_t k) const {
    std::array<std::size_t, 3> ext = n_;
    ext[c] += 1;
    return offset_[c] + i + ext[0] * (j + ext[1] * k);
  }

  void number_faces() {
    std::size_t total = 0;
    for (int c = 0; c < 3; ++c) {
      offset_[c] = total;
      std::array<std::size_t, 3> ext = n_;
      ext[c] += 1;
      total += ext[0] * ext[1] * ext[2];
    }
    face_unknown_.assign(total, -1);
    for (int c = 0; c < 3; ++c) {
      std::array<std::size_t, 3> ext = n_;
      ext[c] += 1;
      for (std::size_t k = 0; k < ext[2]; ++k)
        for (std::size_t j = 0; j < ext[1]; ++j)
          for (std::size_t i = 0; i < ext[0]; ++i) {
            const auto li = static_cast<long long>(i), lj = static_cast<long long>(j), lk = static_cast<long long>(k);
            if (!face_active(c, li, lj, lk)) continue;
            std::array<long long, 3> lo{li, lj, lk}, hi{li, lj, lk};
            lo[c] -= 1;
            face_unknown_[face_slot(c, i, j, k)] = static_cast<std::int64_t>(faces_.size());
            faces_.push_back({c, i, j, k, cell_unknown(lo), cell_unknown(hi)});
          }
    }
  }

  void build_viscous_operator() {
    const std::size_t nf = faces_.size();
    A_.diag.assign(nf, 0.0);
    A_.nbr.assign(nf * SparseSpd::slots, -1);
    A_.coef.assign(nf * SparseSpd::slots, 0.0);
    const double mu = opt_.viscosity;
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& fc = faces_[f];
      const int c = fc.comp;
      const bool boundary = c == 0 && (fc.i == 0 || fc.i == n_[0]);
      int slot = 0;
      for (int d = 0; d < 3; ++d) {
        // Control volumes of inlet/outlet faces are half as long along the flow axis.
        const double coef = mu * ((c == 0 && d != 0 && boundary) ? 0.5 : 1.0);
        for (int sgn = -1; sgn <= 1; sgn += 2) {
          std::array<long long, 3> g{static_cast<long long>(fc.i), static_cast<long long>(fc.j),
                                     static_cast<long long>(fc.k)};
          g[d] += sgn;
          std::array<long long, 3> ext{static_cast<long long>(n_[0]), static_cast<long long>(n_[1]),
                                       static_cast<long long>(n_[2])};
          ext[c] += 1;
          const bool inside = g[d] >= 0 && g[d] < ext[d];
          if (!inside) {
            if (d == 0) continue;  // inlet/outlet: zero normal gradient
            // Beyond a side wall (d != c here: normal faces at the wall stay in range).
            if (walls_[d] == SideWall::no_slip) A_.diag[f] += 2.0 * coef;
            continue;
          }
          const auto s = face_slot(c, static_cast<std::size_t>(g[0]), static_cast<std::size_t>(g[1]),
                                   static_cast<std::size_t>(g[2]));
          const auto id = face_unknown_[s];
          if (id >= 0) {
            A_.diag[f] += coef;
            A_.nbr[f * SparseSpd::slots + slot] = id;
            A_.coef[f * SparseSpd::slots + slot] = -coef;
            ++slot;
            continue;
          }
          if (d == c) {
            // Same-direction neighbour is a pore-solid or domain face with zero normal velocity.
            A_.diag[f] += coef;
            continue;
          }
          // Tangential neighbour missing: a face with zero velocity one step
          // away when it borders fluid, otherwise a wall half a step away.
          std::array<long long, 3> lo = g, hi = g;
          lo[c] -= 1;
          const bool touches_fluid = fluid(lo[0], lo[1], lo[2]) || fluid(hi[0], hi[1], hi[2]);
          A_.diag[f] += touches_fluid ? coef : 2.0 * coef;
        }
      }
    }
  }

  /// (G p)_f = p_hi - p_lo; boundary pressures enter through the right-hand side.
  void grad(const std::vector<double>& p, std::vector<double>& out) const {
    out.resize(faces_.size());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& fc = faces_[f];
      double v = 0.0;
      if (fc.hi_cell >= 0) v += p[static_cast<std::size_t>(fc.hi_cell)];
      if (fc.lo_cell >= 0) v -= p[static_cast<std::size_t>(fc.lo_cell)];
      out[f] = v;
    }
  }

  /// G^T u, which is minus the cell divergence.
  void grad_t(const std::vector<double>& u, std::vector<double>& out) const {
    out.assign(cell_ids_.size(), 0.0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& fc = faces_[f];
      if (fc.hi_cell >= 0) out[static_cast<std::size_t>(fc.hi_cell)] += u[f];
      if (fc.lo_cell >= 0) out[static_cast<std::size_t>(fc.lo_cell)] -= u[f];
    }
  }

  FlowOptions opt_;
  std::array<std::size_t, 3> n_{};
  std::array<SideWall, 3> walls_{};
  std::vector<std::uint8_t> fluid_;
  std::vector<std::int64_t> cell_unknown_;
  std::vector<std::size_t> cell_ids_;
  std::array<std::size_t, 3> offset_{};
  std::vector<std::int64_t> face_unknown_;
  std::vector<Face> faces_;
  SparseSpd A_;
};

}  // namespace detail

/// Steady Stokes flow on the effective pore space of the domain.
inline FlowSolution solve_stokes(const FlowDomain& domain) {
  require(domain.pores.spanning(), Errc::impermeable,
          std::string("no pore component spans the domain along ") + axis_name(domain.options.axis));
  detail::StokesSystem system(domain);
  return system.solve();
}

struct PermeabilityResult {
  Axis axis = Axis::x;
  double porosity = 0.0;
  double effective_porosity = 0.0;
  bool permeable = false;
  double k_voxel2 = 0.0;
  double k_um2 = 0.0;
  double k_mD = 0.0;
  double mean_velocity = 0.0;  // superficial, model units
  std::size_t iterations = 0;
  std::size_t inner_iterations = 0;
  double max_divergence = 0.0;
  double momentum_residual = 0.0;
};

/// Darcy back-calculation k = mu <q> L / dp from a converged solution.
inline PermeabilityResult permeability(const FlowDomain& domain, const FlowSolution& sol) {
  PermeabilityResult r;
  r.axis = domain.options.axis;
  r.porosity = domain.pores.porosity;
  r.effective_porosity = domain.pores.effective_porosity;
  const auto q = sol.plane_fluxes();
  const std::size_t n0 = sol.local_dims.nx;
  double flux = 0.0;
  for (std::size_t i = 0; i <= n0; ++i) flux += (i == 0 || i == n0 ? 0.5 : 1.0) * q[i];
  flux /= static_cast<double>(n0);
  const double area = static_cast<double>(sol.local_dims.ny * sol.local_dims.nz);
  r.mean_velocity = flux / area;
  r.k_voxel2 = domain.options.viscosity * r.mean_velocity * static_cast<double>(n0) / domain.options.pressure_drop;
  r.k_um2 = r.k_voxel2 * domain.voxel_size_um * domain.voxel_size_um;
  r.k_mD = r.k_um2 / um2_per_darcy * 1000.0;
  r.permeable = r.k_voxel2 > 0.0;
  r.iterations = sol.iterations;
  r.inner_iterations = sol.inner_iterations;
  r.max_divergence = sol.max_divergence;
  r.momentum_residual = sol.momentum_residual;
  return r;
}

/// Effective porosity and permeability along one axis. Impermeable samples
/// come back with permeable == false and k == 0 rather than throwing.
inline PermeabilityResult measure_permeability(const VoxelGrid& grid, const FlowOptions& options = {}) {
  auto domain = make_flow_domain(grid, options);
  if (!domain.pores.spanning()) {
    PermeabilityResult r;
    r.axis = options.axis;
    r.porosity = domain.pores.porosity;
    r.effective_porosity = domain.pores.effective_porosity;
    return r;
  }
  return permeability(domain, solve_stokes(domain));
}

}  // namespace porogan
