#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlsl/field_ops.hpp"
#include "mlsl/fields.hpp"
#include "mlsl/geometry.hpp"
#include "mlsl/interp.hpp"
#include "mlsl/quadtree.hpp"

namespace mlsl {

/// Grid plus the nodal fields advanced by one solver step.
struct SimulationState {
  QuadtreeGrid grid;
  ScalarField phi;
  VectorField vel;
  double time = 0.0;
  long iter = 0;
};

struct Departure {
  Vec2 x_hat;
  Vec2 x_d;
  Vec2 u_hat;   // intermediate velocity at x_hat
  bool valid = true;  // false when a backtracked point left the domain
};

/// Midpoint backtracking: x_hat = x_a - dt/2 u(x_a), x_d = x_a - dt u(x_hat).
/// Velocities are bilinearly sampled from the given state.  When vel_prev is
/// supplied the intermediate velocity extrapolates two frames,
/// u = 1.5 u^n - 0.5 u^{n-1}; the default single-frame mode uses u^n alone.
inline Departure departure_point(const QuadtreeGrid& g, const VectorField& vel,
                                 const Vec2& x_a, double dt,
                                 const VectorField* vel_prev = nullptr) {
  if (!(dt > 0.0)) throw std::invalid_argument("departure_point: dt must be positive");
  Departure dep;
  const Vec2 u_a = sample_vector(g, vel, x_a, true);
  dep.x_hat = x_a - (dt / 2.0) * u_a;
  if (!g.domain().contains(dep.x_hat)) dep.valid = false;
  Vec2 u_mid = sample_vector(g, vel, dep.x_hat, true);
  if (vel_prev != nullptr) {
    const Vec2 u_old = sample_vector(g, *vel_prev, dep.x_hat, true);
    u_mid = 1.5 * u_mid - 0.5 * u_old;
  }
  dep.u_hat = u_mid;
  dep.x_d = x_a - dt * u_mid;
  if (!g.domain().contains(dep.x_d)) dep.valid = false;
  return dep;
}

inline Departure departure_point(const SimulationState& s, const Vec2& x_a, double dt,
                                 const VectorField* vel_prev = nullptr) {
  return departure_point(s.grid, s.vel, x_a, dt, vel_prev);
}

/// Nodal overrides merged on top of the interpolated level-set values during
/// the regrid loop (machine-learning cache, keyed by vertex lattice position).
using PhiOverrides = std::unordered_map<std::uint64_t, double>;

namespace detail {

struct BacktrackField {
  const QuadtreeGrid* grid;
  const ScalarField* phi;
  const VectorField* vel;
  ScalarField pxx, pyy;
  double dt;
  InterpMode mode;
  const PhiOverrides* overrides;
  mutable std::unordered_map<std::uint64_t, double> memo;

  double operator()(const Vec2& p) const {
    std::int64_t ix = 0, iy = 0;
    const bool on_lattice = grid->to_lattice(p, ix, iy);
    const std::uint64_t key = on_lattice ? lattice_key(ix, iy) : 0;
    if (on_lattice) {
      auto it = memo.find(key);
      if (it != memo.end()) return it->second;
      if (overrides != nullptr) {
        auto ov = overrides->find(key);
        if (ov != overrides->end()) {
          memo.emplace(key, ov->second);
          return ov->second;
        }
      }
    }
    const Departure dep = departure_point(*grid, *vel, p, dt);
    SampleOptions opt;
    opt.mode = mode;
    opt.clamp_to_domain = true;
    const double v = sample_scalar(*grid, *phi, dep.x_d, opt, &pxx, &pyy);
    if (on_lattice) memo.emplace(key, v);
    return v;
  }
};

}  // namespace detail

/// One full semi-Lagrangian update: backtracks every candidate vertex,
/// interpolates the old field at the departure points, and regrids with the
/// refinement criterion until the leaf set is unchanged.  Overrides replace
/// interpolated values at matching vertices after every interpolation pass.
inline SimulationState semi_lagrangian_step(const SimulationState& s, double dt,
                                            InterpMode mode = InterpMode::quadratic,
                                            const PhiOverrides* overrides = nullptr) {
  if (!(dt > 0.0)) throw std::invalid_argument("semi_lagrangian_step: dt must be positive");
  require_sized(s.grid, s.phi, "semi_lagrangian_step");
  require_sized(s.grid, s.vel, "semi_lagrangian_step");

  detail::BacktrackField field;
  field.grid = &s.grid;
  field.phi = &s.phi;
  field.vel = &s.vel;
  field.dt = dt;
  field.mode = mode;
  field.overrides = overrides;
  if (mode == InterpMode::quadratic) {
    auto d = second_derivatives(s.grid, s.phi);
    field.pxx = std::move(d.first);
    field.pyy = std::move(d.second);
  }
  auto probe = [&field](Vec2 p) { return field(p); };

  QuadtreeGrid candidate = s.grid;
  auto prev_sig = candidate.leaf_signature();
  const int max_sweeps = s.grid.config().l_max + 2;
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    QuadtreeGrid next = build_grid(s.grid.config(), probe);
    auto sig = next.leaf_signature();
    candidate = std::move(next);
    if (sig == prev_sig) {
      converged = true;
      break;
    }
    prev_sig = std::move(sig);
  }
  if (!converged)
    throw std::runtime_error("semi_lagrangian_step: regridding did not converge");

  SimulationState out;
  out.grid = std::move(candidate);
  out.phi = ScalarField(out.grid.node_count());
  for (std::size_t n = 0; n < out.grid.node_count(); ++n)
    out.phi[n] = probe(out.grid.node_pos(static_cast<std::int32_t>(n)));
  out.vel = VectorField(out.grid.node_count());
  for (std::size_t n = 0; n < out.grid.node_count(); ++n)
    out.vel[n] = sample_vector(s.grid, s.vel, out.grid.node_pos(static_cast<std::int32_t>(n)), true);
  out.time = s.time + dt;
  out.iter = s.iter + 1;
  return out;
}

/// Rebuilds the coarse grid and its level-set values from the fine solution
/// (quadratic interpolation), used for the periodic trajectory reset.
inline SimulationState fit_to_fine_grid(const GridConfig& coarse_cfg,
                                        const SimulationState& fine) {
  auto d = second_derivatives(fine.grid, fine.phi);
  SampleOptions opt;
  opt.mode = InterpMode::quadratic;
  opt.clamp_to_domain = true;
  auto probe = [&](Vec2 p) {
    return sample_scalar(fine.grid, fine.phi, p, opt, &d.first, &d.second);
  };
  SimulationState out;
  out.grid = build_grid(coarse_cfg, probe);
  out.phi = ScalarField(out.grid.node_count());
  for (std::size_t n = 0; n < out.grid.node_count(); ++n)
    out.phi[n] = probe(out.grid.node_pos(static_cast<std::int32_t>(n)));
  out.vel = VectorField(out.grid.node_count());
  for (std::size_t n = 0; n < out.grid.node_count(); ++n)
    out.vel[n] = sample_vector(fine.grid, fine.vel, out.grid.node_pos(static_cast<std::int32_t>(n)), true);
  out.time = fine.time;
  return out;
}

using VelocityFn = std::function<Vec2(Vec2)>;

inline void resample_velocity(SimulationState& s, const VelocityFn& fn) {
  s.vel = evaluate_vector(s.grid, fn);
}

/// Advances the fine grid from t_start to t_end in CFL-limited sub-steps,
/// redistancing with band_c*nu iterations per step and band_f*nu on the final
/// one.  The velocity field is re-evaluated on each new grid.  u_max is the
/// field's maximum norm over the domain (1 for normalized fields).
inline SimulationState advect_fine_grid(const SimulationState& fine0, double t_start,
                                        double t_end, int nu, const VelocityFn& velocity,
                                        double band_c, double band_f, double cfl,
                                        double u_max = 1.0) {
  if (t_end < t_start) throw std::invalid_argument("advect_fine_grid: t_end < t_start");
  SimulationState s = fine0;
  s.time = t_start;
  if (t_end == t_start) return s;
  const double dt_full = cfl * s.grid.h_min() / u_max;
  long k = 0;
  double t = t_start;
  while (t < t_end - 1e-15 * std::max(1.0, std::fabs(t_end))) {
    double dt = dt_full;
    bool last = false;
    if (t + dt >= t_end - 1e-15 * std::max(1.0, std::fabs(t_end))) {
      dt = t_end - t;
      last = true;
    }
    s = semi_lagrangian_step(s, dt, InterpMode::quadratic);
    const int reps = static_cast<int>(std::lround((last ? band_f : band_c) * nu));
    s.phi = reinitialize(s.grid, s.phi, reps);
    resample_velocity(s, velocity);
    ++k;
    t = last ? t_end : t_start + static_cast<double>(k) * dt_full;
    s.time = t;
  }
  return s;
}

/// One coarse-grid update: every reset_freq-th iteration the coarse solution
/// is refit from the advanced fine grid, otherwise a standard semi-Lagrangian
/// step advances to the fine state's time; either way the result is
/// redistanced nu times.  fine_next must already sit at the coarse target time.
inline SimulationState advect_coarse_grid(const SimulationState& coarse,
                                          const SimulationState& fine_next, int nu,
                                          long iter, int reset_freq, double cfl,
                                          double u_max = 1.0) {
  SimulationState out;
  if ((iter + 1) % reset_freq == 0) {
    out = fit_to_fine_grid(coarse.grid.config(), fine_next);
    out.iter = coarse.iter + 1;
  } else {
    double dt = fine_next.time - coarse.time;
    if (!(dt > 0.0)) dt = cfl * coarse.grid.h_min() / u_max;
    out = semi_lagrangian_step(coarse, dt, InterpMode::quadratic);
  }
  out.phi = reinitialize(out.grid, out.phi, nu);
  return out;
}

}  // namespace mlsl
