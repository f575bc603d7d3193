#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mlsl/fields.hpp"
#include "mlsl/geometry.hpp"
#include "mlsl/interp.hpp"
#include "mlsl/quadtree.hpp"

namespace mlsl {

/// One-sided difference arm: nearest existing vertices along a direction at
/// dyadic spacings.  n1 is the closest neighbor (spacing s1 in h units), n2
/// the next one past it (spacing s1+s2).  Missing entries are -1.
struct DiffArm {
  std::int32_t n1 = -1;
  std::int32_t n2 = -1;
  double s1 = 0.0;
  double s2 = 0.0;
};

struct DiffStencil {
  DiffArm xm, xp, ym, yp;  // west, east, south, north
};

/// Precomputes per-node neighbor arms used by derivatives and redistancing.
/// Within the uniform band arms resolve at spacing h; elsewhere the search
/// escalates through coarser dyadic spacings until a vertex exists.
inline std::vector<DiffStencil> make_diff_stencils(const QuadtreeGrid& g) {
  std::vector<DiffStencil> out(g.node_count());
  const std::int64_t extent = g.lattice_extent();
  const double h = g.h_min();

  auto arm = [&](std::int64_t ix, std::int64_t iy, std::int64_t dx, std::int64_t dy) {
    DiffArm a;
    for (std::int64_t s = 1; s <= extent; s *= 2) {
      const std::int64_t jx = ix + dx * s, jy = iy + dy * s;
      if (jx < 0 || jy < 0 || jx > extent || jy > extent) break;
      const std::int32_t n = g.find_node(jx, jy);
      if (n >= 0) {
        a.n1 = n;
        a.s1 = static_cast<double>(s) * h;
        for (std::int64_t t = s; s + t <= extent * 2; t *= 2) {
          const std::int64_t kx = ix + dx * (s + t), ky = iy + dy * (s + t);
          if (kx < 0 || ky < 0 || kx > extent || ky > extent) break;
          const std::int32_t m = g.find_node(kx, ky);
          if (m >= 0) {
            a.n2 = m;
            a.s2 = static_cast<double>(t) * h;
            break;
          }
        }
        break;
      }
    }
    return a;
  };

  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const GridNode& gn = g.nodes()[n];
    out[n].xm = arm(gn.ix, gn.iy, -1, 0);
    out[n].xp = arm(gn.ix, gn.iy, +1, 0);
    out[n].ym = arm(gn.ix, gn.iy, 0, -1);
    out[n].yp = arm(gn.ix, gn.iy, 0, +1);
  }
  return out;
}

struct NormalsCurvature {
  VectorField normals;
  ScalarField curvature;
  std::vector<std::uint8_t> degenerate;  // 1 = vanishing gradient, 2 = incomplete stencil
};

/// Unit normals and mean curvature by central differences on the h-uniform
/// nine-point stencil.  kappa = (pxx py^2 - 2 pxy px py + pyy px^2) /
/// (px^2 + py^2)^(3/2), clamped to |kappa| <= 1/h.  Nodes without a complete
/// stencil, or with a vanishing gradient, receive zero fills and a flag.
inline NormalsCurvature normals_and_curvature(const QuadtreeGrid& g, const ScalarField& phi) {
  require_sized(g, phi, "normals_and_curvature");
  const double h = g.h_min();
  NormalsCurvature out;
  out.normals = VectorField(g.node_count());
  out.curvature = ScalarField(g.node_count());
  out.degenerate.assign(g.node_count(), 0);

  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const NodeStencil st = g.node_stencil(static_cast<std::int32_t>(n));
    if (!st.complete) {
      out.degenerate[n] = 2;
      continue;
    }
    auto at = [&](int k) { return phi[static_cast<std::size_t>(st.neighbors[static_cast<std::size_t>(k)])]; };
    const double c = phi[n];
    const double px = (at(4) - at(3)) / (2.0 * h);
    const double py = (at(6) - at(1)) / (2.0 * h);
    const double pxx = (at(4) - 2.0 * c + at(3)) / (h * h);
    const double pyy = (at(6) - 2.0 * c + at(1)) / (h * h);
    const double pxy = (at(7) - at(5) - at(2) + at(0)) / (4.0 * h * h);
    const double g2 = px * px + py * py;
    const double gn = std::sqrt(g2);
    if (gn < 1e-10) {
      out.degenerate[n] = 1;
      continue;
    }
    out.normals[n] = {px / gn, py / gn};
    double kappa = (pxx * py * py - 2.0 * pxy * px * py + pyy * px * px) / (g2 * gn);
    kappa = std::clamp(kappa, -1.0 / h, 1.0 / h);
    out.curvature[n] = kappa;
  }
  return out;
}

namespace detail {

inline double second_derivative_axis(const std::vector<double>& phi, std::size_t n,
                                     const DiffArm& m, const DiffArm& p) {
  const double c = phi[n];
  if (m.n1 >= 0 && p.n1 >= 0) {
    // Three-point second difference, exact for quadratics at any spacings.
    const double fm = phi[static_cast<std::size_t>(m.n1)];
    const double fp = phi[static_cast<std::size_t>(p.n1)];
    const double sm = m.s1, sp = p.s1;
    return 2.0 * (fm / (sm * (sm + sp)) - c / (sm * sp) + fp / (sp * (sm + sp)));
  }
  const DiffArm& a = (p.n1 >= 0) ? p : m;
  if (a.n1 >= 0 && a.n2 >= 0) {
    // One-sided second difference via divided differences.
    const double f1 = phi[static_cast<std::size_t>(a.n1)];
    const double f2 = phi[static_cast<std::size_t>(a.n2)];
    const double s1 = a.s1, s2 = a.s2;
    return 2.0 * (c / (s1 * (s1 + s2)) - f1 / (s1 * s2) + f2 / (s2 * (s1 + s2)));
  }
  return 0.0;
}

}  // namespace detail

/// Nodal phi_xx and phi_yy.  Central differences where both neighbors exist;
/// one-sided second differences where a side is missing, so values stay
/// defined everywhere interpolation may probe.
inline std::pair<ScalarField, ScalarField> second_derivatives(
    const QuadtreeGrid& g, const ScalarField& phi,
    const std::vector<DiffStencil>* stencils = nullptr) {
  require_sized(g, phi, "second_derivatives");
  for (double v : phi.v)
    if (!std::isfinite(v)) throw std::invalid_argument("second_derivatives: non-finite input");
  std::vector<DiffStencil> local;
  if (stencils == nullptr) {
    local = make_diff_stencils(g);
    stencils = &local;
  }
  ScalarField pxx(g.node_count()), pyy(g.node_count());
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const DiffStencil& st = (*stencils)[n];
    pxx[n] = detail::second_derivative_axis(phi.v, n, st.xm, st.xp);
    pyy[n] = detail::second_derivative_axis(phi.v, n, st.ym, st.yp);
  }
  return {std::move(pxx), std::move(pyy)};
}

namespace detail {

// Godunov upwind Hamiltonian for |grad phi| with the sign of the starting
// field selecting the upwind branches.
inline double godunov_gradnorm(double a, double b, double c, double d, double s0) {
  auto sq = [](double v) { return v * v; };
  double gx, gy;
  if (s0 > 0.0) {
    gx = std::max(sq(std::max(a, 0.0)), sq(std::min(b, 0.0)));
    gy = std::max(sq(std::max(c, 0.0)), sq(std::min(d, 0.0)));
  } else {
    gx = std::max(sq(std::min(a, 0.0)), sq(std::max(b, 0.0)));
    gy = std::max(sq(std::min(c, 0.0)), sq(std::max(d, 0.0)));
  }
  return std::sqrt(gx + gy);
}

inline void reinit_rhs(const QuadtreeGrid& g, const std::vector<DiffStencil>& st,
                       const std::vector<double>& sgn0, const std::vector<double>& phi,
                       std::vector<double>& rhs) {
  const std::size_t n_nodes = g.node_count();
  for (std::size_t n = 0; n < n_nodes; ++n) {
    const double c = phi[n];
    const DiffStencil& s = st[n];
    double a = 0.0, b = 0.0, cc = 0.0, d = 0.0;
    const bool has_xm = s.xm.n1 >= 0, has_xp = s.xp.n1 >= 0;
    const bool has_ym = s.ym.n1 >= 0, has_yp = s.yp.n1 >= 0;
    if (has_xm) a = (c - phi[static_cast<std::size_t>(s.xm.n1)]) / s.xm.s1;
    if (has_xp) b = (phi[static_cast<std::size_t>(s.xp.n1)] - c) / s.xp.s1;
    if (!has_xm) a = b;  // mirror at the wall
    if (!has_xp) b = a;
    if (has_ym) cc = (c - phi[static_cast<std::size_t>(s.ym.n1)]) / s.ym.s1;
    if (has_yp) d = (phi[static_cast<std::size_t>(s.yp.n1)] - c) / s.yp.s1;
    if (!has_ym) cc = d;
    if (!has_yp) d = cc;
    rhs[n] = -sgn0[n] * (godunov_gradnorm(a, b, cc, d, sgn0[n]) - 1.0);
  }
}

inline ScalarField reinitialize_impl(const QuadtreeGrid& g, const ScalarField& phi, int nu,
                                     const std::vector<std::uint8_t>* frozen) {
  require_sized(g, phi, "reinitialize");
  if (nu < 0) throw std::invalid_argument("reinitialize: iteration count must be >= 0");
  ScalarField out = phi;
  if (nu == 0) return out;

  const std::vector<DiffStencil> st = make_diff_stencils(g);
  const double h = g.h_min();
  const double dtau = 0.5 * h;
  const std::size_t n_nodes = g.node_count();

  std::vector<double> sgn0(n_nodes);
  for (std::size_t n = 0; n < n_nodes; ++n)
    sgn0[n] = phi[n] / std::sqrt(phi[n] * phi[n] + h * h);

  std::vector<double> rhs(n_nodes), stage(n_nodes), rhs2(n_nodes);
  for (int it = 0; it < nu; ++it) {
    reinit_rhs(g, st, sgn0, out.v, rhs);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      stage[n] = out[n] + dtau * rhs[n];
      if (frozen && (*frozen)[n]) stage[n] = phi[n];
    }
    reinit_rhs(g, st, sgn0, stage, rhs2);
    for (std::size_t n = 0; n < n_nodes; ++n) {
      double next = 0.5 * (out[n] + stage[n] + dtau * rhs2[n]);
      if (frozen && (*frozen)[n]) next = phi[n];
      out[n] = next;
    }
  }
  return out;
}

}  // namespace detail

/// nu pseudo-time steps of the redistancing equation: TVD-RK2 in pseudo-time,
/// Godunov upwinding in space, dtau = h/2, smoothed sign from the input field.
inline ScalarField reinitialize(const QuadtreeGrid& g, const ScalarField& phi, int nu) {
  return detail::reinitialize_impl(g, phi, nu, nullptr);
}

/// Redistancing that freezes the given vertices at their input values for all
/// pseudo-time steps; unprotected nodes still read the frozen values through
/// their stencils.  Coordinates must lie on the vertex lattice.
inline ScalarField selective_reinitialize(const QuadtreeGrid& g, const ScalarField& phi,
                                          const std::vector<Vec2>& protected_coords, int nu) {
  require_sized(g, phi, "selective_reinitialize");
  std::vector<std::uint8_t> frozen(g.node_count(), 0);
  for (const Vec2& p : protected_coords) {
    const std::int32_t n = g.find_node(p);
    if (n < 0)
      throw std::invalid_argument("selective_reinitialize: protected coordinate is not a grid vertex");
    frozen[static_cast<std::size_t>(n)] = 1;
  }
  return detail::reinitialize_impl(g, phi, nu, &frozen);
}

/// Vertices with a complete nine-point stencil and an axis-aligned sign change
/// (products <= 0, so exact zeros count).  Sorted by node index.
inline std::vector<std::int32_t> nodes_next_to_gamma(const QuadtreeGrid& g, const ScalarField& phi) {
  require_sized(g, phi, "nodes_next_to_gamma");
  std::vector<std::int32_t> out;
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const NodeStencil st = g.node_stencil(static_cast<std::int32_t>(n));
    if (!st.complete) continue;
    const double c = phi[n];
    const double w = phi[static_cast<std::size_t>(st.neighbors[3])];
    const double e = phi[static_cast<std::size_t>(st.neighbors[4])];
    const double s = phi[static_cast<std::size_t>(st.neighbors[1])];
    const double no = phi[static_cast<std::size_t>(st.neighbors[6])];
    if (c * w <= 0.0 || c * e <= 0.0 || c * s <= 0.0 || c * no <= 0.0)
      out.push_back(static_cast<std::int32_t>(n));
  }
  return out;
}

inline constexpr double with_the_flow_angle = 19.0 * M_PI / 36.0;  // 95 degrees

/// Vertices of the new grid lagging behind the advected front: inside the band
/// |phi^{n+1}| <= 2 sqrt(2) h and aligned with the flow within 95 degrees.
/// Normals and velocities are sampled from the previous-step grid.
inline std::vector<Vec2> coords_with_negative_flow(const QuadtreeGrid& g_new,
                                                   const ScalarField& phi_new,
                                                   const QuadtreeGrid& g_old,
                                                   const VectorField& normals_old,
                                                   const VectorField& vel_old) {
  require_sized(g_new, phi_new, "coords_with_negative_flow");
  require_sized(g_old, normals_old, "coords_with_negative_flow");
  require_sized(g_old, vel_old, "coords_with_negative_flow");
  const double h = g_new.h_min();
  const double band = 2.0 * std::sqrt(2.0) * h;
  const double cos_thw = std::cos(with_the_flow_angle);
  std::vector<Vec2> out;
  for (std::size_t n = 0; n < g_new.node_count(); ++n) {
    if (std::fabs(phi_new[n]) > band) continue;
    const Vec2 x = g_new.node_pos(static_cast<std::int32_t>(n));
    const Vec2 u = sample_vector(g_old, vel_old, x, true);
    const double un = u.norm();
    if (un <= 1e-12) continue;
    Vec2 nn = sample_vector(g_old, normals_old, x, true);
    const double nnn = nn.norm();
    if (nnn <= 1e-12) continue;
    nn = nn / nnn;
    const double sgn = phi_new[n] >= 0.0 ? 1.0 : -1.0;
    const double dot = -sgn * nn.dot(u / un);
    if (dot >= cos_thw) out.push_back(x);
  }
  return out;
}

}  // namespace mlsl
