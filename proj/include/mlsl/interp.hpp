#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "mlsl/fields.hpp"
#include "mlsl/geometry.hpp"
#include "mlsl/quadtree.hpp"

namespace mlsl {

enum class InterpMode { bilinear, quadratic };

/// Bilinear interpolation on one square cell.  Corner values are ordered
/// [00,10,01,11]; (alpha,beta) are the cell-local coordinates in [0,1].
inline double bilinear_cell(const std::array<double, 4>& f, double alpha, double beta) {
  if (alpha < -1e-12 || alpha > 1.0 + 1e-12 || beta < -1e-12 || beta > 1.0 + 1e-12)
    throw std::invalid_argument("bilinear_cell: point outside cell");
  return (1.0 - alpha) * (1.0 - beta) * f[0] + alpha * (1.0 - beta) * f[1] +
         (1.0 - alpha) * beta * f[2] + alpha * beta * f[3];
}

/// Bilinear value corrected with second derivatives, themselves bilinearly
/// interpolated from their corner values.  w is the cell width.
inline double quadratic_cell(const std::array<double, 4>& f,
                             const std::array<double, 4>& fxx,
                             const std::array<double, 4>& fyy,
                             double w, double alpha, double beta) {
  const double base = bilinear_cell(f, alpha, beta);
  const double fxx_p = bilinear_cell(fxx, alpha, beta);
  const double fyy_p = bilinear_cell(fyy, alpha, beta);
  return base - w * w * alpha * (1.0 - alpha) * 0.5 * fxx_p
              - w * w * beta * (1.0 - beta) * 0.5 * fyy_p;
}

struct SampleOptions {
  InterpMode mode = InterpMode::bilinear;
  bool clamp_to_domain = false;
};

namespace detail {

// A leaf corner is hanging when it sits on the interior of a coarser
// neighbor's edge.  Returns that neighbor (the coarsest incident leaf not
// having the vertex as a corner), or -1 for a conforming vertex.
inline std::int32_t hanging_host(const QuadtreeGrid& g, std::int64_t ix, std::int64_t iy) {
  const double d = 0.25 * g.h_min();
  const Vec2 p = g.lattice_point(ix, iy);
  const Box2 dom = g.domain();
  std::int32_t host = -1;
  std::int32_t host_level = 1 << 30;
  for (int sy = -1; sy <= 1; sy += 2)
    for (int sx = -1; sx <= 1; sx += 2) {
      const Vec2 q{p.x + sx * d, p.y + sy * d};
      if (!dom.contains(q)) continue;
      const std::int32_t leaf = g.locate_owner(q);
      const Cell& c = g.cells()[static_cast<std::size_t>(leaf)];
      const std::int64_t w = g.width_units(c.level);
      const bool is_corner = (ix == c.ix || ix == c.ix + w) && (iy == c.iy || iy == c.iy + w);
      if (!is_corner && c.level < host_level) {
        host = leaf;
        host_level = c.level;
      }
    }
  return host;
}

inline double eval_scalar_in_cell(const QuadtreeGrid& g, const ScalarField& f,
                                  const ScalarField* fxx, const ScalarField* fyy,
                                  std::int32_t cell_id, const Vec2& p, InterpMode mode,
                                  int depth) {
  if (depth > 64) throw std::runtime_error("sample_scalar: hanging-node recursion too deep");
  const Cell& c = g.cells()[static_cast<std::size_t>(cell_id)];
  const std::int64_t wu = g.width_units(c.level);
  const Vec2 corner = g.cell_corner(c);
  const double w = g.cell_width(c);
  const double alpha = (p.x - corner.x) / w;
  const double beta = (p.y - corner.y) / w;

  std::array<double, 4> fv, dxx, dyy;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t ix = c.ix + ((s & 1) ? wu : 0);
    const std::int64_t iy = c.iy + ((s & 2) ? wu : 0);
    const std::int32_t host = hanging_host(g, ix, iy);
    if (host >= 0) {
      const Vec2 q = g.lattice_point(ix, iy);
      fv[static_cast<std::size_t>(s)] = eval_scalar_in_cell(g, f, fxx, fyy, host, q, mode, depth + 1);
      if (mode == InterpMode::quadratic) {
        dxx[static_cast<std::size_t>(s)] = eval_scalar_in_cell(g, *fxx, nullptr, nullptr, host, q, InterpMode::bilinear, depth + 1);
        dyy[static_cast<std::size_t>(s)] = eval_scalar_in_cell(g, *fyy, nullptr, nullptr, host, q, InterpMode::bilinear, depth + 1);
      }
    } else {
      const auto n = static_cast<std::size_t>(c.corner_node[static_cast<std::size_t>(s)]);
      fv[static_cast<std::size_t>(s)] = f[n];
      if (mode == InterpMode::quadratic) {
        dxx[static_cast<std::size_t>(s)] = (*fxx)[n];
        dyy[static_cast<std::size_t>(s)] = (*fyy)[n];
      }
    }
  }
  if (mode == InterpMode::bilinear) return bilinear_cell(fv, alpha, beta);
  return quadratic_cell(fv, dxx, dyy, w, alpha, beta);
}

inline Vec2 eval_vector_in_cell(const QuadtreeGrid& g, const VectorField& f,
                                std::int32_t cell_id, const Vec2& p, int depth) {
  if (depth > 64) throw std::runtime_error("sample_vector: hanging-node recursion too deep");
  const Cell& c = g.cells()[static_cast<std::size_t>(cell_id)];
  const std::int64_t wu = g.width_units(c.level);
  const Vec2 corner = g.cell_corner(c);
  const double w = g.cell_width(c);
  const double alpha = (p.x - corner.x) / w;
  const double beta = (p.y - corner.y) / w;

  std::array<double, 4> fx, fy;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t ix = c.ix + ((s & 1) ? wu : 0);
    const std::int64_t iy = c.iy + ((s & 2) ? wu : 0);
    const std::int32_t host = hanging_host(g, ix, iy);
    Vec2 val;
    if (host >= 0)
      val = eval_vector_in_cell(g, f, host, g.lattice_point(ix, iy), depth + 1);
    else
      val = f[static_cast<std::size_t>(c.corner_node[static_cast<std::size_t>(s)])];
    fx[static_cast<std::size_t>(s)] = val.x;
    fy[static_cast<std::size_t>(s)] = val.y;
  }
  return {bilinear_cell(fx, alpha, beta), bilinear_cell(fy, alpha, beta)};
}

}  // namespace detail

/// Samples a nodal scalar field at an arbitrary point of the quadtree.
/// Quadratic mode needs the nodal second-derivative fields.  Hanging corners
/// are resolved by evaluating the coarse neighbor's own interpolant, which
/// preserves continuity from the coarse side.  Exact grid vertices return
/// their nodal value.
inline double sample_scalar(const QuadtreeGrid& g, const ScalarField& f, Vec2 p,
                            const SampleOptions& opt = {},
                            const ScalarField* fxx = nullptr,
                            const ScalarField* fyy = nullptr) {
  require_sized(g, f, "sample_scalar");
  if (!g.domain().contains(p)) {
    if (!opt.clamp_to_domain) throw std::out_of_range("sample_scalar: point outside domain");
    p = g.domain().clamp(p);
  }
  if (opt.mode == InterpMode::quadratic) {
    if (fxx == nullptr || fyy == nullptr)
      throw std::invalid_argument("sample_scalar: quadratic mode needs second-derivative fields");
    require_sized(g, *fxx, "sample_scalar");
    require_sized(g, *fyy, "sample_scalar");
  }
  const std::int32_t direct = g.find_node(p);
  if (direct >= 0) return f[static_cast<std::size_t>(direct)];
  return detail::eval_scalar_in_cell(g, f, fxx, fyy, g.locate_owner(p), p, opt.mode, 0);
}

/// Componentwise bilinear sampling of a nodal vector field.
inline Vec2 sample_vector(const QuadtreeGrid& g, const VectorField& f, Vec2 p,
                          bool clamp_to_domain = false) {
  require_sized(g, f, "sample_vector");
  if (!g.domain().contains(p)) {
    if (!clamp_to_domain) throw std::out_of_range("sample_vector: point outside domain");
    p = g.domain().clamp(p);
  }
  const std::int32_t direct = g.find_node(p);
  if (direct >= 0) return f[static_cast<std::size_t>(direct)];
  return detail::eval_vector_in_cell(g, f, g.locate_owner(p), p, 0);
}

/// Batch sampling convenience used by the drivers.
inline std::vector<double> sample_scalar_many(const QuadtreeGrid& g, const ScalarField& f,
                                              const std::vector<Vec2>& pts,
                                              const SampleOptions& opt = {},
                                              const ScalarField* fxx = nullptr,
                                              const ScalarField* fyy = nullptr) {
  std::vector<double> out;
  out.reserve(pts.size());
  for (const Vec2& p : pts) out.push_back(sample_scalar(g, f, p, opt, fxx, fyy));
  return out;
}

}  // namespace mlsl
