#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "mlsl/geometry.hpp"
#include "mlsl/quadtree.hpp"

namespace mlsl {

/// One real value per grid node.
struct ScalarField {
  std::vector<double> v;

  ScalarField() = default;
  explicit ScalarField(std::size_t n, double fill = 0.0) : v(n, fill) {}

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }
  std::size_t size() const { return v.size(); }
};

/// One 2-vector per grid node (velocities, normals).
struct VectorField {
  std::vector<Vec2> v;

  VectorField() = default;
  explicit VectorField(std::size_t n, Vec2 fill = {}) : v(n, fill) {}

  Vec2& operator[](std::size_t i) { return v[i]; }
  const Vec2& operator[](std::size_t i) const { return v[i]; }
  std::size_t size() const { return v.size(); }
};

inline void require_sized(const QuadtreeGrid& g, const ScalarField& f, const char* what) {
  if (f.size() != g.node_count()) throw std::invalid_argument(std::string(what) + ": field size does not match grid");
}

inline void require_sized(const QuadtreeGrid& g, const VectorField& f, const char* what) {
  if (f.size() != g.node_count()) throw std::invalid_argument(std::string(what) + ": field size does not match grid");
}

/// Samples an analytic function at every grid node.
template <typename F>
ScalarField evaluate_scalar(const QuadtreeGrid& g, F&& f) {
  ScalarField out(g.node_count());
  for (std::size_t n = 0; n < g.node_count(); ++n) out[n] = f(g.node_pos(static_cast<std::int32_t>(n)));
  return out;
}

template <typename F>
VectorField evaluate_vector(const QuadtreeGrid& g, F&& f) {
  VectorField out(g.node_count());
  for (std::size_t n = 0; n < g.node_count(); ++n) out[n] = f(g.node_pos(static_cast<std::int32_t>(n)));
  return out;
}

}  // namespace mlsl
