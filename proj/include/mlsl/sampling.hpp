#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mlsl/advect.hpp"
#include "mlsl/field_ops.hpp"
#include "mlsl/fields.hpp"
#include "mlsl/geometry.hpp"
#include "mlsl/interp.hpp"
#include "mlsl/quadtree.hpp"

namespace mlsl {

/// Per-vertex record extracted around the interface: 22 reals describing the
/// local level-set, velocity, and positional context of one backtracking.
///
/// Corner slots are ordered [00,10,01,11] over the departure-owning cell;
/// xd_rel stores the departure position relative to the cell corner in cell
/// widths, i.e. already h-normalized to [0,1]^2.
struct DataPacket {
  double phi_a = 0.0;               // level-set value at the arrival vertex
  Vec2 u_hat_a;                     // midpoint velocity
  double d = 0.0;                   // |x_d - x_a|
  Vec2 xd_rel;                      // departure point in cell-local units
  std::array<double, 4> phi_corners{};  // nodal level-set values of the owner cell
  std::array<Vec2, 4> u_corners{};      // nodal velocities of the owner cell
  double phixx_d = 0.0;             // phi_xx bilinearly interpolated at x_d
  double phiyy_d = 0.0;
  double kappa_a = 0.0;             // curvature at the interface projection of x_a
  double phi_d = 0.0;               // numerically advected level-set value at x_d

  static constexpr std::size_t n_features = 22;

  std::array<double, n_features> flatten() const {
    return {phi_a,          u_hat_a.x,      u_hat_a.y,      d,
            xd_rel.x,       xd_rel.y,       phi_corners[0], phi_corners[1],
            phi_corners[2], phi_corners[3], u_corners[0].x, u_corners[0].y,
            u_corners[1].x, u_corners[1].y, u_corners[2].x, u_corners[2].y,
            u_corners[3].x, u_corners[3].y, phixx_d,        phiyy_d,
            kappa_a,        phi_d};
  }

  static DataPacket unflatten(const std::array<double, n_features>& f) {
    DataPacket p;
    p.phi_a = f[0];
    p.u_hat_a = {f[1], f[2]};
    p.d = f[3];
    p.xd_rel = {f[4], f[5]};
    p.phi_corners = {f[6], f[7], f[8], f[9]};
    p.u_corners = {Vec2{f[10], f[11]}, Vec2{f[12], f[13]}, Vec2{f[14], f[15]}, Vec2{f[16], f[17]}};
    p.phixx_d = f[18];
    p.phiyy_d = f[19];
    p.kappa_a = f[20];
    p.phi_d = f[21];
    return p;
  }

  bool operator==(const DataPacket& o) const { return flatten() == o.flatten(); }
};

/// Names of the flattened packet features, in storage (CSV) order.
inline const std::array<const char*, DataPacket::n_features>& packet_feature_names() {
  static const std::array<const char*, DataPacket::n_features> names = {
      "phi_a", "uhat_x", "uhat_y", "d",      "xd",     "yd",     "phi_00", "phi_10",
      "phi_01", "phi_11", "u_00_x", "u_00_y", "u_10_x", "u_10_y", "u_01_x", "u_01_y",
      "u_11_x", "u_11_y", "phixx",  "phiyy",  "kappa",  "phi_d"};
  return names;
}

struct LearningTuple {
  DataPacket packet;
  double target = 0.0;  // h-normalized fine-grid level-set value at the departure point
};

/// Nodal auxiliary fields consumed by packet collection and the hybrid step.
struct AuxFields {
  VectorField normals;
  ScalarField curvature;
  ScalarField phixx;
  ScalarField phiyy;
};

inline AuxFields make_aux_fields(const QuadtreeGrid& g, const ScalarField& phi) {
  AuxFields aux;
  auto nc = normals_and_curvature(g, phi);
  aux.normals = std::move(nc.normals);
  aux.curvature = std::move(nc.curvature);
  auto d = second_derivatives(g, phi);
  aux.phixx = std::move(d.first);
  aux.phiyy = std::move(d.second);
  return aux;
}

inline constexpr double packet_velocity_eps = 1e-10;

/// Assembles data packets for the interface-adjacent vertices of the state.
/// A node is skipped when its intermediate velocity vanishes, when either
/// backtracked point leaves the domain, or when the departure cell is not at
/// the maximum refinement level.  Returns the packets and the corresponding
/// arrival coordinates.
inline std::pair<std::vector<DataPacket>, std::vector<Vec2>> collect_data_packets(
    const SimulationState& s, const AuxFields& aux, double dt) {
  require_sized(s.grid, s.phi, "collect_data_packets");
  require_sized(s.grid, s.vel, "collect_data_packets");
  const QuadtreeGrid& g = s.grid;
  const int l_max = g.config().l_max;

  auto dsd = std::pair<const ScalarField*, const ScalarField*>{&aux.phixx, &aux.phiyy};
  SampleOptions quad{InterpMode::quadratic, false};

  std::vector<DataPacket> packets;
  std::vector<Vec2> coords;
  for (std::int32_t n : nodes_next_to_gamma(g, s.phi)) {
    const Vec2 x_a = g.node_pos(n);
    const Departure dep = departure_point(s, x_a, dt);
    if (!dep.valid) continue;
    if (dep.u_hat.norm() <= packet_velocity_eps) continue;
    const std::int32_t owner = g.locate_owner(dep.x_d);
    const Cell& c = g.cells()[static_cast<std::size_t>(owner)];
    if (c.level != l_max) continue;

    DataPacket p;
    p.phi_a = s.phi[static_cast<std::size_t>(n)];
    p.u_hat_a = dep.u_hat;
    p.d = (dep.x_d - x_a).norm();
    const Vec2 corner = g.cell_corner(c);
    const double w = g.cell_width(c);
    p.xd_rel = {(dep.x_d.x - corner.x) / w, (dep.x_d.y - corner.y) / w};
    for (int slot = 0; slot < 4; ++slot) {
      const auto node = static_cast<std::size_t>(c.corner_node[static_cast<std::size_t>(slot)]);
      p.phi_corners[static_cast<std::size_t>(slot)] = s.phi[node];
      p.u_corners[static_cast<std::size_t>(slot)] = s.vel[node];
    }
    {
      std::array<double, 4> cxx, cyy;
      for (int slot = 0; slot < 4; ++slot) {
        const auto node = static_cast<std::size_t>(c.corner_node[static_cast<std::size_t>(slot)]);
        cxx[static_cast<std::size_t>(slot)] = aux.phixx[node];
        cyy[static_cast<std::size_t>(slot)] = aux.phiyy[node];
      }
      p.phixx_d = bilinear_cell(cxx, p.xd_rel.x, p.xd_rel.y);
      p.phiyy_d = bilinear_cell(cyy, p.xd_rel.x, p.xd_rel.y);
    }
    const Vec2 n_hat = aux.normals[static_cast<std::size_t>(n)];
    const Vec2 x_gamma = g.domain().clamp(x_a - p.phi_a * n_hat);
    p.kappa_a = sample_scalar(g, aux.curvature, x_gamma);
    p.phi_d = sample_scalar(g, s.phi, dep.x_d, quad, dsd.first, dsd.second);

    packets.push_back(p);
    coords.push_back(x_a);
  }
  return {std::move(packets), std::move(coords)};
}

/// Negates the level-set content of a packet when its interface curvature is
/// positive, so the learning problem only sees the non-positive spectrum.
/// Returns the recorded sign (+1 when negated, -1 otherwise) for restoration.
inline std::pair<DataPacket, int> normalize_curvature_sign(const DataPacket& p) {
  if (!(p.kappa_a > 0.0)) return {p, -1};
  DataPacket q = p;
  q.phi_a = -q.phi_a;
  for (double& v : q.phi_corners) v = -v;
  q.phi_d = -q.phi_d;
  q.kappa_a = -q.kappa_a;
  q.phixx_d = -q.phixx_d;
  q.phiyy_d = -q.phiyy_d;
  return {q, +1};
}

namespace detail {

// Corner-slot permutations: rotated[s] = original[perm[s]].  Index k counts
// counterclockwise quarter turns of the cell about its center; the last row
// is the diagonal transposition used by reflection.
inline constexpr std::array<std::array<int, 4>, 4> rotation_slot_perm = {{
    {0, 1, 2, 3},  // k = 0
    {2, 0, 3, 1},  // k = 1 (90 deg ccw)
    {3, 2, 1, 0},  // k = 2 (180 deg)
    {1, 3, 0, 2},  // k = 3 (270 deg ccw)
}};
inline constexpr std::array<int, 4> reflection_slot_perm = {0, 2, 1, 3};

inline Vec2 rotate_vec(const Vec2& v, int k) {
  switch (k & 3) {
    case 1: return {-v.y, v.x};
    case 2: return {-v.x, -v.y};
    case 3: return {v.y, -v.x};
    default: return v;
  }
}

// Rotation of a cell-local position about the cell center, written without a
// center shift so quarter-turn round trips stay bitwise reversible.
inline Vec2 rotate_local(const Vec2& p, int k) {
  switch (k & 3) {
    case 1: return {1.0 - p.y, p.x};
    case 2: return {1.0 - p.x, 1.0 - p.y};
    case 3: return {p.y, 1.0 - p.x};
    default: return p;
  }
}

}  // namespace detail

/// Number of counterclockwise quarter turns that brings the angle of -u_hat
/// into [0, pi/2].
inline int reorientation_turns(const Vec2& u_hat) {
  if (u_hat.norm() <= 0.0)
    throw std::invalid_argument("reorient: zero midpoint velocity");
  // +0.0 normalizes negative zeros so axis-aligned velocities pick the
  // single-quarter-turn branch.
  const double psi = std::atan2(-u_hat.y + 0.0, -u_hat.x + 0.0);
  if (psi >= 0.0 && psi <= M_PI / 2) return 0;
  if (psi > M_PI / 2) return 3;          // rotate by -pi/2
  if (psi > -M_PI / 2) return 1;         // rotate by +pi/2
  return 2;                              // rotate by pi
}

/// Applies k counterclockwise quarter turns to every geometric entity of the
/// packet: vectors rotate, corner slots permute, the departure position spins
/// about the cell center, and odd turns swap the second-derivative roles.
inline DataPacket rotate_packet(const DataPacket& p, int k) {
  k &= 3;
  if (k == 0) return p;
  DataPacket q = p;
  q.u_hat_a = detail::rotate_vec(p.u_hat_a, k);
  q.xd_rel = detail::rotate_local(p.xd_rel, k);
  const auto& perm = detail::rotation_slot_perm[static_cast<std::size_t>(k)];
  for (int s = 0; s < 4; ++s) {
    q.phi_corners[static_cast<std::size_t>(s)] = p.phi_corners[static_cast<std::size_t>(perm[static_cast<std::size_t>(s)])];
    q.u_corners[static_cast<std::size_t>(s)] =
        detail::rotate_vec(p.u_corners[static_cast<std::size_t>(perm[static_cast<std::size_t>(s)])], k);
  }
  if (k % 2 == 1) {
    q.phixx_d = p.phiyy_d;
    q.phiyy_d = p.phixx_d;
  }
  return q;
}

/// Standard-form reorientation: rotate until the angle of -u_hat_a lies in
/// [0, pi/2].  phi values, d, and kappa are invariant.
inline DataPacket reorient(const DataPacket& p) {
  return rotate_packet(p, reorientation_turns(p.u_hat_a));
}

/// Reflection about the slope-one line through the arrival point: swaps the
/// components of every vector, transposes corner slots across the diagonal,
/// and swaps the second derivatives.  Scalars are unchanged.
inline DataPacket reflect(const DataPacket& p) {
  DataPacket q = p;
  q.u_hat_a = {p.u_hat_a.y, p.u_hat_a.x};
  q.xd_rel = {p.xd_rel.y, p.xd_rel.x};
  for (int s = 0; s < 4; ++s) {
    const int o = detail::reflection_slot_perm[static_cast<std::size_t>(s)];
    q.phi_corners[static_cast<std::size_t>(s)] = p.phi_corners[static_cast<std::size_t>(o)];
    const Vec2 u = p.u_corners[static_cast<std::size_t>(o)];
    q.u_corners[static_cast<std::size_t>(s)] = {u.y, u.x};
  }
  q.phixx_d = p.phiyy_d;
  q.phiyy_d = p.phixx_d;
  return q;
}

/// Tuple-level standardization used when assembling learning data: curvature
/// normalization negates the target together with the packet's level-set
/// values, and reorientation rotates the packet into standard form.
inline LearningTuple standardize_tuple(const DataPacket& p, double target) {
  auto [q, sign] = normalize_curvature_sign(p);
  LearningTuple t;
  t.packet = reorient(q);
  t.target = sign > 0 ? -target : target;
  return t;
}

}  // namespace mlsl
