#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mlsl/sampling.hpp"

using namespace mlsl;

namespace {

struct Uniform {
  std::mt19937_64 rng;
  explicit Uniform(std::uint64_t seed) : rng(seed) {}
  double operator()(double a, double b) {
    return a + (b - a) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }
};

DataPacket random_packet(Uniform& u) {
  DataPacket p;
  p.phi_a = u(-1, 1);
  p.u_hat_a = {u(-1, 1), u(-1, 1)};
  if (p.u_hat_a.norm() < 1e-3) p.u_hat_a = {0.5, -0.25};
  p.d = u(0, 1.5);
  p.xd_rel = {u(0, 1), u(0, 1)};
  for (auto& v : p.phi_corners) v = u(-1, 1);
  for (auto& v : p.u_corners) v = {u(-1, 1), u(-1, 1)};
  p.phixx_d = u(-2, 2);
  p.phiyy_d = u(-2, 2);
  p.kappa_a = u(-3, 3);
  p.phi_d = u(-1, 1);
  return p;
}

Vec2 slot_pos(int s) { return {s & 1 ? 1.0 : 0.0, s & 2 ? 1.0 : 0.0}; }

}  // namespace

TEST_CASE("packet flatten/unflatten is the frozen 22-feature layout", "[sampling]") {
  Uniform u(1);
  const DataPacket p = random_packet(u);
  const auto f = p.flatten();
  CHECK(f.size() == 22);
  CHECK(f[0] == p.phi_a);
  CHECK(f[3] == p.d);
  CHECK(f[21] == p.phi_d);
  CHECK(DataPacket::unflatten(f) == p);
  CHECK(packet_feature_names().size() == 22);
}

TEST_CASE("curvature-sign normalization follows the stated rule", "[sampling]") {
  Uniform u(2);
  DataPacket p = random_packet(u);

  p.kappa_a = -2.0;
  auto [same, s1] = normalize_curvature_sign(p);
  CHECK(s1 == -1);
  CHECK(same == p);

  p.kappa_a = 2.0;
  p.phi_a = 0.3;
  auto [neg, s2] = normalize_curvature_sign(p);
  CHECK(s2 == +1);
  CHECK(neg.phi_a == -0.3);
  CHECK(neg.kappa_a == -2.0);
  CHECK(neg.phi_d == -p.phi_d);
  CHECK(neg.phixx_d == -p.phixx_d);
  for (int s = 0; s < 4; ++s) {
    CHECK(neg.phi_corners[static_cast<std::size_t>(s)] == -p.phi_corners[static_cast<std::size_t>(s)]);
    CHECK(neg.u_corners[static_cast<std::size_t>(s)] == p.u_corners[static_cast<std::size_t>(s)]);
  }
  CHECK(neg.xd_rel == p.xd_rel);
  CHECK(neg.d == p.d);

  // kappa = 0 takes the no-transformation branch.
  p.kappa_a = 0.0;
  auto [zero, s3] = normalize_curvature_sign(p);
  CHECK(s3 == -1);
  CHECK(zero == p);

  // Negating the negated packet restores the original bit-identically.
  p.kappa_a = 2.0;
  auto [once, sign] = normalize_curvature_sign(p);
  REQUIRE(sign == +1);
  DataPacket undone = once;
  undone.phi_a = -undone.phi_a;
  for (auto& v : undone.phi_corners) v = -v;
  undone.phi_d = -undone.phi_d;
  undone.kappa_a = -undone.kappa_a;
  undone.phixx_d = -undone.phixx_d;
  undone.phiyy_d = -undone.phiyy_d;
  CHECK(undone == p);
}

TEST_CASE("rotate_packet matches a world-rotation oracle", "[sampling]") {
  // Fields sampled on the unit cell; rotating the world by 90 degrees ccw
  // must agree with the packet-level permutation tables.
  auto phi = [](Vec2 p) { return 0.3 * p.x + 1.7 * p.y * p.y - 0.25 * p.x * p.y + 0.1; };
  auto vel = [](Vec2 p) { return Vec2{0.9 - 0.4 * p.y, 0.2 + 0.8 * p.x * p.x}; };

  DataPacket a;
  a.phi_a = 0.42;
  a.d = 0.77;
  a.kappa_a = -1.3;
  a.xd_rel = {0.375, 0.8125};
  a.u_hat_a = vel(a.xd_rel);
  for (int s = 0; s < 4; ++s) {
    a.phi_corners[static_cast<std::size_t>(s)] = phi(slot_pos(s));
    a.u_corners[static_cast<std::size_t>(s)] = vel(slot_pos(s));
  }
  a.phixx_d = -0.6;
  a.phiyy_d = 3.4;
  a.phi_d = phi(a.xd_rel);

  // World rotation W (90 ccw about the center): fields transform as
  // phi'(W x) = phi(x), u'(W x) = R u(x), phi'_xx <-> phi_yy.
  auto world = [](Vec2 p) { return Vec2{1.0 - p.y, p.x}; };
  auto rot_v = [](Vec2 v) { return Vec2{-v.y, v.x}; };

  DataPacket b;
  b.phi_a = a.phi_a;
  b.d = a.d;
  b.kappa_a = a.kappa_a;
  b.xd_rel = world(a.xd_rel);
  b.u_hat_a = rot_v(a.u_hat_a);
  for (int s = 0; s < 4; ++s)
    for (int o = 0; o < 4; ++o)
      if (world(slot_pos(o)) == slot_pos(s)) {
        b.phi_corners[static_cast<std::size_t>(s)] = a.phi_corners[static_cast<std::size_t>(o)];
        b.u_corners[static_cast<std::size_t>(s)] = rot_v(a.u_corners[static_cast<std::size_t>(o)]);
      }
  b.phixx_d = a.phiyy_d;
  b.phiyy_d = a.phixx_d;
  b.phi_d = a.phi_d;

  CHECK(rotate_packet(a, 1) == b);
  CHECK(rotate_packet(rotate_packet(rotate_packet(rotate_packet(a, 1), 1), 1), 1) == a);
}

TEST_CASE("reorient brings -u_hat into the first quadrant and round-trips", "[sampling]") {
  Uniform u(3);

  // Already standard: -u_hat at 45 degrees.
  DataPacket std_p = random_packet(u);
  std_p.u_hat_a = {-1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0)};
  CHECK(reorient(std_p) == std_p);

  // u_hat = (1, 0): -u_hat at 180 degrees, fixed by a single clockwise turn.
  DataPacket px = random_packet(u);
  px.u_hat_a = {1.0, 0.0};
  CHECK(reorientation_turns(px.u_hat_a) == 3);
  const DataPacket rotated = reorient(px);
  CHECK(rotate_packet(rotated, 1) == px);

  DataPacket zero = px;
  zero.u_hat_a = {0.0, 0.0};
  CHECK_THROWS_AS(reorient(zero), std::invalid_argument);

  // Property sweep: the reoriented angle lands in [0, pi/2]; invariant
  // scalars are preserved and the inverse rotation restores the input.
  for (int trial = 0; trial < 10000; ++trial) {
    DataPacket p = random_packet(u);
    const int k = reorientation_turns(p.u_hat_a);
    const DataPacket q = reorient(p);
    const double ang = std::atan2(-q.u_hat_a.y, -q.u_hat_a.x);
    CHECK(ang >= -1e-15);
    CHECK(ang <= M_PI / 2 + 1e-15);
    CHECK(q.phi_a == p.phi_a);
    CHECK(q.phi_d == p.phi_d);
    CHECK(q.d == p.d);
    CHECK(q.kappa_a == p.kappa_a);
    CHECK(q.u_hat_a.norm() == Catch::Approx(p.u_hat_a.norm()).epsilon(1e-14));
    CHECK(rotate_packet(q, (4 - k) & 3) == p);
  }
}

TEST_CASE("reflect swaps components and is a bitwise involution", "[sampling]") {
  Uniform u(4);
  DataPacket p = random_packet(u);
  p.u_hat_a = {0.3, -0.8};
  const DataPacket r = reflect(p);
  CHECK(r.u_hat_a == Vec2{-0.8, 0.3});
  CHECK(r.phi_a == p.phi_a);
  CHECK(r.phi_d == p.phi_d);
  CHECK(r.d == p.d);
  CHECK(r.kappa_a == p.kappa_a);
  CHECK(r.phi_corners[0] == p.phi_corners[0]);
  CHECK(r.phi_corners[3] == p.phi_corners[3]);
  CHECK(r.phi_corners[1] == p.phi_corners[2]);
  CHECK(r.phi_corners[2] == p.phi_corners[1]);
  CHECK(r.phixx_d == p.phiyy_d);

  for (int trial = 0; trial < 10000; ++trial) {
    const DataPacket q = random_packet(u);
    CHECK(reflect(reflect(q)) == q);
  }

  // A diagonal-symmetric packet is a fixed point.
  DataPacket sym = random_packet(u);
  sym.u_hat_a = {0.4, 0.4};
  sym.xd_rel = {0.25, 0.25};
  sym.phi_corners = {1.0, 2.0, 2.0, 3.0};
  sym.u_corners = {Vec2{0.1, 0.1}, Vec2{0.5, 0.7}, Vec2{0.7, 0.5}, Vec2{0.2, 0.2}};
  sym.phixx_d = sym.phiyy_d = 1.5;
  CHECK(reflect(sym) == sym);
}

TEST_CASE("standardize_tuple negates the target with the packet", "[sampling]") {
  Uniform u(5);
  DataPacket p = random_packet(u);
  p.kappa_a = 1.0;
  const double target = 0.37;
  const LearningTuple t = standardize_tuple(p, target);
  CHECK(t.target == -target);
  CHECK(t.packet.kappa_a == -1.0);

  p.kappa_a = -1.0;
  CHECK(standardize_tuple(p, target).target == target);

  // Reflection leaves the learning target untouched.
  const LearningTuple refl{reflect(t.packet), t.target};
  CHECK(refl.target == t.target);
}

TEST_CASE("collect_data_packets applies the validity rules", "[sampling]") {
  const Vec2 c{0.0, 0.75};
  const double r = 0.15;
  GridConfig cfg;
  cfg.l_max = 6;
  cfg.band_halfwidth = 2.0;

  SimulationState s;
  s.grid = build_grid(cfg, [=](Vec2 p) { return (p - c).norm() - r; });
  s.phi = evaluate_scalar(s.grid, [=](Vec2 p) { return (p - c).norm() - r; });

  // Zero velocity everywhere: no packets.
  s.vel = VectorField(s.grid.node_count(), {0.0, 0.0});
  auto aux = make_aux_fields(s.grid, s.phi);
  auto [none, none_coords] = collect_data_packets(s, aux, s.grid.h_min());
  CHECK(none.empty());
  CHECK(none_coords.empty());

  // Rotation flow: packets match an independent full scan of the rules.
  auto rot = [](Vec2 p) { return Vec2{-p.y, p.x} / std::sqrt(2.0); };
  s.vel = evaluate_vector(s.grid, rot);
  const double dt = s.grid.h_min();
  auto [packets, coords] = collect_data_packets(s, aux, dt);
  REQUIRE(!packets.empty());
  CHECK(packets.size() == coords.size());

  const auto band = nodes_next_to_gamma(s.grid, s.phi);
  CHECK(packets.size() <= band.size());

  std::size_t expected = 0;
  SampleOptions quad{InterpMode::quadratic, false};
  std::size_t pi = 0;
  for (auto n : band) {
    const Vec2 xa = s.grid.node_pos(n);
    const Vec2 ua = sample_vector(s.grid, s.vel, xa, true);
    const Vec2 xhat = xa - (dt / 2.0) * ua;
    if (!s.grid.domain().contains(xhat)) continue;
    const Vec2 uhat = sample_vector(s.grid, s.vel, xhat, true);
    if (uhat.norm() <= 1e-10) continue;
    const Vec2 xd = xa - dt * uhat;
    if (!s.grid.domain().contains(xd)) continue;
    const Cell& cell = s.grid.cells()[static_cast<std::size_t>(s.grid.locate_owner(xd))];
    if (cell.level != cfg.l_max) continue;
    ++expected;

    REQUIRE(pi < packets.size());
    const DataPacket& p = packets[pi];
    CHECK(coords[pi] == xa);
    CHECK(p.phi_a == s.phi[static_cast<std::size_t>(n)]);
    CHECK(p.d == Catch::Approx((xd - xa).norm()).margin(1e-12));
    CHECK(p.u_hat_a.x == Catch::Approx(uhat.x).margin(1e-12));
    const Vec2 corner = s.grid.cell_corner(cell);
    const double w = s.grid.cell_width(cell);
    CHECK(p.xd_rel.x == Catch::Approx((xd.x - corner.x) / w).margin(1e-12));
    CHECK(p.xd_rel.y == Catch::Approx((xd.y - corner.y) / w).margin(1e-12));
    const double phid = sample_scalar(s.grid, s.phi, xd, quad, &aux.phixx, &aux.phiyy);
    CHECK(p.phi_d == Catch::Approx(phid).margin(1e-12));
    ++pi;
  }
  CHECK(packets.size() == expected);

  // Planar field under constant flow: phi_d = phi_a - dt exactly.
  SimulationState flat;
  GridConfig fcfg;
  fcfg.l_max = 5;
  fcfg.lip = 1e9;
  flat.grid = build_grid(fcfg, [](Vec2) { return 0.0; });
  flat.phi = evaluate_scalar(flat.grid, [](Vec2 p) { return p.x; });
  flat.vel = VectorField(flat.grid.node_count(), {1.0, 0.0});
  auto faux = make_aux_fields(flat.grid, flat.phi);
  const double fdt = flat.grid.h_min();
  auto [fp, fc] = collect_data_packets(flat, faux, fdt);
  REQUIRE(!fp.empty());
  REQUIRE(!fc.empty());
  for (const auto& p : fp) {
    CHECK(p.phi_d == Catch::Approx(p.phi_a - fdt).margin(1e-13));
    CHECK(p.d == Catch::Approx(fdt).margin(1e-15));
  }
}
