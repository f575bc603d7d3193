#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mlsl/interp.hpp"
#include "mlsl/quadtree.hpp"

using namespace mlsl;

namespace {

double circle_sdf(Vec2 p, Vec2 c, double r) {
  return (p - c).norm() - r;
}

// Brute-force oracle: fully refine to l_max, then greedily merge sibling
// quads whose parent violates the refinement criterion.  Returns the leaf
// set as (ix, iy, level) triples.
struct OracleCell {
  std::int64_t ix, iy;
  int level;
};

std::set<std::array<std::int64_t, 3>> oracle_leaves(const GridConfig& cfg,
                                                    const std::function<double(Vec2)>& phi) {
  const double macro_w = (cfg.domain_max.x - cfg.domain_min.x) / cfg.macromesh;
  const double h = macro_w / std::pow(2.0, cfg.l_max);
  auto pt = [&](std::int64_t ix, std::int64_t iy) {
    return Vec2{cfg.domain_min.x + ix * h, cfg.domain_min.y + iy * h};
  };
  auto criterion = [&](std::int64_t ix, std::int64_t iy, int level) {
    const std::int64_t w = std::int64_t{1} << (cfg.l_max - level);
    const double diag = h * static_cast<double>(w) * std::sqrt(2.0);
    double m = std::fabs(phi(pt(ix, iy)));
    m = std::min(m, std::fabs(phi(pt(ix + w, iy))));
    m = std::min(m, std::fabs(phi(pt(ix, iy + w))));
    m = std::min(m, std::fabs(phi(pt(ix + w, iy + w))));
    const double band = cfg.band_halfwidth * h * std::sqrt(2.0);
    return m <= cfg.lip * diag || (band > 0.0 && m <= band);
  };

  // Start fully refined.
  std::set<std::array<std::int64_t, 3>> leaves;
  const std::int64_t n = static_cast<std::int64_t>(cfg.macromesh) << cfg.l_max;
  for (std::int64_t j = 0; j < n; ++j)
    for (std::int64_t i = 0; i < n; ++i) leaves.insert({i, j, cfg.l_max});

  // Greedy merging from the finest level upward.
  for (int level = cfg.l_max; level >= 1; --level) {
    const std::int64_t w = std::int64_t{1} << (cfg.l_max - level);
    std::set<std::array<std::int64_t, 3>> next = leaves;
    for (const auto& leaf : leaves) {
      if (leaf[2] != level) continue;
      const std::int64_t pix = (leaf[0] / (2 * w)) * (2 * w);
      const std::int64_t piy = (leaf[1] / (2 * w)) * (2 * w);
      bool all_siblings = true;
      for (int cy = 0; cy < 2 && all_siblings; ++cy)
        for (int cx = 0; cx < 2 && all_siblings; ++cx)
          if (!next.count({pix + cx * w, piy + cy * w, level})) all_siblings = false;
      if (!all_siblings) continue;
      if (!criterion(pix, piy, level - 1)) {
        for (int cy = 0; cy < 2; ++cy)
          for (int cx = 0; cx < 2; ++cx) next.erase({pix + cx * w, piy + cy * w, level});
        next.insert({pix, piy, level - 1});
      }
    }
    leaves = std::move(next);
  }
  return leaves;
}

std::set<std::array<std::int64_t, 3>> grid_leaf_set(const QuadtreeGrid& g) {
  std::set<std::array<std::int64_t, 3>> out;
  for (auto id : g.leaves()) {
    const Cell& c = g.cells()[static_cast<std::size_t>(id)];
    out.insert({c.ix, c.iy, c.level});
  }
  return out;
}

}  // namespace

TEST_CASE("build_grid reproduces the published mesh size", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 6;
  auto g = build_grid(cfg, [](Vec2 p) { return circle_sdf(p, {0.0, 0.75}, 0.15); });
  CHECK(g.h_min() == 0.015625);  // 2^-6
  bool any_at_lmax = false;
  for (auto id : g.leaves())
    if (g.cells()[static_cast<std::size_t>(id)].level == 6) any_at_lmax = true;
  CHECK(any_at_lmax);
}

TEST_CASE("build_grid leaves all macrocells coarse without an interface", "[quadtree]") {
  GridConfig cfg;
  cfg.domain_min = {0.0, 0.0};
  cfg.domain_max = {1.0, 1.0};
  cfg.l_max = 5;  // lip * root diagonal ~ 0.85 < |phi|, so the criterion never fires
  auto g = build_grid(cfg, [](Vec2) { return 1.0; });
  REQUIRE(g.leaves().size() == 4);
  for (auto id : g.leaves()) CHECK(g.cells()[static_cast<std::size_t>(id)].level == 0);
}

TEST_CASE("build_grid matches the refine-then-coarsen oracle", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 4;
  auto phi = [](Vec2 p) { return circle_sdf(p, {0.0, 0.0}, 0.25); };
  auto g = build_grid(cfg, phi);
  CHECK(grid_leaf_set(g) == oracle_leaves(cfg, phi));
}

TEST_CASE("build_grid with a uniform band matches the oracle", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 5;
  cfg.band_halfwidth = 7.0;
  auto phi = [](Vec2 p) { return circle_sdf(p, {0.1, -0.2}, 0.3); };
  auto g = build_grid(cfg, phi);
  CHECK(grid_leaf_set(g) == oracle_leaves(cfg, phi));

  // Band guarantee: vertices with |phi| inside the band touch only finest leaves.
  const double band = cfg.band_halfwidth * g.h_min() * std::sqrt(2.0);
  for (auto id : g.leaves()) {
    const Cell& c = g.cells()[static_cast<std::size_t>(id)];
    if (c.level == cfg.l_max) continue;
    for (int s = 0; s < 4; ++s) {
      const Vec2 v = g.node_pos(c.corner_node[static_cast<std::size_t>(s)]);
      CHECK(std::fabs(phi(v)) > band);
    }
  }
}

TEST_CASE("build_grid rejects bad inputs", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 0;
  CHECK_THROWS_AS(build_grid(cfg, [](Vec2) { return 1.0; }), std::invalid_argument);
  cfg.l_max = 30;
  CHECK_THROWS_AS(build_grid(cfg, [](Vec2) { return 1.0; }), std::invalid_argument);
  cfg.l_max = 3;
  CHECK_THROWS(build_grid(cfg, [](Vec2 p) { return p.x > 0 ? 1.0 : std::nan(""); }));
}

TEST_CASE("leaves tile the domain exactly", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 5;
  auto g = build_grid(cfg, [](Vec2 p) { return circle_sdf(p, {0.3, 0.1}, 0.4); });
  std::int64_t units = 0;
  for (auto id : g.leaves()) {
    const std::int64_t w = g.width_units(g.cells()[static_cast<std::size_t>(id)].level);
    units += w * w;
  }
  const std::int64_t total = g.lattice_extent() * g.lattice_extent();
  CHECK(units == total);
}

TEST_CASE("refinement is idempotent on its own sampled output", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 5;
  auto phi = [](Vec2 p) { return circle_sdf(p, {-0.2, 0.35}, 0.3); };
  auto g1 = build_grid(cfg, phi);
  ScalarField f = evaluate_scalar(g1, phi);
  auto g2 = build_grid(cfg, [&](Vec2 p) { return sample_scalar(g1, f, p); });
  CHECK(g1.leaf_signature() == g2.leaf_signature());
}

TEST_CASE("locate_owner resolves ties toward the cell whose corner is the point", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 3;
  auto g = build_grid(cfg, [](Vec2 p) { return 0.01 * p.x + 0.005; });  // keeps everything refined
  const Vec2 center{0.0, 0.0};
  const std::int32_t owner = g.locate_owner(center);
  const Cell& c = g.cells()[static_cast<std::size_t>(owner)];
  CHECK(g.cell_corner(c) == center);

  // Strict interior points map to the covering leaf.
  const Vec2 q{0.03, -0.97};
  const Cell& cq = g.cells()[static_cast<std::size_t>(g.locate_owner(q))];
  const Vec2 lo = g.cell_corner(cq);
  const double w = g.cell_width(cq);
  CHECK(q.x >= lo.x);
  CHECK(q.x <= lo.x + w);
  CHECK(q.y >= lo.y);
  CHECK(q.y <= lo.y + w);
}

TEST_CASE("locate_owner rejects outside points and matches a linear scan", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 5;
  auto g = build_grid(cfg, [](Vec2 p) { return circle_sdf(p, {0.0, 0.2}, 0.45); });
  CHECK_THROWS_AS(g.locate_owner({1.5, 0.0}), std::out_of_range);

  // Linear-scan oracle: half-open extents [x0, x0+w) tile the domain, closed
  // on the domain's max-side faces; the unique covering leaf is the owner.
  auto scan = [&](Vec2 p) {
    std::int32_t best = -1;
    for (auto id : g.leaves()) {
      const Cell& c = g.cells()[static_cast<std::size_t>(id)];
      const Vec2 lo = g.cell_corner(c);
      const double w = g.cell_width(c);
      const bool in_x = p.x >= lo.x && (p.x < lo.x + w ||
                        (p.x == lo.x + w && lo.x + w == g.domain().hi.x));
      const bool in_y = p.y >= lo.y && (p.y < lo.y + w ||
                        (p.y == lo.y + w && lo.y + w == g.domain().hi.y));
      if (in_x && in_y) {
        REQUIRE(best < 0);  // uniqueness of the half-open tiling
        best = id;
      }
    }
    return best;
  };

  std::mt19937_64 rng(1234);
  auto u = [&]() { return -1.0 + 2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (int i = 0; i < 10000; ++i) {
    Vec2 p{u(), u()};
    if (i % 7 == 0) p.x = std::round(p.x * 32.0) / 32.0;  // exercise lattice-aligned points
    if (i % 5 == 0) p.y = std::round(p.y * 32.0) / 32.0;
    CHECK(g.locate_owner(p) == scan(p));
  }
}

TEST_CASE("node_stencil completeness matches the vertex-hash oracle", "[quadtree]") {
  GridConfig cfg;
  cfg.l_max = 6;
  cfg.band_halfwidth = 2.0;
  auto phi = [](Vec2 p) { return circle_sdf(p, {0.0, 0.75}, 0.15); };
  auto g = build_grid(cfg, phi);

  CHECK_THROWS_AS(g.node_stencil(-1), std::out_of_range);
  CHECK_THROWS_AS(g.node_stencil(static_cast<std::int32_t>(g.node_count())), std::out_of_range);

  int complete_in_band = 0;
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    const auto st = g.node_stencil(static_cast<std::int32_t>(n));
    const GridNode& gn = g.nodes()[n];
    bool oracle = true;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (g.find_node(gn.ix + dx, gn.iy + dy) < 0) oracle = false;
      }
    CHECK(st.complete == oracle);
    if (st.complete && std::fabs(phi({gn.x, gn.y})) < g.h_min()) ++complete_in_band;
    if (st.complete)
      for (auto nb : st.neighbors) CHECK(nb >= 0);
  }
  CHECK(complete_in_band > 0);
}

TEST_CASE("grid dump lists leaves and vertices", "[quadtree]") {
  GridConfig cfg;
  cfg.domain_min = {0.0, 0.0};
  cfg.domain_max = {1.0, 1.0};
  cfg.l_max = 2;
  auto g = build_grid(cfg, [](Vec2) { return 1.0; });
  std::ostringstream os;
  g.dump(os);
  const std::string s = os.str();
  CHECK(s.find("leaf 0 ") != std::string::npos);
  CHECK(s.find("node 0 ") != std::string::npos);
}
