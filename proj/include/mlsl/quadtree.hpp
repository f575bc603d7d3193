#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlsl/geometry.hpp"

namespace mlsl {

/// Parameters of a quadtree discretization of a rectangular domain.
///
/// The domain is first split into `macromesh` x `macromesh` square root cells;
/// each root either subdivides down to `l_max` near the zero level set of the
/// refinement function or stays coarse away from it.  `band_halfwidth` forces
/// full refinement within that many finest-cell diagonals of the interface.
struct GridConfig {
  Vec2 domain_min{-1.0, -1.0};
  Vec2 domain_max{+1.0, +1.0};
  int macromesh = 2;
  int l_max = 6;
  double lip = 1.2;
  double band_halfwidth = 0.0;

  void validate() const {
    if (!(domain_max.x > domain_min.x) || !(domain_max.y > domain_min.y))
      throw std::invalid_argument("GridConfig: domain_max must exceed domain_min");
    if (macromesh < 1) throw std::invalid_argument("GridConfig: macromesh must be >= 1");
    if (l_max < 1) throw std::invalid_argument("GridConfig: l_max must be >= 1");
    if (l_max > 24) throw std::invalid_argument("GridConfig: l_max too large for exact dyadic vertices");
    if (!(lip > 0.0)) throw std::invalid_argument("GridConfig: lip must be positive");
    if (band_halfwidth < 0.0) throw std::invalid_argument("GridConfig: band_halfwidth must be >= 0");
    const double wx = (domain_max.x - domain_min.x) / macromesh;
    const double wy = (domain_max.y - domain_min.y) / macromesh;
    if (std::fabs(wx - wy) > 1e-14 * wx)
      throw std::invalid_argument("GridConfig: macrocells must be square");
  }
};

struct Cell {
  std::int64_t ix = 0;   // lower-left corner in h_min lattice units
  std::int64_t iy = 0;
  std::int32_t level = 0;
  std::int32_t first_child = -1;                         // -1 => leaf; else 4 consecutive children
  std::array<std::int32_t, 4> corner_node{{-1, -1, -1, -1}};  // leaf corners [00,10,01,11]

  bool is_leaf() const { return first_child < 0; }
};

struct GridNode {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  double x = 0.0;
  double y = 0.0;
};

/// Full h-uniform 3x3 neighborhood of a vertex.  Neighbor slots are ordered
/// row-major over offsets (dx,dy) in {-1,0,1}^2 with the center skipped:
/// [(-1,-1),(0,-1),(1,-1),(-1,0),(1,0),(-1,1),(0,1),(1,1)].
struct NodeStencil {
  std::int32_t center = -1;
  std::array<std::int32_t, 8> neighbors{{-1, -1, -1, -1, -1, -1, -1, -1}};
  bool complete = false;
};

/// Non-graded quadtree Cartesian grid with deduplicated vertices.
///
/// Immutable after construction; regridding builds a new grid value.  Vertex
/// coordinates are exact dyadic multiples of h_min and deduplicated through
/// integer lattice keys, so shared corners across cells resolve to one node.
class QuadtreeGrid {
 public:
  QuadtreeGrid() = default;

  const GridConfig& config() const { return cfg_; }
  double h_min() const { return h_min_; }
  std::int64_t lattice_extent() const { return extent_; }  // finest cells per axis
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<GridNode>& nodes() const { return nodes_; }
  const std::vector<std::int32_t>& leaves() const { return leaf_ids_; }
  Box2 domain() const { return {cfg_.domain_min, cfg_.domain_max}; }

  std::size_t node_count() const { return nodes_.size(); }

  Vec2 node_pos(std::int32_t n) const {
    const GridNode& g = nodes_.at(static_cast<std::size_t>(n));
    return {g.x, g.y};
  }

  double cell_width(const Cell& c) const {
    return h_min_ * static_cast<double>(width_units(c.level));
  }

  Vec2 cell_corner(const Cell& c) const { return lattice_point(c.ix, c.iy); }

  std::int64_t width_units(std::int32_t level) const {
    return std::int64_t{1} << (cfg_.l_max - level);
  }

  Vec2 lattice_point(std::int64_t ix, std::int64_t iy) const {
    return {cfg_.domain_min.x + static_cast<double>(ix) * h_min_,
            cfg_.domain_min.y + static_cast<double>(iy) * h_min_};
  }

  /// Index of the registered vertex at lattice coordinates, or -1.
  std::int32_t find_node(std::int64_t ix, std::int64_t iy) const {
    if (ix < 0 || iy < 0 || ix > extent_ || iy > extent_) return -1;
    auto it = node_lookup_.find(lattice_key(ix, iy));
    return it == node_lookup_.end() ? -1 : it->second;
  }

  /// Maps a point to lattice coordinates; returns false if it is off-lattice.
  bool to_lattice(const Vec2& p, std::int64_t& ix, std::int64_t& iy) const {
    const double fx = (p.x - cfg_.domain_min.x) / h_min_;
    const double fy = (p.y - cfg_.domain_min.y) / h_min_;
    ix = static_cast<std::int64_t>(std::llround(fx));
    iy = static_cast<std::int64_t>(std::llround(fy));
    const Vec2 back = lattice_point(ix, iy);
    return back.x == p.x && back.y == p.y;
  }

  std::int32_t find_node(const Vec2& p) const {
    std::int64_t ix, iy;
    if (!to_lattice(p, ix, iy)) return -1;
    return find_node(ix, iy);
  }

  /// Leaf owning point p (closed domain).  Shared edges and corners resolve by
  /// floor indexing: p belongs to the cell having p on its lower/left boundary,
  /// clamped inward on the domain's max-side faces.
  std::int32_t locate_owner(const Vec2& p) const {
    if (!domain().contains(p))
      throw std::out_of_range("locate_owner: point outside domain");
    const double macro_w = h_min_ * static_cast<double>(std::int64_t{1} << cfg_.l_max);
    auto macro_index = [&](double v, double lo) {
      auto i = static_cast<std::int64_t>(std::floor((v - lo) / macro_w));
      if (i < 0) i = 0;
      if (i >= cfg_.macromesh) i = cfg_.macromesh - 1;
      return i;
    };
    const std::int64_t mi = macro_index(p.x, cfg_.domain_min.x);
    const std::int64_t mj = macro_index(p.y, cfg_.domain_min.y);
    std::int32_t c = static_cast<std::int32_t>(mj * cfg_.macromesh + mi);
    while (!cells_[static_cast<std::size_t>(c)].is_leaf()) {
      const Cell& cell = cells_[static_cast<std::size_t>(c)];
      const std::int64_t half = width_units(cell.level) / 2;
      const Vec2 mid = lattice_point(cell.ix + half, cell.iy + half);
      const int cx = p.x < mid.x ? 0 : 1;
      const int cy = p.y < mid.y ? 0 : 1;
      c = cell.first_child + static_cast<std::int32_t>(cy * 2 + cx);
    }
    return c;
  }

  NodeStencil node_stencil(std::int32_t node) const {
    if (node < 0 || static_cast<std::size_t>(node) >= nodes_.size())
      throw std::out_of_range("node_stencil: invalid node index");
    static constexpr int off[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0},
                                      {1, 0},   {-1, 1}, {0, 1},  {1, 1}};
    const GridNode& g = nodes_[static_cast<std::size_t>(node)];
    NodeStencil st;
    st.center = node;
    st.complete = true;
    for (int k = 0; k < 8; ++k) {
      st.neighbors[static_cast<std::size_t>(k)] = find_node(g.ix + off[k][0], g.iy + off[k][1]);
      if (st.neighbors[static_cast<std::size_t>(k)] < 0) st.complete = false;
    }
    return st;
  }

  /// Leaf signature for regrid-convergence tests.
  std::vector<std::array<std::int64_t, 3>> leaf_signature() const {
    std::vector<std::array<std::int64_t, 3>> sig;
    sig.reserve(leaf_ids_.size());
    for (std::int32_t id : leaf_ids_) {
      const Cell& c = cells_[static_cast<std::size_t>(id)];
      sig.push_back({c.ix, c.iy, c.level});
    }
    return sig;
  }

  /// Plain-text dump of leaves and vertices, one record per line.
  void dump(std::ostream& os) const {
    for (std::int32_t id : leaf_ids_) {
      const Cell& c = cells_[static_cast<std::size_t>(id)];
      const Vec2 corner = cell_corner(c);
      os << "leaf " << c.level << ' ' << corner.x << ' ' << corner.y << ' '
         << cell_width(c) << '\n';
    }
    for (std::size_t n = 0; n < nodes_.size(); ++n)
      os << "node " << n << ' ' << nodes_[n].x << ' ' << nodes_[n].y << '\n';
  }

  friend QuadtreeGrid build_grid(const GridConfig&, const std::function<double(Vec2)>&);

 private:
  GridConfig cfg_;
  double h_min_ = 0.0;
  std::int64_t extent_ = 0;
  std::vector<Cell> cells_;
  std::vector<GridNode> nodes_;
  std::vector<std::int32_t> leaf_ids_;
  std::unordered_map<std::uint64_t, std::int32_t> node_lookup_;

  std::int32_t register_node(std::int64_t ix, std::int64_t iy) {
    const std::uint64_t key = lattice_key(ix, iy);
    auto it = node_lookup_.find(key);
    if (it != node_lookup_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(nodes_.size());
    const Vec2 p = lattice_point(ix, iy);
    nodes_.push_back({ix, iy, p.x, p.y});
    node_lookup_.emplace(key, id);
    return id;
  }
};

/// Builds a quadtree by recursive subdivision from the macromesh roots.
///
/// A cell at level < l_max subdivides iff min over its corners |phi| <=
/// lip * diag(cell), or the corner minimum falls inside the uniform band
/// band_halfwidth * sqrt(2) * h_min.  phi must be finite wherever probed.
inline QuadtreeGrid build_grid(const GridConfig& cfg, const std::function<double(Vec2)>& phi) {
  cfg.validate();
  QuadtreeGrid grid;
  grid.cfg_ = cfg;
  const double macro_w = (cfg.domain_max.x - cfg.domain_min.x) / cfg.macromesh;
  grid.h_min_ = macro_w / static_cast<double>(std::int64_t{1} << cfg.l_max);
  grid.extent_ = static_cast<std::int64_t>(cfg.macromesh) << cfg.l_max;

  std::unordered_map<std::uint64_t, double> probe_cache;
  auto probe = [&](std::int64_t ix, std::int64_t iy) {
    const std::uint64_t key = lattice_key(ix, iy);
    auto it = probe_cache.find(key);
    if (it != probe_cache.end()) return it->second;
    const double v = phi(grid.lattice_point(ix, iy));
    if (!std::isfinite(v))
      throw std::runtime_error("build_grid: refinement function is not finite at a probed vertex");
    probe_cache.emplace(key, v);
    return v;
  };

  const double band = cfg.band_halfwidth * grid.h_min_ * std::sqrt(2.0);

  // Iterative subdivision; children are appended as four consecutive cells in
  // slot order [00,10,01,11], so traversal (and node numbering) is deterministic.
  const auto roots = static_cast<std::int64_t>(cfg.macromesh) * cfg.macromesh;
  for (std::int64_t j = 0; j < cfg.macromesh; ++j)
    for (std::int64_t i = 0; i < cfg.macromesh; ++i) {
      Cell root;
      root.ix = i << cfg.l_max;
      root.iy = j << cfg.l_max;
      root.level = 0;
      grid.cells_.push_back(root);
    }

  std::vector<std::int32_t> stack;
  for (std::int64_t r = roots - 1; r >= 0; --r) stack.push_back(static_cast<std::int32_t>(r));

  while (!stack.empty()) {
    const std::int32_t id = stack.back();
    stack.pop_back();
    Cell cell = grid.cells_[static_cast<std::size_t>(id)];
    const std::int64_t w = grid.width_units(cell.level);
    const double diag = grid.h_min_ * static_cast<double>(w) * std::sqrt(2.0);

    double min_abs = probe(cell.ix, cell.iy);
    min_abs = std::fabs(min_abs);
    min_abs = std::fmin(min_abs, std::fabs(probe(cell.ix + w, cell.iy)));
    min_abs = std::fmin(min_abs, std::fabs(probe(cell.ix, cell.iy + w)));
    min_abs = std::fmin(min_abs, std::fabs(probe(cell.ix + w, cell.iy + w)));

    const bool refine = cell.level < cfg.l_max &&
                        (min_abs <= cfg.lip * diag || (band > 0.0 && min_abs <= band));
    if (refine) {
      const auto first = static_cast<std::int32_t>(grid.cells_.size());
      grid.cells_[static_cast<std::size_t>(id)].first_child = first;
      const std::int64_t half = w / 2;
      for (int cy = 0; cy < 2; ++cy)
        for (int cx = 0; cx < 2; ++cx) {
          Cell child;
          child.ix = cell.ix + cx * half;
          child.iy = cell.iy + cy * half;
          child.level = cell.level + 1;
          grid.cells_.push_back(child);
        }
      for (int k = 3; k >= 0; --k) stack.push_back(first + k);
    } else {
      Cell& leaf = grid.cells_[static_cast<std::size_t>(id)];
      leaf.corner_node[0] = grid.register_node(cell.ix, cell.iy);
      leaf.corner_node[1] = grid.register_node(cell.ix + w, cell.iy);
      leaf.corner_node[2] = grid.register_node(cell.ix, cell.iy + w);
      leaf.corner_node[3] = grid.register_node(cell.ix + w, cell.iy + w);
      grid.leaf_ids_.push_back(id);
    }
  }
  return grid;
}

}  // namespace mlsl
