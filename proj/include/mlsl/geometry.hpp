#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mlsl {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return {v.x * s, v.y * s}; }

/// Axis-aligned box used for the computational domain.
struct Box2 {
  Vec2 lo;
  Vec2 hi;

  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Vec2 clamp(const Vec2& p) const {
    return {std::fmin(std::fmax(p.x, lo.x), hi.x),
            std::fmin(std::fmax(p.y, lo.y), hi.y)};
  }
  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
};

/// Packs nonnegative lattice coordinates into a single hashable key.
inline std::uint64_t lattice_key(std::int64_t ix, std::int64_t iy) {
  return (static_cast<std::uint64_t>(iy) << 32) | static_cast<std::uint64_t>(ix);
}

}  // namespace mlsl
