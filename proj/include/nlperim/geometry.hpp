#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"

namespace nlperim {

// ===== Basic 2D types =====

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double t, Vec2 a) { return {t * a.x, t * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct Rect {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double diameter() const { return std::hypot(width(), height()); }
  bool degenerate() const { return !(xmax > xmin) || !(ymax > ymin); }
  bool contains(Vec2 p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
};

inline double distance_to_rect(Vec2 p, const Rect& r) {
  const double dx = std::max({r.xmin - p.x, 0.0, p.x - r.xmax});
  const double dy = std::max({r.ymin - p.y, 0.0, p.y - r.ymax});
  return std::hypot(dx, dy);
}

// ===== 1D interval sets =====

struct Interval {
  double left = 0.0, right = 0.0;
  double length() const { return right - left; }
};

struct IntervalSet {
  std::vector<Interval> intervals;  // sorted, pairwise disjoint

  bool empty() const { return intervals.empty(); }
  double measure() const {
    double m = 0.0;
    for (const auto& iv : intervals) m += iv.length();
    return m;
  }
};

inline IntervalSet make_interval_set(std::vector<std::pair<double, double>> raw) {
  for (const auto& [l, r] : raw)
    if (!(l < r)) throw NonPositiveInterval("interval endpoints must satisfy left < right");
  std::sort(raw.begin(), raw.end());
  IntervalSet out;
  for (const auto& [l, r] : raw) {
    if (!out.intervals.empty() && l <= out.intervals.back().right)
      out.intervals.back().right = std::max(out.intervals.back().right, r);
    else
      out.intervals.push_back({l, r});
  }
  return out;
}

inline IntervalSet translate(const IntervalSet& e, double dx) {
  IntervalSet out = e;
  for (auto& iv : out.intervals) {
    iv.left += dx;
    iv.right += dx;
  }
  return out;
}

inline IntervalSet scale(const IntervalSet& e, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("scale factor must be positive");
  IntervalSet out = e;
  for (auto& iv : out.intervals) {
    iv.left *= lambda;
    iv.right *= lambda;
  }
  return out;
}

// Complement of e within the window (a,b), as a finite interval set.
inline IntervalSet complement_within(const IntervalSet& e, double a, double b) {
  if (!(a < b)) throw OrderingError("window must satisfy a < b");
  IntervalSet out;
  double cursor = a;
  for (const auto& iv : e.intervals) {
    const double l = std::max(iv.left, a), r = std::min(iv.right, b);
    if (l >= r) continue;
    if (l > cursor) out.intervals.push_back({cursor, l});
    cursor = std::max(cursor, r);
  }
  if (cursor < b) out.intervals.push_back({cursor, b});
  return out;
}

// Union of (a^{2k+1}, a^{2k}) for k = 1..K: finite s-perimeter for every s,
// yet the number of jump points grows without bound as K does.
inline IntervalSet counterexample_set(double a, int K) {
  if (!(a > 0.0 && a < 1.0)) throw DomainError("ratio must lie in (0,1)");
  if (K < 1) throw DomainError("generation count must be >= 1");
  std::vector<std::pair<double, double>> raw;
  raw.reserve(K);
  for (int k = 1; k <= K; ++k)
    raw.push_back({std::pow(a, 2 * k + 1), std::pow(a, 2 * k)});
  return make_interval_set(std::move(raw));
}

// ===== Pixel sets =====

struct GridSet {
  int width = 0, height = 0;
  Vec2 origin;
  double h = 1.0;
  std::vector<std::uint8_t> occupancy;  // row-major, one entry per cell

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * width + i;
  }
  bool test(int i, int j) const { return occupancy[index(i, j)] != 0; }
  void set(int i, int j, bool on) { occupancy[index(i, j)] = on ? 1 : 0; }
  Vec2 cell_center(int i, int j) const {
    return {origin.x + (i + 0.5) * h, origin.y + (j + 0.5) * h};
  }
  std::size_t count_set() const {
    std::size_t c = 0;
    for (auto b : occupancy) c += (b != 0);
    return c;
  }
  double measure() const { return h * h * static_cast<double>(count_set()); }
  Rect frame() const {
    return {origin.x, origin.y, origin.x + width * h, origin.y + height * h};
  }
};

inline GridSet complement(const GridSet& g) {
  GridSet out = g;
  for (auto& b : out.occupancy) b = b ? 0 : 1;
  return out;
}

// ===== Analytic shapes =====

struct Ball {
  Vec2 center;
  double radius = 1.0;
};

// {x : x . normal <= offset}
struct HalfSpace {
  Vec2 normal{0.0, 1.0};
  double offset = 0.0;
};

// {(t, y) : |t| < radius, -radius < y < u(t)} with u given by polynomial
// coefficients (constant term first).  u(0)=0 and u'(0)=0 are required.
struct Subgraph {
  double radius = 1.0;
  std::vector<double> coeff;
};

struct Polygon {
  std::vector<Vec2> vertices;  // counterclockwise, simple
};

using AnalyticShape = std::variant<Ball, HalfSpace, Subgraph, Polygon>;

inline double poly_eval(const std::vector<double>& coeff, double t) {
  double v = 0.0;
  for (std::size_t k = coeff.size(); k-- > 0;) v = v * t + coeff[k];
  return v;
}

inline void validate(const Ball& b) {
  if (!(b.radius > 0.0)) throw DomainError("ball radius must be positive");
}
inline void validate(const HalfSpace& hs) {
  if (std::abs(norm(hs.normal) - 1.0) > 1e-12)
    throw DomainError("half-space normal must be a unit vector");
}
inline void validate(const Subgraph& g) {
  if (!(g.radius > 0.0)) throw DomainError("subgraph radius must be positive");
  if (!g.coeff.empty() && g.coeff[0] != 0.0)
    throw DomainError("subgraph function must vanish at 0");
  if (g.coeff.size() > 1 && g.coeff[1] != 0.0)
    throw DomainError("subgraph function must have zero slope at 0");
}
inline void validate(const Polygon& p) {
  if (p.vertices.size() < 3) throw DomainError("polygon needs at least 3 vertices");
}
inline void validate(const AnalyticShape& s) {
  std::visit([](const auto& v) { validate(v); }, s);
}

inline bool contains(const Ball& b, Vec2 p) { return norm(p - b.center) < b.radius; }
inline bool contains(const HalfSpace& hs, Vec2 p) {
  return dot(p, hs.normal) <= hs.offset;
}
inline bool contains(const Subgraph& g, Vec2 p) {
  return std::abs(p.x) < g.radius && p.y > -g.radius && p.y < poly_eval(g.coeff, p.x);
}
inline bool contains(const Polygon& poly, Vec2 p) {
  // crossing-number test
  bool inside = false;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double xc = v[j].x + (p.y - v[j].y) / (v[i].y - v[j].y) * (v[i].x - v[j].x);
      if (p.x < xc) inside = !inside;
    }
  }
  return inside;
}
inline bool contains(const AnalyticShape& s, Vec2 p) {
  return std::visit([&](const auto& v) { return contains(v, p); }, s);
}

inline double area(const Ball& b) { return kPi * b.radius * b.radius; }
inline double area(const Polygon& poly) {
  double a2 = 0.0;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++)
    a2 += cross(v[j], v[i]);
  return 0.5 * a2;
}

inline Rect bounding_box(const Ball& b) {
  return {b.center.x - b.radius, b.center.y - b.radius, b.center.x + b.radius,
          b.center.y + b.radius};
}
inline Rect bounding_box(const Polygon& poly) {
  Rect r{poly.vertices[0].x, poly.vertices[0].y, poly.vertices[0].x, poly.vertices[0].y};
  for (const auto& v : poly.vertices) {
    r.xmin = std::min(r.xmin, v.x);
    r.ymin = std::min(r.ymin, v.y);
    r.xmax = std::max(r.xmax, v.x);
    r.ymax = std::max(r.ymax, v.y);
  }
  return r;
}
inline Rect bounding_box(const Subgraph& g) {
  double top = 0.0;
  for (int i = 0; i <= 64; ++i)
    top = std::max(top, poly_eval(g.coeff, -g.radius + 2.0 * g.radius * i / 64.0));
  return {-g.radius, -g.radius, g.radius, top};
}
inline Rect bounding_box(const GridSet& g) { return g.frame(); }

// ===== Koch snowflake =====

struct Segment {
  Vec2 a, b;
};

struct Triangle {
  Vec2 a, b, c;  // counterclockwise

  bool contains(Vec2 p) const {
    return cross(b - a, p - a) >= 0.0 && cross(c - b, p - b) >= 0.0 &&
           cross(a - c, p - c) >= 0.0;
  }
  double area() const { return 0.5 * cross(b - a, c - a); }
  Rect bbox() const {
    return {std::min({a.x, b.x, c.x}), std::min({a.y, b.y, c.y}),
            std::max({a.x, b.x, c.x}), std::max({a.y, b.y, c.y})};
  }
};

struct KochApproximation {
  int generation = 0;
  double side = 1.0;
  std::vector<Triangle> triangles;  // base triangle first, then spikes by generation
  std::vector<Vec2> outline;        // counterclockwise boundary polygon

  // uniform bucket index over the bounding box, for point queries
  Rect box;
  int buckets_per_side = 1;
  std::vector<std::vector<std::int32_t>> buckets;

  std::size_t bucket_of(Vec2 p) const {
    int bi = static_cast<int>((p.x - box.xmin) / box.width() * buckets_per_side);
    int bj = static_cast<int>((p.y - box.ymin) / box.height() * buckets_per_side);
    bi = std::clamp(bi, 0, buckets_per_side - 1);
    bj = std::clamp(bj, 0, buckets_per_side - 1);
    return static_cast<std::size_t>(bj) * buckets_per_side + bi;
  }
};

inline KochApproximation koch_snowflake(int k, double side) {
  if (k < 0) throw DomainError("generation must be nonnegative");
  if (!(side > 0.0)) throw DomainError("side must be positive");
  const double r3 = std::sqrt(3.0);
  KochApproximation out;
  out.generation = k;
  out.side = side;
  const Vec2 v0{0.0, side / r3};
  const Vec2 v1{-0.5 * side, -side / (2.0 * r3)};
  const Vec2 v2{0.5 * side, -side / (2.0 * r3)};
  out.outline = {v0, v1, v2};
  out.triangles = {Triangle{v0, v1, v2}};
  for (int gen = 1; gen <= k; ++gen) {
    std::vector<Vec2> next;
    next.reserve(4 * out.outline.size());
    for (std::size_t e = 0; e < out.outline.size(); ++e) {
      const Vec2 p = out.outline[e];
      const Vec2 q = out.outline[(e + 1) % out.outline.size()];
      const Vec2 d = (1.0 / 3.0) * (q - p);
      const Vec2 m1 = p + d, m2 = p + 2.0 * d;
      // rotate the middle third by -60 degrees: spikes point outward (right
      // of the counterclockwise direction of travel)
      const Vec2 u = m2 - m1;
      const Vec2 apex = m1 + Vec2{0.5 * u.x + 0.5 * r3 * u.y, -0.5 * r3 * u.x + 0.5 * u.y};
      next.insert(next.end(), {p, m1, apex, m2});
      out.triangles.push_back({m1, apex, m2});
    }
    out.outline = std::move(next);
  }
  // index
  Rect r{out.outline[0].x, out.outline[0].y, out.outline[0].x, out.outline[0].y};
  for (const auto& v : out.outline) {
    r.xmin = std::min(r.xmin, v.x);
    r.ymin = std::min(r.ymin, v.y);
    r.xmax = std::max(r.xmax, v.x);
    r.ymax = std::max(r.ymax, v.y);
  }
  out.box = r;
  out.buckets_per_side = std::clamp(1 << (k + 1), 8, 256);
  out.buckets.assign(static_cast<std::size_t>(out.buckets_per_side) * out.buckets_per_side, {});
  for (std::size_t t = 0; t < out.triangles.size(); ++t) {
    const Rect tb = out.triangles[t].bbox();
    const std::size_t lo = out.bucket_of({tb.xmin, tb.ymin});
    const std::size_t hi = out.bucket_of({tb.xmax, tb.ymax});
    const int bi0 = static_cast<int>(lo % out.buckets_per_side);
    const int bj0 = static_cast<int>(lo / out.buckets_per_side);
    const int bi1 = static_cast<int>(hi % out.buckets_per_side);
    const int bj1 = static_cast<int>(hi / out.buckets_per_side);
    for (int bj = bj0; bj <= bj1; ++bj)
      for (int bi = bi0; bi <= bi1; ++bi)
        out.buckets[static_cast<std::size_t>(bj) * out.buckets_per_side + bi].push_back(
            static_cast<std::int32_t>(t));
  }
  return out;
}

inline bool contains(const KochApproximation& kc, Vec2 p) {
  if (!kc.box.contains(p)) return false;
  for (std::int32_t t : kc.buckets[kc.bucket_of(p)])
    if (kc.triangles[t].contains(p)) return true;
  return false;
}

inline double area(const KochApproximation& kc) {
  std::vector<double> a(kc.triangles.size());
  for (std::size_t t = 0; t < kc.triangles.size(); ++t) a[t] = kc.triangles[t].area();
  return pairwise_sum(a);
}

inline Rect bounding_box(const KochApproximation& kc) { return kc.box; }

inline std::vector<Segment> boundary_segments(const KochApproximation& kc) {
  std::vector<Segment> out;
  out.reserve(kc.outline.size());
  for (std::size_t e = 0; e < kc.outline.size(); ++e)
    out.push_back({kc.outline[e], kc.outline[(e + 1) % kc.outline.size()]});
  return out;
}

inline Rect bounding_box(const AnalyticShape& s) {
  return std::visit(
      [](const auto& v) -> Rect {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, HalfSpace>)
          throw DomainError("half-space has no bounding box");
        else
          return bounding_box(v);
      },
      s);
}

// ===== Rasterization =====

namespace detail {

inline int cell_count(double length, double h) {
  const double q = length / h;
  const double r = std::round(q);
  const int n = (std::abs(q - r) < 1e-9) ? static_cast<int>(r)
                                         : static_cast<int>(std::ceil(q));
  return std::max(n, 1);
}

}  // namespace detail

// Center rule: a cell is set iff its center lies in the shape.
template <class S>
GridSet rasterize(const S& shape, Rect bbox, double h, int cell_budget = 4096) {
  if (!(h > 0.0)) throw DomainError("cell size must be positive");
  if (bbox.degenerate()) throw DomainError("bounding box is degenerate");
  const int nx = detail::cell_count(bbox.width(), h);
  const int ny = detail::cell_count(bbox.height(), h);
  if (nx > cell_budget || ny > cell_budget)
    throw ResolutionError("grid exceeds the cell budget");
  GridSet g;
  g.width = nx;
  g.height = ny;
  g.origin = {bbox.xmin, bbox.ymin};
  g.h = h;
  g.occupancy.assign(static_cast<std::size_t>(nx) * ny, 0);
  parallel_blocks(ny, [&](std::size_t j) {
    for (int i = 0; i < nx; ++i)
      g.occupancy[g.index(i, static_cast<int>(j))] =
          contains(shape, g.cell_center(i, static_cast<int>(j))) ? 1 : 0;
  });
  return g;
}

// ===== Signed distance =====

inline double signed_distance(const HalfSpace& hs, Vec2 p) {
  return dot(p, hs.normal) - hs.offset;
}
inline double signed_distance(const Ball& b, Vec2 p) {
  return norm(p - b.center) - b.radius;
}

inline double distance_to_segment(Vec2 p, const Segment& s) {
  const Vec2 d = s.b - s.a;
  const double len2 = dot(d, d);
  const double t = (len2 > 0.0) ? std::clamp(dot(p - s.a, d) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (s.a + t * d));
}

inline double signed_distance(const Polygon& poly, Vec2 p) {
  const auto& v = poly.vertices;
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++)
    dmin = std::min(dmin, distance_to_segment(p, {v[j], v[i]}));
  return contains(poly, p) ? -dmin : dmin;
}

inline double signed_distance(const Subgraph& g, Vec2 p) {
  // boundary = graph curve plus the sides and floor of the box it lives in
  const int m = 256;
  double dmin = std::numeric_limits<double>::infinity();
  Vec2 prev{-g.radius, poly_eval(g.coeff, -g.radius)};
  for (int i = 1; i <= m; ++i) {
    const double t = -g.radius + 2.0 * g.radius * i / m;
    const Vec2 cur{t, poly_eval(g.coeff, t)};
    dmin = std::min(dmin, distance_to_segment(p, {prev, cur}));
    prev = cur;
  }
  const Vec2 bl{-g.radius, -g.radius}, br{g.radius, -g.radius};
  dmin = std::min(dmin, distance_to_segment(p, {bl, br}));
  dmin = std::min(dmin, distance_to_segment(p, {bl, {-g.radius, poly_eval(g.coeff, -g.radius)}}));
  dmin = std::min(dmin, distance_to_segment(p, {br, {g.radius, poly_eval(g.coeff, g.radius)}}));
  return contains(g, p) ? -dmin : dmin;
}

inline double signed_distance(const KochApproximation& kc, Vec2 p) {
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < kc.outline.size(); ++e)
    dmin = std::min(dmin,
                    distance_to_segment(p, {kc.outline[e], kc.outline[(e + 1) % kc.outline.size()]}));
  return contains(kc, p) ? -dmin : dmin;
}

inline double signed_distance(const AnalyticShape& s, Vec2 p) {
  return std::visit([&](const auto& v) { return signed_distance(v, p); }, s);
}

namespace detail {

// 1D squared distance transform (lower envelope of parabolas)
inline void dt1d(const std::vector<double>& f, std::vector<double>& d,
                 std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// squared distance (cell units) from every cell center to the nearest cell
// with occupancy == target
inline std::vector<double> squared_cell_distance(const GridSet& g, bool target) {
  const double inf = 1e18;
  const int w = g.width, hgt = g.height;
  std::vector<double> field(g.occupancy.size());
  // vertical pass per column
  {
    std::vector<double> f(hgt), d(hgt);
    std::vector<int> v(hgt);
    std::vector<double> z(hgt + 1);
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < hgt; ++j) f[j] = (g.test(i, j) == target) ? 0.0 : inf;
      dt1d(f, d, v, z);
      for (int j = 0; j < hgt; ++j) field[g.index(i, j)] = d[j];
    }
  }
  // horizontal pass per row
  {
    std::vector<double> f(w), d(w);
    std::vector<int> v(w);
    std::vector<double> z(w + 1);
    for (int j = 0; j < hgt; ++j) {
      for (int i = 0; i < w; ++i) f[i] = field[g.index(i, j)];
      dt1d(f, d, v, z);
      for (int i = 0; i < w; ++i) field[g.index(i, j)] = d[i];
    }
  }
  return field;
}

}  // namespace detail

// Per-cell signed distance to the cell-interface boundary, sampled at cell
// centers.  Negative inside.  The half-cell shift accounts for measuring to
// the interface rather than to the opposite cell center.
inline std::vector<double> signed_distance_field(const GridSet& g) {
  const std::size_t nset = g.count_set();
  if (nset == 0 || nset == g.occupancy.size())
    throw DegenerateSet("signed distance needs both set and unset cells");
  const auto to_set = detail::squared_cell_distance(g, true);
  const auto to_unset = detail::squared_cell_distance(g, false);
  std::vector<double> out(g.occupancy.size());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (g.occupancy[c])
      out[c] = -(std::sqrt(to_unset[c]) * g.h - 0.5 * g.h);
    else
      out[c] = std::sqrt(to_set[c]) * g.h - 0.5 * g.h;
  }
  return out;
}

inline double signed_distance(const GridSet& g, Vec2 p) {
  const auto field = signed_distance_field(g);
  const int i = std::clamp(static_cast<int>(std::floor((p.x - g.origin.x) / g.h)), 0,
                           g.width - 1);
  const int j = std::clamp(static_cast<int>(std::floor((p.y - g.origin.y) / g.h)), 0,
                           g.height - 1);
  return field[g.index(i, j)] + distance_to_rect(p, g.frame());
}

// ===== Tubular neighborhoods =====

inline Ball tubular_set(const Ball& b, double rho) {
  const double r = b.radius + rho;
  if (!(r > 0.0)) throw DegenerateSet("offset ball is empty");
  return {b.center, r};
}

inline HalfSpace tubular_set(const HalfSpace& hs, double rho) {
  return {hs.normal, hs.offset + rho};
}

inline AnalyticShape tubular_set(const AnalyticShape& s, double rho) {
  return std::visit(
      [&](const auto& v) -> AnalyticShape {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Ball> || std::is_same_v<T, HalfSpace>)
          return tubular_set(v, rho);
        else
          throw DomainError("tubular offset supported for balls and half-spaces only");
      },
      s);
}

inline GridSet tubular_set(const GridSet& g, double rho) {
  const Rect fr = g.frame();
  if (std::abs(rho) >= 0.5 * std::min(fr.width(), fr.height()))
    throw DomainError("offset too large for the grid frame");
  const auto field = signed_distance_field(g);
  GridSet out = g;
  for (std::size_t c = 0; c < out.occupancy.size(); ++c)
    out.occupancy[c] = (field[c] < rho) ? 1 : 0;
  const std::size_t nset = out.count_set();
  if (nset == 0 || nset == out.occupancy.size())
    throw DegenerateSet("offset grid is empty or full");
  return out;
}

}  // namespace nlperim
