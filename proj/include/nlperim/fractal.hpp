#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nlperim/errors.hpp"
#include "nlperim/geometry.hpp"
#include "nlperim/kernel.hpp"
#include "nlperim/numerics.hpp"
#include "nlperim/perimeter.hpp"

namespace nlperim {

// Two notions of boundary dimension: covering-box counts with a log-log fit,
// and the supremum of s with finite interaction perimeter, probed on a
// rasterization refinement ladder.  Plus the explicit snowflake lower-bound
// series whose ratio flips at the dimension threshold.

// ===== Box counting =====

struct BoxCountRow {
  double delta = 0.0;
  long count = 0;
};

struct BoxCountTrace {
  std::vector<BoxCountRow> rows;
};

inline void validate(const BoxCountTrace& t) {
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (!(t.rows[i].delta > 0.0) || t.rows[i].count <= 0)
      throw DomainError("box rows need positive size and count");
    if (i && !(t.rows[i].delta < t.rows[i - 1].delta))
      throw OrderingError("box sizes must strictly decrease");
    if (i && t.rows[i].count < t.rows[i - 1].count)
      throw OrderingError("box counts cannot drop under refinement");
  }
}

// Staircase boundary of a pixel set: faces between set and unset cells, with
// everything beyond the frame treated as unset.
inline std::vector<Segment> boundary_segments(const GridSet& g) {
  std::vector<Segment> out;
  const double h = g.h;
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i) {
      if (!g.test(i, j)) continue;
      const double x = g.origin.x + i * h, y = g.origin.y + j * h;
      if (i == 0 || !g.test(i - 1, j)) out.push_back({{x, y}, {x, y + h}});
      if (i + 1 == g.width || !g.test(i + 1, j)) out.push_back({{x + h, y}, {x + h, y + h}});
      if (j == 0 || !g.test(i, j - 1)) out.push_back({{x, y}, {x + h, y}});
      if (j + 1 == g.height || !g.test(i, j + 1)) out.push_back({{x, y + h}, {x + h, y + h}});
    }
  return out;
}

namespace fracdetail {

// Grid traversal along a segment, half-open boxes [i*d,(i+1)*d).  Every step
// crosses exactly one box boundary, so the step budget |di|+|dj| is exact.
inline void walk_boxes(Vec2 p, Vec2 q, Vec2 anchor, double d,
                       std::unordered_set<std::uint64_t>& out) {
  auto key = [](long ix, long iy) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) |
           static_cast<std::uint32_t>(iy);
  };
  long ix = static_cast<long>(std::floor((p.x - anchor.x) / d));
  long iy = static_cast<long>(std::floor((p.y - anchor.y) / d));
  const long qx = static_cast<long>(std::floor((q.x - anchor.x) / d));
  const long qy = static_cast<long>(std::floor((q.y - anchor.y) / d));
  out.insert(key(ix, iy));
  const double dx = q.x - p.x, dy = q.y - p.y;
  const int sx = dx > 0.0 ? 1 : -1, sy = dy > 0.0 ? 1 : -1;
  const double tdx = dx != 0.0 ? d / std::abs(dx) : kInf;
  const double tdy = dy != 0.0 ? d / std::abs(dy) : kInf;
  double tmx = kInf, tmy = kInf;
  if (dx != 0.0) tmx = (anchor.x + (ix + (sx > 0 ? 1 : 0)) * d - p.x) / dx;
  if (dy != 0.0) tmy = (anchor.y + (iy + (sy > 0 ? 1 : 0)) * d - p.y) / dy;
  const long steps = std::labs(qx - ix) + std::labs(qy - iy);
  for (long n = 0; n < steps; ++n) {
    if (tmx <= tmy) {
      ix += sx;
      tmx += tdx;
    } else {
      iy += sy;
      tmy += tdy;
    }
    out.insert(key(ix, iy));
  }
}

}  // namespace fracdetail

inline BoxCountTrace box_count(const std::vector<Segment>& boundary,
                               const std::vector<double>& deltas) {
  if (boundary.empty()) throw EmptyBoundary("no boundary to cover");
  if (deltas.empty()) throw DomainError("no box sizes requested");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) throw DomainError("box sizes must be positive");
    if (i && !(deltas[i] < deltas[i - 1]))
      throw OrderingError("box sizes must strictly decrease");
  }
  Vec2 anchor = boundary.front().a;
  for (const Segment& seg : boundary) {
    anchor.x = std::min({anchor.x, seg.a.x, seg.b.x});
    anchor.y = std::min({anchor.y, seg.a.y, seg.b.y});
  }
  BoxCountTrace t;
  for (double d : deltas) {
    std::unordered_set<std::uint64_t> boxes;
    for (const Segment& seg : boundary)
      fracdetail::walk_boxes(seg.a, seg.b, anchor, d, boxes);
    t.rows.push_back({d, static_cast<long>(boxes.size())});
  }
  validate(t);
  return t;
}

inline BoxCountTrace box_count(const KochApproximation& kc,
                               const std::vector<double>& deltas) {
  return box_count(boundary_segments(kc), deltas);
}

inline BoxCountTrace box_count(const GridSet& g, const std::vector<double>& deltas) {
  return box_count(boundary_segments(g), deltas);
}

// ===== Log-log dimension fit =====

struct DimensionEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::pair<double, double> fit_range{0.0, 0.0};  // coarsest, finest scale
};

inline void validate(const DimensionEstimate& e) {
  if (!(e.value >= 0.0 && e.value <= 2.0))
    throw DomainError("dimension must lie in [0, 2]");
  if (!(e.std_error >= 0.0)) throw DomainError("negative uncertainty");
}

inline DimensionEstimate dimension_fit(const BoxCountTrace& t) {
  validate(t);
  const std::size_t m = t.rows.size();
  if (m < 4) throw InsufficientRows("dimension fit needs at least 4 rows");
  double sx = 0.0, sy = 0.0;
  for (const auto& r : t.rows) {
    sx += -std::log(r.delta);
    sy += std::log(static_cast<double>(r.count));
  }
  const double mx = sx / m, my = sy / m;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& r : t.rows) {
    const double dx = -std::log(r.delta) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(static_cast<double>(r.count)) - my);
  }
  DimensionEstimate e;
  e.value = sxy / sxx;
  double ssr = 0.0;
  for (const auto& r : t.rows) {
    const double pred = my + e.value * (-std::log(r.delta) - mx);
    const double res = std::log(static_cast<double>(r.count)) - pred;
    ssr += res * res;
  }
  e.std_error = std::sqrt(ssr / (m - 2) / sxx);
  e.fit_range = {t.rows.front().delta, t.rows.back().delta};
  return e;
}

// ===== Interaction-perimeter dimension =====

// Rasterization refinement ladder for the finiteness probe.  The ratio 3
// matches the snowflake's self-similarity so successive rungs expose one more
// generation of detail.
struct RefinementLadder {
  int base_cells = 27;
  int rungs = 4;
  int ratio = 3;
};

inline void validate(const RefinementLadder& l) {
  if (l.base_cells < 4 || l.rungs < 3 || l.ratio < 2)
    throw DomainError("ladder needs >= 4 base cells, >= 3 rungs, ratio >= 2");
}

// Interaction energy of a rasterization of the set against its in-window
// complement, per ladder rung (coarse to fine).
template <class Shape>
std::vector<double> dim_f_ladder(const Shape& e, const Rect& omega, double s,
                                 const QuadratureSpec& quad = {},
                                 const RefinementLadder& lad = {}) {
  validate(lad);
  if (omega.degenerate()) throw DomainError("degenerate window");
  const FracParams par{2, s};
  std::vector<double> out;
  double cells = lad.base_cells;
  for (int m = 0; m < lad.rungs; ++m, cells *= lad.ratio) {
    const double h = std::max(omega.width(), omega.height()) / cells;
    const GridSet g = rasterize(e, omega, h, 1 << 13);
    const GridSet c = complement(g);
    if (g.count_set() == 0 || c.count_set() == 0)
      throw DegenerateSet("set or complement vanishes in the window");
    out.push_back(grid_interaction(g, c, par, quad).value);
  }
  return out;
}

// The finest-rung growth factor that flags a non-convergent interaction
// integral.  Frozen after calibration on the generation-7 snowflake ladder;
// smooth sets settle well below it and supercritical s sit well above.
inline constexpr double kDivergenceFactor = 1.02;

inline bool ladder_divergent(const std::vector<double>& values) {
  const std::size_t m = values.size();
  return values[m - 1] > kDivergenceFactor * values[m - 2];
}

template <class Shape>
DimensionEstimate dim_f_estimate(const Shape& e, const Rect& omega,
                                 const std::vector<double>& s_list,
                                 const QuadratureSpec& quad = {},
                                 const RefinementLadder& lad = {}) {
  if (s_list.empty()) throw DomainError("empty s grid");
  for (std::size_t i = 0; i < s_list.size(); ++i) {
    if (!(s_list[i] > 0.0 && s_list[i] < 1.0))
      throw DomainError("s values must lie in (0,1)");
    if (i && !(s_list[i] > s_list[i - 1]))
      throw OrderingError("s values must increase strictly");
  }
  std::vector<bool> divergent(s_list.size());
  double h_coarse = 0.0, h_fine = 0.0;
  for (std::size_t q = 0; q < s_list.size(); ++q) {
    const std::vector<double> vals = dim_f_ladder(e, omega, s_list[q], quad, lad);
    divergent[q] = ladder_divergent(vals);
    const double span = std::max(omega.width(), omega.height());
    h_coarse = span / lad.base_cells;
    h_fine = span / (lad.base_cells * std::pow(lad.ratio, lad.rungs - 1));
  }
  // coherent classifications are convergent up to a flip, divergent beyond
  std::size_t flip = 0;
  while (flip < s_list.size() && !divergent[flip]) ++flip;
  for (std::size_t q = flip; q < s_list.size(); ++q)
    if (!divergent[q]) throw Inconclusive("refinement classification is not monotone in s");
  DimensionEstimate est;
  est.fit_range = {h_coarse, h_fine};
  if (flip == 0) throw Inconclusive("every s diverges: threshold below the grid");
  if (flip == s_list.size()) {
    // finite interaction for every probed s: the supremum is 1
    est.value = 2.0 - 1.0;
    est.std_error = 0.5 * (1.0 - s_list.back());
    return est;
  }
  est.value = 2.0 - s_list[flip - 1];
  est.std_error = 0.5 * (s_list[flip] - s_list[flip - 1]);
  return est;
}

// Exact route for unions of intervals: the one-dimensional perimeter is a
// finite closed form at every s, so each s is convergent outright.
inline DimensionEstimate dim_f_estimate(const IntervalSet& e, const Interval& omega,
                                        const std::vector<double>& s_list,
                                        const QuadratureSpec& quad = {}) {
  if (s_list.empty()) throw DomainError("empty s grid");
  for (std::size_t i = 0; i < s_list.size(); ++i) {
    if (!(s_list[i] > 0.0 && s_list[i] < 1.0))
      throw DomainError("s values must lie in (0,1)");
    if (i && !(s_list[i] > s_list[i - 1]))
      throw OrderingError("s values must increase strictly");
  }
  for (double s : s_list) {
    const SPerimeterBreakdown b = s_perimeter(e, omega, FracParams{1, s}, quad);
    if (!std::isfinite(b.local)) throw Inconclusive("interval perimeter not finite");
  }
  DimensionEstimate est;
  est.value = 1.0 - 1.0;
  est.std_error = 0.5 * (1.0 - s_list.back());
  est.fit_range = {0.0, 0.0};
  return est;
}

// ===== Snowflake lower-bound series =====

struct KochSeriesBound {
  double ratio = 0.0;       // 4 / 3^(2-s)
  double prefactor = 0.0;   // 3^(s-1) * L_s(T, far ball)
  std::vector<double> partial;  // partial sums through each power
};

inline double koch_threshold() { return 2.0 - std::log(4.0) / std::log(3.0); }

namespace fracdetail {

// L_s(T, B) for the unit-side base triangle and a far unit ball: smooth and
// well separated, so a tensor Gauss rule is exact to machine accuracy.
inline double triangle_ball_interaction(double s) {
  const double r3 = std::sqrt(3.0);
  const Vec2 a{0.0, 1.0 / r3}, b{-0.5, -0.5 / r3}, c{0.5, -0.5 / r3};
  const Vec2 ctr{0.0, 15.0};
  const double R = 1.0;
  const GaussRule& g1 = gl16();
  const double two_area = std::abs(cross(b - a, c - a));
  double acc = 0.0;
  for (std::size_t i = 0; i < g1.x.size(); ++i) {
    const double xi = 0.5 * (1.0 + g1.x[i]);
    const double wxi = 0.5 * g1.w[i] * xi * two_area;
    for (std::size_t j = 0; j < g1.x.size(); ++j) {
      const double eta = 0.5 * (1.0 + g1.x[j]);
      const double weta = 0.5 * g1.w[j];
      const Vec2 p{a.x + xi * (b.x - a.x) + xi * eta * (c.x - b.x),
                   a.y + xi * (b.y - a.y) + xi * eta * (c.y - b.y)};
      for (std::size_t k = 0; k < g1.x.size(); ++k) {
        const double rho = 0.5 * (1.0 + g1.x[k]);
        const double wrho = 0.5 * g1.w[k] * rho * R * R;
        for (std::size_t l = 0; l < g1.x.size(); ++l) {
          const double th = kPi * (1.0 + g1.x[l]);
          const double wth = kPi * g1.w[l];
          const Vec2 y{ctr.x + R * rho * std::cos(th), ctr.y + R * rho * std::sin(th)};
          const double d2 = (p.x - y.x) * (p.x - y.x) + (p.y - y.y) * (p.y - y.y);
          acc += wxi * weta * wrho * wth * std::pow(d2, -0.5 * (2.0 + s));
        }
      }
    }
  }
  return acc;
}

}  // namespace fracdetail

inline KochSeriesBound koch_series_bound(double s, int K) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (K < 0) throw DomainError("partial sum count must be nonnegative");
  KochSeriesBound out;
  out.ratio = 4.0 * std::pow(3.0, s - 2.0);
  out.prefactor = std::pow(3.0, s - 1.0) * fracdetail::triangle_ball_interaction(s);
  out.partial.reserve(K + 1);
  double sum = 0.0, term = 1.0;
  for (int k = 0; k <= K; ++k) {
    sum += term;
    out.partial.push_back(out.prefactor * sum);
    term *= out.ratio;
  }
  return out;
}

}  // namespace nlperim
