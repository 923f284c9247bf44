#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "errors.hpp"
#include "geometry.hpp"
#include "numerics.hpp"

namespace nlperim {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct FracParams {
  int n = 2;
  double s = 0.5;
};

inline void validate(const FracParams& p) {
  if (p.n != 1 && p.n != 2) throw DomainError("ambient dimension must be 1 or 2");
  if (!(p.s > 0.0 && p.s < 1.0)) throw DomainError("s must lie in (0,1)");
}

struct QuadratureSpec {
  double rel_tol = 1e-9;
  double abs_tol = 1e-13;
  int max_subdivision_depth = 45;
  double tail_radius = 0.0;      // 0 = auto: 8x the bounding-box diameter
  std::vector<double> pv_radii;  // empty = geometric default schedule
};

inline void validate(const QuadratureSpec& q) {
  if (!(q.rel_tol > 0.0) || !(q.abs_tol > 0.0)) throw DomainError("tolerances must be positive");
  for (std::size_t i = 1; i < q.pv_radii.size(); ++i)
    if (!(q.pv_radii[i] < q.pv_radii[i - 1]) || !(q.pv_radii[i] > 0.0))
      throw DomainError("exclusion radii must be positive and strictly decreasing");
}

// ===== 1D closed forms =====

// L_s((a,b),(c,d)) for a < b <= c < d
inline double interaction_1d_closed(double a, double b, double c, double d, double s) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (!(a < b && b <= c && c < d)) throw OrderingError("need a < b <= c < d");
  const double e = 1.0 - s;
  return (std::pow(c - a, e) + std::pow(d - b, e) - std::pow(c - b, e) -
          std::pow(d - a, e)) /
         (s * e);
}

// L_s((a,b),(c,+inf)) for b <= c
inline double halfline_interaction_right(double a, double b, double c, double s) {
  if (!(a < b && b <= c)) throw OrderingError("need a < b <= c");
  const double e = 1.0 - s;
  return (std::pow(c - a, e) - std::pow(c - b, e)) / (s * e);
}

// L_s((a,b),(-inf,c)) for c <= a
inline double halfline_interaction_left(double a, double b, double c, double s) {
  if (!(a < b && c <= a)) throw OrderingError("need c <= a < b");
  const double e = 1.0 - s;
  return (std::pow(b - c, e) - std::pow(a - c, e)) / (s * e);
}

// Exact pairwise sum of closed forms.
inline double interval_interaction(const IntervalSet& E, const IntervalSet& F, double s) {
  std::vector<double> terms;
  terms.reserve(E.intervals.size() * F.intervals.size());
  for (const auto& e : E.intervals)
    for (const auto& f : F.intervals) {
      if (e.right <= f.left)
        terms.push_back(interaction_1d_closed(e.left, e.right, f.left, f.right, s));
      else if (f.right <= e.left)
        terms.push_back(interaction_1d_closed(f.left, f.right, e.left, e.right, s));
      else
        throw OverlapError("interval sets overlap with positive measure");
    }
  return pairwise_sum(terms);
}

// L_s(E, (c,+inf)) requiring every interval left of c.
inline double interval_right_tail(const IntervalSet& E, double c, double s) {
  std::vector<double> terms;
  for (const auto& e : E.intervals) terms.push_back(halfline_interaction_right(e.left, e.right, c, s));
  return pairwise_sum(terms);
}

// L_s(E, (-inf,c)) requiring every interval right of c.
inline double interval_left_tail(const IntervalSet& E, double c, double s) {
  std::vector<double> terms;
  for (const auto& e : E.intervals) terms.push_back(halfline_interaction_left(e.left, e.right, c, s));
  return pairwise_sum(terms);
}

// ===== Tail bound =====

// L_s(A,B) <= (n omega_n / s) |A| d^{-s} whenever dist(A,B) >= d
inline double tail_bound(double measure_A, double d, const FracParams& par) {
  validate(par);
  if (!(d > 0.0)) throw DomainError("separation distance must be positive");
  if (measure_A < 0.0) throw DomainError("measure must be nonnegative");
  return par.n * omega(par.n) / par.s * measure_A * std::pow(d, -par.s);
}

// ===== Kernel column integrals =====
//
// g_range(a,b,p) = int_a^b (1+t^2)^(-p/2) dt with infinite endpoints allowed.
// Every column integral of the interaction kernel reduces to it.

namespace detail {

inline double g_tail(double a, double p) {  // int_a^inf, a >= 0
  if (a < 3.0) return g_full(p) - g_incomplete(a, p);
  // tau = 1/t, then remove the fractional power tau^(p-2) exactly
  const double w_hi = std::pow(1.0 / a, p - 1.0);
  const double q =
      integrate_adaptive(
          [&](double w) {
            const double tau = std::pow(w, 1.0 / (p - 1.0));
            return std::pow(1.0 + tau * tau, -0.5 * p);
          },
          0.0, w_hi, 1e-12, 1e-18)
          .value;
  return q / (p - 1.0);
}

inline double g_range(double a, double b, double p) {
  if (a == b) return 0.0;
  if (a > b) return -g_range(b, a, p);
  if (a < 0.0) {
    if (b <= 0.0) return g_range(-b, -a, p);
    return g_range(0.0, -a, p) + g_range(0.0, b, p);
  }
  if (std::isinf(a)) return 0.0;
  if (std::isinf(b)) return g_tail(a, p);
  if (b <= 3.0)
    return gauss(
        gl64(), [&](double th) { return std::pow(std::cos(th), p - 2.0); },
        std::atan(a), std::atan(b));
  if (a >= 3.0) return g_tail(a, p) - g_tail(b, p);
  return g_range(a, 3.0, p) + g_range(3.0, b, p);
}

// ===== Rectangle-pair reduction =====
//
// L_s(R1,R2) = iint w1(u) w2(v) (u^2+v^2)^(-p/2) du dv where w1, w2 are the
// overlap (correlation) profiles of the axis projections.  The v-integral is
// closed-form per linear piece; the u-integral is adaptive, with the endpoint
// power |u|^(-s) peeled off by substitution when the projections touch.

struct LinPiece {
  double lo, hi;       // may be +-inf on outer sides
  double alpha, beta;  // weight alpha + beta*v on (lo,hi)
};

// w(v) = |(a1,b1) cap ((a2,b2) - v)|; (a2,b2) may be half-infinite
inline std::vector<LinPiece> corr_pieces(double a1, double b1, double a2, double b2) {
  std::vector<LinPiece> out;
  const double len1 = b1 - a1;
  if (std::isinf(a2) && std::isinf(b2)) {
    out.push_back({-kInf, kInf, len1, 0.0});
    return out;
  }
  if (std::isinf(a2)) {  // (-inf, b2)
    out.push_back({-kInf, b2 - b1, len1, 0.0});
    out.push_back({b2 - b1, b2 - a1, b2 - a1, -1.0});
    return out;
  }
  if (std::isinf(b2)) {  // (a2, +inf)
    out.push_back({a2 - b1, a2 - a1, b1 - a2, 1.0});
    out.push_back({a2 - a1, kInf, len1, 0.0});
    return out;
  }
  const double m = std::min(len1, b2 - a2);
  const double t0 = a2 - b1, t1 = t0 + m, t2 = b2 - a1 - m, t3 = b2 - a1;
  if (t1 > t0) out.push_back({t0, t1, -t0, 1.0});
  if (t2 > t1) out.push_back({t1, t2, m, 0.0});
  if (t3 > t2) out.push_back({t2, t3, t3, -1.0});
  return out;
}

// int (alpha + beta v)(u^2+v^2)^(-p/2) dv over one-signed (lo,hi), u = 0
inline double piece_integral_u0(const LinPiece& pc, double p) {
  double lo = pc.lo, hi = pc.hi, alpha = pc.alpha, beta = pc.beta;
  if (lo < 0.0) {  // mirror
    std::swap(lo, hi);
    lo = -lo;
    hi = -hi;
    beta = -beta;
  }
  if (!(lo > 0.0)) throw DomainError("kernel singularity inside the support");
  const double t1 = std::isinf(hi) ? 0.0 : std::pow(hi, 1.0 - p);
  const double t2 = std::isinf(hi) ? 0.0 : std::pow(hi, 2.0 - p);
  return alpha * (std::pow(lo, 1.0 - p) - t1) / (p - 1.0) +
         beta * (std::pow(lo, 2.0 - p) - t2) / (p - 2.0);
}

inline double inner_eval(double u, const std::vector<LinPiece>& pv, double p) {
  const double au = std::abs(u);
  double total = 0.0;
  if (au < 1e-300) {
    for (const auto& pc : pv) total += piece_integral_u0(pc, p);
    return total;
  }
  const double u2 = u * u;
  for (const auto& pc : pv) {
    total += pc.alpha * std::pow(au, 1.0 - p) * g_range(pc.lo / au, pc.hi / au, p);
    const double hlo = std::isinf(pc.lo) ? 0.0 : std::pow(u2 + pc.lo * pc.lo, 0.5 * (2.0 - p));
    const double hhi = std::isinf(pc.hi) ? 0.0 : std::pow(u2 + pc.hi * pc.hi, 0.5 * (2.0 - p));
    total += pc.beta / (2.0 - p) * (hhi - hlo);
  }
  return total;
}

}  // namespace detail

// Interaction of two axis-aligned rectangles with disjoint interiors; the
// second may be half-infinite along one axis.
inline QuadResult rect_interaction(const Rect& A, const Rect& B, double s,
                                   double rel_tol = 1e-10, double abs_tol = 1e-14) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (std::isinf(A.xmin) || std::isinf(A.xmax) || std::isinf(A.ymin) || std::isinf(A.ymax))
    throw DomainError("first rectangle must be bounded");
  if (A.degenerate() || !(B.xmax > B.xmin) || !(B.ymax > B.ymin))
    throw DomainError("degenerate rectangle");
  const bool xov = A.xmin < B.xmax && B.xmin < A.xmax;
  const bool yov = A.ymin < B.ymax && B.ymin < A.ymax;
  if (xov && yov) throw OverlapError("rectangles overlap");
  const bool bx_inf = std::isinf(B.xmin) || std::isinf(B.xmax);
  const bool by_inf = std::isinf(B.ymin) || std::isinf(B.ymax);
  if (bx_inf && by_inf)
    throw DomainError("at most one axis of the second rectangle may be unbounded");
  // outer axis must have both projections bounded
  double a1, b1, a2, b2, c1, d1, c2, d2;
  if (!bx_inf) {
    a1 = A.xmin; b1 = A.xmax; a2 = B.xmin; b2 = B.xmax;
    c1 = A.ymin; d1 = A.ymax; c2 = B.ymin; d2 = B.ymax;
  } else {
    a1 = A.ymin; b1 = A.ymax; a2 = B.ymin; b2 = B.ymax;
    c1 = A.xmin; d1 = A.xmax; c2 = B.xmin; d2 = B.xmax;
  }
  const double p = 2.0 + s;
  const auto pu = detail::corr_pieces(a1, b1, a2, b2);
  const auto pv = detail::corr_pieces(c1, d1, c2, d2);
  const double gap_v = std::max(c2 - d1, c1 - d2);
  QuadResult out;
  for (const auto& up : pu) {
    auto F = [&](double u) { return (up.alpha + up.beta * u) * detail::inner_eval(u, pv, p); };
    const bool touch_v = !(gap_v > 0.0);
    if (touch_v && up.lo <= 0.0 && up.hi >= 0.0) {
      if (up.lo < 0.0) {
        auto r = integrate_power_singular(
            [&](double t) { return std::pow(t, s) * F(-t); }, s, -up.lo, rel_tol, abs_tol);
        out.value += r.value;
        out.error += r.error;
        out.converged = out.converged && r.converged;
      }
      if (up.hi > 0.0) {
        auto r = integrate_power_singular(
            [&](double t) { return std::pow(t, s) * F(t); }, s, up.hi, rel_tol, abs_tol);
        out.value += r.value;
        out.error += r.error;
        out.converged = out.converged && r.converged;
      }
    } else {
      auto r = integrate_adaptive(F, up.lo, up.hi, rel_tol, abs_tol);
      out.value += r.value;
      out.error += r.error;
      out.converged = out.converged && r.converged;
    }
  }
  return out;
}

// ===== Analytic closures =====

// int over {depth >= t} of |x-y|^(-(2+s)) dy = factor * t^(-s)
inline double halfplane_kernel_factor(double s) { return 2.0 * g_full(2.0 + s) / s; }

// L_s(rect, axis-aligned half-plane) in closed form.  axis: 0 = x, 1 = y;
// positive_side: half-plane {coord >= level} (else {coord <= level}).
inline double rect_to_halfplane(const Rect& r, int axis, bool positive_side,
                                double level, double s) {
  double lo, hi, width;
  if (axis == 1) {
    lo = r.ymin; hi = r.ymax; width = r.width();
  } else {
    lo = r.xmin; hi = r.xmax; width = r.height();
  }
  const double slack = 1e-12 * std::max(1.0, std::abs(level));
  double tlo, thi;  // depth range of the rectangle relative to the half-plane
  if (positive_side) {
    if (hi > level + slack) throw OverlapError("rectangle crosses the half-plane");
    tlo = level - hi;
    thi = level - lo;
  } else {
    if (lo < level - slack) throw OverlapError("rectangle crosses the half-plane");
    tlo = lo - level;
    thi = hi - level;
  }
  tlo = std::max(tlo, 0.0);
  const double e = 1.0 - s;
  return width * halfplane_kernel_factor(s) * (std::pow(thi, e) - std::pow(tlo, e)) / e;
}

namespace detail {

// Kernel mass of the complement of B_R seen from a point at depth t = R - d
// inside the ball.  Parameterized by the depth so the exit distance
// rho0(theta) stays accurate when t underflows the representation of R - d:
// rho0 = d cos(theta) + sqrt(t (R+d) + (d cos(theta))^2), with the conjugate
// form on the far side where the plain sum would cancel.
inline double ball_complement_kernel(double t, double R, double s) {
  if (!(t > 0.0 && t <= R)) throw DomainError("depth must lie in (0, R]");
  const double d = R - t;
  const double tt = t * (R + d);
  auto rho0 = [&](double th) {
    const double dc = d * std::cos(th);
    const double sq = std::sqrt(tt + dc * dc);
    if (dc >= 0.0) return dc + sq;
    return tt / (sq - dc);
  };
  const double I =
      integrate_adaptive([&](double th) { return std::pow(rho0(th), -s); }, 0.0, kPi,
                         1e-11, 1e-15)
          .value;
  return 2.0 * I / s;
}

}  // namespace detail

// int over complement of B_R(c) of |x-y|^(-(2+s)) dy for a point at distance
// d < R from the center
inline double point_to_ball_complement(double d, double R, double s) {
  if (!(d >= 0.0 && d < R)) throw DomainError("point must be inside the ball");
  return detail::ball_complement_kernel(R - d, R, s);
}

// int over B_R(c) of |x-y|^(-(2+s)) dy for a point at distance d > R
inline double point_to_ball(double d, double R, double s) {
  if (!(d > R)) throw DomainError("point must be outside the ball");
  const double thm = std::asin(R / d);
  const double gap2 = (d - R) * (d + R);
  auto f = [&](double th) {
    const double sn = d * std::sin(th);
    const double w = std::sqrt(std::max(R * R - sn * sn, 0.0));
    const double rout = d * std::cos(th) + w;
    // entry distance via the conjugate product rin * rout = d^2 - R^2, which
    // stays accurate where d cos(theta) - w would cancel near tangency
    const double rin = gap2 / rout;
    return std::pow(rin, -s) - std::pow(rout, -s);
  };
  return 2.0 / s * integrate_adaptive(f, 0.0, thm, 1e-11, 1e-15).value;
}

// int over the rectangle r of |y|^(-(2+s)) dy for a point at the origin;
// the origin must be at positive distance from the closed rectangle (any
// boundary contact makes the integral divergent)
inline double point_to_rect(const Rect& r, double s, double rel_tol = 1e-10) {
  if (r.degenerate()) throw DegenerateSet("empty rectangle");
  if (!(distance_to_rect(Vec2{0.0, 0.0}, r) > 0.0))
    throw OverlapError("point touches the rectangle");
  // orient so each vertical column has a single-signed y-range: swap axes if
  // the y-range straddles zero (then the x-range cannot, by the distance check)
  if (r.ymin < 0.0 && r.ymax > 0.0)
    return point_to_rect(Rect{r.ymin, r.xmin, r.ymax, r.xmax}, s, rel_tol);
  const double ylo = r.ymax <= 0.0 ? -r.ymax : r.ymin;
  const double yhi = r.ymax <= 0.0 ? -r.ymin : r.ymax;
  const double p = 2.0 + s;
  // tail-form difference avoids the g_incomplete cancellation for thin
  // far-away columns and stays exact down to x -> 0
  auto col = [&](double x) {
    if (ylo > 0.0 && x < 1e-14 * yhi)
      return (std::pow(ylo, 1.0 - p) - std::pow(yhi, 1.0 - p)) / (p - 1.0);
    return std::pow(x, 1.0 - p) *
           (detail::g_tail(ylo / x, p) - detail::g_tail(yhi / x, p));
  };
  double total = 0.0;
  if (r.xmin < 0.0)
    total += integrate_adaptive(col, std::max(0.0, -r.xmax), -r.xmin, rel_tol, 1e-300).value;
  if (r.xmax > 0.0)
    total += integrate_adaptive(col, std::max(0.0, r.xmin), r.xmax, rel_tol, 1e-300).value;
  return total;
}

// int over the quadrant {x >= alpha, y >= beta} of |y|^(-(2+s)), point at the
// origin; requires alpha > 0 (reflect/swap at the call site otherwise)
inline double point_to_quadrant(double alpha, double beta, double s) {
  if (!(alpha > 0.0)) throw DomainError("quadrant needs positive x clearance");
  const double p = 2.0 + s;
  const double gf = g_full(p);
  auto gt = [&](double t) {
    return t >= 0.0 ? detail::g_tail(t, p) : gf + g_incomplete(-t, p);
  };
  // x = alpha/w maps the outer integral onto (0,1) with a w^{s-1} weight
  const double q = integrate_power_singular(
                       [&](double w) { return gt(beta * w / alpha); }, 1.0 - s, 1.0,
                       1e-11, 1e-300)
                       .value;
  return std::pow(alpha, -s) * q;
}

// ===== Unit-cell offset table =====

inline double unit_cell_interaction(int di, int dj, double s, double rel_tol = 1e-11) {
  if (di == 0 && dj == 0) throw OverlapError("same cell");
  return rect_interaction(Rect{0.0, 0.0, 1.0, 1.0},
                          Rect{static_cast<double>(di), static_cast<double>(dj),
                               di + 1.0, dj + 1.0},
                          s, rel_tol, 1e-16)
      .value;
}

// Interaction of two unit lattice cells at offset (di,dj): exact table inside
// `radius`, midpoint rule with the Laplacian (second-moment) correction
// outside.  far_coeff bounds the correction error, calibrated on the table
// itself.
struct OffsetTable {
  double s = 0.5;
  int radius = 16;
  std::vector<double> exact;  // quadrant (radius+1)^2
  double far_coeff = 1.0;

  double midpoint(int di, int dj) const {
    const double p = 2.0 + s;
    const double r2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
    return std::pow(r2, -0.5 * p) * (1.0 + p * p / (12.0 * r2));
  }
  double operator()(int di, int dj) const {
    di = std::abs(di);
    dj = std::abs(dj);
    if (di == 0 && dj == 0) return 0.0;
    if (di <= radius && dj <= radius)
      return exact[static_cast<std::size_t>(dj) * (radius + 1) + di];
    return midpoint(di, dj);
  }
  // bound on |exact - midpoint| at a far offset
  double far_error(int di, int dj) const {
    di = std::abs(di);
    dj = std::abs(dj);
    if (di <= radius && dj <= radius) return 0.0;
    const double r2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
    return far_coeff * std::pow(r2, -0.5 * (2.0 + s + 4.0));
  }
};

inline const OffsetTable& offset_table(double s, int radius = 16) {
  static std::map<std::pair<double, int>, std::unique_ptr<OffsetTable>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_pair(s, radius);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto tbl = std::make_unique<OffsetTable>();
  tbl->s = s;
  tbl->radius = radius;
  tbl->exact.assign(static_cast<std::size_t>(radius + 1) * (radius + 1), 0.0);
  std::vector<std::pair<int, int>> offs;
  for (int dj = 0; dj <= radius; ++dj)
    for (int di = dj; di <= radius; ++di)
      if (di | dj) offs.push_back({di, dj});
  std::vector<double> vals(offs.size());
  parallel_blocks(offs.size(), [&](std::size_t k) {
    vals[k] = unit_cell_interaction(offs[k].first, offs[k].second, s);
  });
  for (std::size_t k = 0; k < offs.size(); ++k) {
    const auto [di, dj] = offs[k];
    tbl->exact[static_cast<std::size_t>(dj) * (radius + 1) + di] = vals[k];
    tbl->exact[static_cast<std::size_t>(di) * (radius + 1) + dj] = vals[k];
  }
  // calibrate the far-field error envelope on the outer table entries
  double c = 0.0;
  for (int dj = 0; dj <= radius; ++dj)
    for (int di = dj; di <= radius; ++di) {
      const double r2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
      if (r2 < 64.0) continue;
      const double err = std::abs(tbl->exact[static_cast<std::size_t>(dj) * (radius + 1) + di] -
                                  tbl->midpoint(di, dj));
      c = std::max(c, err * std::pow(r2, 0.5 * (2.0 + s + 4.0)));
    }
  tbl->far_coeff = 2.0 * std::max(c, 1e-12);
  const OffsetTable& ref = *tbl;
  cache.emplace(key, std::move(tbl));
  return ref;
}

// Kernel mass from the center of one unit lattice cell to another cell at
// offset (di,dj); exact table nearby, midpoint model with the single-cell
// second-moment correction beyond.
struct PointTable {
  double s = 0.5;
  int radius = 16;
  std::vector<double> exact;
  double far_coeff = 1.0;

  double midpoint(int di, int dj) const {
    const double p = 2.0 + s;
    const double r2 = static_cast<double>(di) * di + static_cast<double>(dj) * dj;
    return std::pow(r2, -0.5 * p) * (1.0 + p * p / (24.0 * r2));
  }
  double operator()(int di, int dj) const {
    di = std::abs(di);
    dj = std::abs(dj);
    if (di == 0 && dj == 0) return 0.0;
    if (di <= radius && dj <= radius)
      return exact[static_cast<std::size_t>(dj) * (radius + 1) + di];
    return midpoint(di, dj);
  }
};

inline const PointTable& point_table(double s, int radius = 16) {
  static std::map<std::pair<double, int>, std::unique_ptr<PointTable>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_pair(s, radius);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto tbl = std::make_unique<PointTable>();
  tbl->s = s;
  tbl->radius = radius;
  tbl->exact.assign(static_cast<std::size_t>(radius + 1) * (radius + 1), 0.0);
  std::vector<std::pair<int, int>> offs;
  for (int dj = 0; dj <= radius; ++dj)
    for (int di = dj; di <= radius; ++di)
      if (di | dj) offs.push_back({di, dj});
  std::vector<double> vals(offs.size());
  parallel_blocks(offs.size(), [&](std::size_t k) {
    const auto [di, dj] = offs[k];
    vals[k] = point_to_rect(Rect{di - 0.5, dj - 0.5, di + 0.5, dj + 0.5}, s, 1e-11);
  });
  for (std::size_t k = 0; k < offs.size(); ++k) {
    const auto [di, dj] = offs[k];
    tbl->exact[static_cast<std::size_t>(dj) * (radius + 1) + di] = vals[k];
    tbl->exact[static_cast<std::size_t>(di) * (radius + 1) + dj] = vals[k];
  }
  const PointTable& ref = *tbl;
  cache.emplace(key, std::move(tbl));
  return ref;
}

// ===== Lattice pair sums =====

namespace detail {

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// sum over cells of A, B (same WxH frame) of img_A(p) img_B(q) ker(q-p),
// via zero-padded FFT convolution; ker must be even in both offsets.
inline double fft_corr_sum(int W, int H, const std::vector<double>& A,
                           const std::vector<double>& B,
                           const std::function<double(int, int)>& ker) {
  const int PX = next_pow2(2 * W), PY = next_pow2(2 * H);
  const std::size_t real_n = static_cast<std::size_t>(PY) * PX;
  const std::size_t cplx_n = static_cast<std::size_t>(PY) * (PX / 2 + 1);
  double* K = fftw_alloc_real(real_n);
  double* Bp = fftw_alloc_real(real_n);
  fftw_complex* Kf = fftw_alloc_complex(cplx_n);
  fftw_complex* Bf = fftw_alloc_complex(cplx_n);
  std::memset(K, 0, real_n * sizeof(double));
  std::memset(Bp, 0, real_n * sizeof(double));
  for (int dj = -(H - 1); dj <= H - 1; ++dj) {
    const int wj = (dj + PY) % PY;
    for (int di = -(W - 1); di <= W - 1; ++di) {
      const int wi = (di + PX) % PX;
      K[static_cast<std::size_t>(wj) * PX + wi] = ker(di, dj);
    }
  }
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i)
      Bp[static_cast<std::size_t>(j) * PX + i] = B[static_cast<std::size_t>(j) * W + i];
  fftw_plan pk = fftw_plan_dft_r2c_2d(PY, PX, K, Kf, FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_r2c_2d(PY, PX, Bp, Bf, FFTW_ESTIMATE);
  fftw_execute(pk);
  fftw_execute(pb);
  for (std::size_t i = 0; i < cplx_n; ++i) {
    const double re = Kf[i][0] * Bf[i][0] - Kf[i][1] * Bf[i][1];
    const double im = Kf[i][0] * Bf[i][1] + Kf[i][1] * Bf[i][0];
    Kf[i][0] = re;
    Kf[i][1] = im;
  }
  fftw_plan pi = fftw_plan_dft_c2r_2d(PY, PX, Kf, K, FFTW_ESTIMATE);
  fftw_execute(pi);
  // conv(K,B) now sits in K (unnormalized); dot against A row-wise
  std::vector<double> rows(H, 0.0);
  for (int j = 0; j < H; ++j) {
    double rs = 0.0;
    for (int i = 0; i < W; ++i)
      rs += A[static_cast<std::size_t>(j) * W + i] * K[static_cast<std::size_t>(j) * PX + i];
    rows[j] = rs;
  }
  const double total = pairwise_sum(rows) / static_cast<double>(real_n);
  fftw_destroy_plan(pk);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pi);
  fftw_free(K);
  fftw_free(Bp);
  fftw_free(Kf);
  fftw_free(Bf);
  return total;
}

inline std::vector<std::pair<int, int>> set_cells(const GridSet& g) {
  std::vector<std::pair<int, int>> out;
  out.reserve(g.count_set());
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i)
      if (g.test(i, j)) out.push_back({i, j});
  return out;
}

}  // namespace detail

// L_s(A,B) for pixel sets on a common lattice.  Same frame required for the
// FFT path; an integer origin shift is allowed on the direct path.
inline QuadResult grid_interaction(const GridSet& A, const GridSet& B,
                                   const FracParams& par, const QuadratureSpec& spec) {
  validate(par);
  if (par.n != 2) throw DomainError("pixel sets are 2D");
  if (std::abs(A.h - B.h) > 1e-12 * A.h)
    throw DomainError("grids must share the cell size");
  const double sx = (B.origin.x - A.origin.x) / A.h;
  const double sy = (B.origin.y - A.origin.y) / A.h;
  const int shx = static_cast<int>(std::lround(sx));
  const int shy = static_cast<int>(std::lround(sy));
  if (std::abs(sx - shx) > 1e-6 || std::abs(sy - shy) > 1e-6)
    throw DomainError("grids must share the lattice");
  const bool same_frame =
      shx == 0 && shy == 0 && A.width == B.width && A.height == B.height;
  if (same_frame) {
    for (std::size_t c = 0; c < A.occupancy.size(); ++c)
      if (A.occupancy[c] && B.occupancy[c]) throw OverlapError("pixel sets overlap");
  }
  const auto& tbl = offset_table(par.s);
  const double scale = std::pow(A.h, 2.0 - par.s);
  const auto ca = detail::set_cells(A);
  const auto cb = detail::set_cells(B);
  if (ca.empty() || cb.empty()) return {};
  if (!same_frame) {
    for (const auto& [bi, bj] : cb) {
      const int i = bi + shx, j = bj + shy;
      if (i >= 0 && i < A.width && j >= 0 && j < A.height && A.test(i, j))
        throw OverlapError("pixel sets overlap");
    }
  }
  const double pairs =
      static_cast<double>(ca.size()) * static_cast<double>(cb.size());
  QuadResult out;
  if (same_frame && pairs > 1e7) {
    std::vector<double> ia(A.occupancy.size()), ib(B.occupancy.size());
    for (std::size_t c = 0; c < ia.size(); ++c) ia[c] = A.occupancy[c] ? 1.0 : 0.0;
    for (std::size_t c = 0; c < ib.size(); ++c) ib[c] = B.occupancy[c] ? 1.0 : 0.0;
    out.value = scale * detail::fft_corr_sum(A.width, A.height, ia, ib,
                                             [&](int di, int dj) { return tbl(di, dj); });
    out.error = scale * detail::fft_corr_sum(
                            A.width, A.height, ia, ib,
                            [&](int di, int dj) { return tbl.far_error(di, dj); });
    out.error += 1e-11 * std::abs(out.value);
    return out;
  }
  if (pairs > 4e9) throw TooLarge("pixel pair sum too large");
  // Dense cache over the occurring offset box keeps pow() out of the pair loop.
  int aimin = A.width, aimax = -1, ajmin = A.height, ajmax = -1;
  for (const auto& [i, j] : ca) {
    aimin = std::min(aimin, i); aimax = std::max(aimax, i);
    ajmin = std::min(ajmin, j); ajmax = std::max(ajmax, j);
  }
  int bimin = B.width, bimax = -1, bjmin = B.height, bjmax = -1;
  for (const auto& [i, j] : cb) {
    bimin = std::min(bimin, i); bimax = std::max(bimax, i);
    bjmin = std::min(bjmin, j); bjmax = std::max(bjmax, j);
  }
  const int dimin = bimin + shx - aimax, dimax = bimax + shx - aimin;
  const int djmin = bjmin + shy - ajmax, djmax = bjmax + shy - ajmin;
  const std::size_t wd = static_cast<std::size_t>(dimax - dimin + 1);
  const std::size_t hd = static_cast<std::size_t>(djmax - djmin + 1);
  std::vector<double> vals(ca.size(), 0.0), errs(ca.size(), 0.0);
  if (wd * hd <= std::size_t(3) * 10000000 && wd * hd * 4 < pairs) {
    std::vector<double> tv(wd * hd), te(wd * hd);
    parallel_blocks(hd, [&](std::size_t r) {
      const int dj = djmin + static_cast<int>(r);
      for (std::size_t cix = 0; cix < wd; ++cix) {
        const int di = dimin + static_cast<int>(cix);
        tv[r * wd + cix] = tbl(di, dj);
        te[r * wd + cix] = tbl.far_error(di, dj);
      }
    });
    parallel_blocks(ca.size(), [&](std::size_t k) {
      const auto [ai, aj] = ca[k];
      const int oi = shx - ai - dimin, oj = shy - aj - djmin;
      double v = 0.0, e = 0.0;
      for (const auto& [bi, bj] : cb) {
        const std::size_t idx =
            static_cast<std::size_t>(bj + oj) * wd + static_cast<std::size_t>(bi + oi);
        v += tv[idx];
        e += te[idx];
      }
      vals[k] = v;
      errs[k] = e;
    });
  } else {
    parallel_blocks(ca.size(), [&](std::size_t k) {
      const auto [ai, aj] = ca[k];
      double v = 0.0, e = 0.0;
      for (const auto& [bi, bj] : cb) {
        const int di = bi + shx - ai, dj = bj + shy - aj;
        v += tbl(di, dj);
        e += tbl.far_error(di, dj);
      }
      vals[k] = v;
      errs[k] = e;
    });
  }
  out.value = scale * pairwise_sum(vals);
  out.error = scale * pairwise_sum(errs) + 1e-11 * std::abs(out.value);
  (void)spec;
  return out;
}

// ===== interaction_quad entry points =====

// Numeric 1D path: the inner y-integral uses the elementary antiderivative of
// the kernel column; the outer x-integral is adaptive, with the touching-
// endpoint power peeled off by substitution.
inline QuadResult interval_interaction_quad(Interval A, Interval B, double s,
                                            const QuadratureSpec& spec = {}) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (!(A.left < A.right) || !(B.left < B.right)) throw OrderingError("empty interval");
  if (A.left > B.left) std::swap(A, B);
  if (B.left < A.right) throw OverlapError("intervals overlap");
  const double a = A.left, b = A.right, c = B.left, d = B.right;
  auto inner = [&](double x) {
    return (std::pow(c - x, -s) - std::pow(d - x, -s)) / s;
  };
  QuadResult out;
  if (c > b) {
    out = integrate_adaptive(inner, a, b, spec.rel_tol, spec.abs_tol,
                             spec.max_subdivision_depth);
  } else {
    // Touching case: write the integrand in terms of the distance t = b - x to
    // the contact point so the cancellation b - (b - t) never happens in
    // floating point (it rounds to zero once t drops below machine epsilon).
    const double span = d - b;
    out = integrate_power_singular(
        [&](double t) { return (1.0 - std::pow(t / (t + span), s)) / s; }, s,
        b - a, spec.rel_tol, spec.abs_tol);
  }
  if (out.error > std::max(100.0 * spec.abs_tol,
                           100.0 * spec.rel_tol * std::abs(out.value)))
    throw ToleranceNotMet("1D interaction quadrature did not converge", out.value,
                          out.error);
  return out;
}

namespace detail {

inline bool axis_aligned_rect(const Polygon& poly, Rect& out) {
  if (poly.vertices.size() != 4) return false;
  const Rect bb = bounding_box(poly);
  int hits = 0;
  for (const auto& v : poly.vertices) {
    const bool on_x = v.x == bb.xmin || v.x == bb.xmax;
    const bool on_y = v.y == bb.ymin || v.y == bb.ymax;
    if (on_x && on_y) ++hits;
  }
  if (hits != 4) return false;
  out = bb;
  return true;
}

}  // namespace detail

inline QuadResult interaction_quad(const GridSet& A, const GridSet& B,
                                   const FracParams& par, const QuadratureSpec& spec = {}) {
  auto r = grid_interaction(A, B, par, spec);
  if (r.value != 0.0 && !(r.error <= std::max(spec.abs_tol, 1e-2 * std::abs(r.value))))
    throw ToleranceNotMet("grid interaction error estimate too large", r.value, r.error);
  return r;
}

inline QuadResult interaction_quad(const AnalyticShape& A, const AnalyticShape& B,
                                   const FracParams& par, const QuadratureSpec& spec = {}) {
  validate(par);
  Rect ra, rb;
  const auto* pa = std::get_if<Polygon>(&A);
  const auto* pb = std::get_if<Polygon>(&B);
  if (pa && pb && detail::axis_aligned_rect(*pa, ra) && detail::axis_aligned_rect(*pb, rb))
    return rect_interaction(ra, rb, par.s, spec.rel_tol, spec.abs_tol);
  // generic bounded shapes: rasterize both, pair the cells
  const Rect ba = bounding_box(A), bb = bounding_box(B);
  const double h = std::max({ba.width(), ba.height(), bb.width(), bb.height()}) / 192.0;
  const GridSet ga = rasterize(A, ba, h), gb = rasterize(B, bb, h);
  if (ga.count_set() == 0 || gb.count_set() == 0) return {};
  QuadResult r = grid_interaction(ga, gb, par, spec);
  // rasterization moves each boundary by O(h): first-order measure estimate
  auto staircase = [](const GridSet& g) {
    double edges = 0.0;
    for (int j = 0; j < g.height; ++j)
      for (int i = 0; i < g.width; ++i) {
        if (!g.test(i, j)) continue;
        if (i == 0 || !g.test(i - 1, j)) edges += g.h;
        if (i == g.width - 1 || !g.test(i + 1, j)) edges += g.h;
        if (j == 0 || !g.test(i, j - 1)) edges += g.h;
        if (j == g.height - 1 || !g.test(i, j + 1)) edges += g.h;
      }
    return edges;
  };
  const double rel_geom = 0.5 * h *
                          (staircase(ga) / std::max(ga.measure(), 1e-300) +
                           staircase(gb) / std::max(gb.measure(), 1e-300));
  r.error += std::abs(r.value) * rel_geom;
  return r;
}

}  // namespace nlperim
