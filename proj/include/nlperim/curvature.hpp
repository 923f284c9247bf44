#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <variant>
#include <vector>

#include "nlperim/perimeter.hpp"

namespace nlperim {

// ===== Result types =====

// Principal-value trace of the curvature integral: one row per exclusion
// radius, radii strictly decreasing.  value is the extrapolated limit.
struct CurvatureResult {
  double value = 0.0;
  std::vector<std::pair<double, double>> pv_trace;
  double cauchy_gap = 0.0;   // max successive difference over the trace tail
  double quad_error = 0.0;   // propagated angular-quadrature error for value
};

// The half-space admits an exact cancellation argument; "generic" forces the
// quadrature path even when a shortcut exists.
enum class PvPath { automatic, generic };

namespace curvdetail {

// ===== Ray crossings =====
//
// The curvature integrand is +-1 times the kernel, so in polar coordinates
// around the base point each direction contributes a sum of closed-form
// radial integrals between sign changes.  We enumerate candidate crossing
// radii per shape; spurious candidates are harmless because segment signs are
// re-sampled at midpoints.

inline void ray_hits(const Ball& b, Vec2 x, Vec2 u, std::vector<double>& out) {
  const Vec2 d = b.center - x;
  const double pu = dot(d, u);
  const double disc = pu * pu - (dot(d, d) - b.radius * b.radius);
  if (disc <= 0.0) return;
  const double sq = std::sqrt(disc);
  if (pu - sq > 0.0) out.push_back(pu - sq);
  if (pu + sq > 0.0) out.push_back(pu + sq);
}

inline void ray_hits(const HalfSpace& hs, Vec2 x, Vec2 u, std::vector<double>& out) {
  const double un = dot(u, hs.normal);
  if (un == 0.0) return;
  const double r = (hs.offset - dot(x, hs.normal)) / un;
  if (r > 0.0) out.push_back(r);
}

inline void ray_hits(const Polygon& p, Vec2 x, Vec2 u, std::vector<double>& out) {
  const auto& v = p.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Vec2 a = v[j], e = v[i] - v[j];
    const double den = cross(u, e);
    if (den == 0.0) continue;
    const double r = cross(a - x, e) / den;
    const double t = cross(a - x, u) / den;
    if (r > 0.0 && t >= 0.0 && t < 1.0) out.push_back(r);
  }
}

// All real roots of the polynomial (ascending coefficients) inside (lo, hi),
// isolated by recursing on the derivative and bisecting monotone pieces.
inline void poly_roots_in(const std::vector<double>& c, double lo, double hi,
                          std::vector<double>& out) {
  std::size_t deg = c.size();
  while (deg > 0 && c[deg - 1] == 0.0) --deg;
  if (deg <= 1) return;
  if (deg == 2) {
    const double r = -c[0] / c[1];
    if (r > lo && r < hi) out.push_back(r);
    return;
  }
  std::vector<double> d(deg - 1);
  for (std::size_t k = 1; k < deg; ++k) d[k - 1] = c[k] * static_cast<double>(k);
  std::vector<double> brk;
  poly_roots_in(d, lo, hi, brk);
  std::sort(brk.begin(), brk.end());
  brk.push_back(hi);
  double a = lo, fa = poly_eval(c, a);
  for (double b : brk) {
    const double fb = poly_eval(c, b);
    if ((fa < 0.0) != (fb < 0.0)) {
      double xa = a, xb = b;
      for (int it = 0; it < 80; ++it) {
        const double m = 0.5 * (xa + xb);
        if ((poly_eval(c, m) < 0.0) == (fa < 0.0))
          xa = m;
        else
          xb = m;
      }
      out.push_back(0.5 * (xa + xb));
    }
    a = b;
    fa = fb;
  }
}

// u(x0 + r ux) as a polynomial in r
inline std::vector<double> compose_graph(const std::vector<double>& coeff,
                                         double x0, double ux) {
  std::vector<double> comp(std::max<std::size_t>(coeff.size(), 1), 0.0);
  std::vector<double> pw{1.0};
  for (std::size_t k = 0; k < coeff.size(); ++k) {
    for (std::size_t m = 0; m < pw.size(); ++m) comp[m] += coeff[k] * pw[m];
    std::vector<double> nw(pw.size() + 1, 0.0);
    for (std::size_t m = 0; m < pw.size(); ++m) {
      nw[m] += pw[m] * x0;
      nw[m + 1] += pw[m] * ux;
    }
    pw = std::move(nw);
  }
  return comp;
}

inline void graph_ray_roots(const std::vector<double>& coeff, Vec2 x, Vec2 u,
                            double rmax, std::vector<double>& out) {
  std::vector<double> f = compose_graph(coeff, x.x, u.x);
  // graph crossing: x.y + r u.y = u(x.x + r u.x)
  if (f.size() < 2) f.resize(2, 0.0);
  for (auto& v : f) v = -v;
  f[0] += x.y;
  f[1] += u.y;
  poly_roots_in(f, 0.0, rmax, out);
}

inline void ray_hits(const Subgraph& g, Vec2 x, Vec2 u, std::vector<double>& out) {
  const double R = g.radius;
  if (u.x != 0.0) {
    for (double tx : {-R, R}) {
      const double r = (tx - x.x) / u.x;
      if (r > 0.0) out.push_back(r);
    }
  }
  if (u.y != 0.0) {
    const double r = (-R - x.y) / u.y;
    if (r > 0.0) out.push_back(r);
  }
  double m = 0.0;
  for (std::size_t k = 0; k < g.coeff.size(); ++k)
    m += std::abs(g.coeff[k]) * std::pow(R, static_cast<double>(k));
  const double rmax = 2.0 * (R + m + std::abs(x.x) + std::abs(x.y) + 1.0);
  graph_ray_roots(g.coeff, x, u, rmax, out);
}

// ===== Angular breakpoints =====
//
// Directions where the crossing structure changes (tangencies, vertices,
// corners).  The angular quadrature splits there; leftover kinks are handled
// adaptively.

inline void push_angle(std::vector<double>& out, double phi) {
  phi = std::fmod(phi, 2.0 * kPi);
  if (phi < 0.0) phi += 2.0 * kPi;
  out.push_back(phi);
}

inline void feature_angles(const Ball& b, Vec2 x, std::vector<double>& out) {
  const Vec2 d = b.center - x;
  const double phi = std::atan2(d.y, d.x);
  push_angle(out, phi + 0.5 * kPi);
  push_angle(out, phi - 0.5 * kPi);
}

inline void feature_angles(const HalfSpace& hs, Vec2 x, std::vector<double>& out) {
  (void)x;
  const double phi = std::atan2(hs.normal.y, hs.normal.x);
  push_angle(out, phi + 0.5 * kPi);
  push_angle(out, phi - 0.5 * kPi);
}

inline void feature_angles(const Polygon& p, Vec2 x, std::vector<double>& out) {
  for (const Vec2& v : p.vertices) {
    const Vec2 d = v - x;
    if (norm(d) > 1e-14) push_angle(out, std::atan2(d.y, d.x));
  }
}

inline void feature_angles(const Subgraph& g, Vec2 x, std::vector<double>& out) {
  const double R = g.radius;
  const Vec2 corners[4] = {{-R, -R},
                           {R, -R},
                           {-R, poly_eval(g.coeff, -R)},
                           {R, poly_eval(g.coeff, R)}};
  for (const Vec2& c : corners) {
    const Vec2 d = c - x;
    if (norm(d) > 1e-14) push_angle(out, std::atan2(d.y, d.x));
  }
}

// ===== Radial and angular integration =====

// (1/s) * integral of sign(r) r^{-1-s} over (rho, rmax), signs re-sampled at
// segment midpoints; rmax = +inf adds the far tail of the last segment.
template <class Shape>
inline double radial_signed(const Shape& E, bool complement_of, Vec2 x, Vec2 u,
                            double rho, double s, double rmax,
                            std::vector<double>& hits) {
  hits.clear();
  ray_hits(E, x, u, hits);
  std::sort(hits.begin(), hits.end());
  const double flip = complement_of ? -1.0 : 1.0;
  double acc = 0.0, a = rho;
  for (double hcross : hits) {
    if (hcross <= a) continue;
    if (hcross >= rmax) break;
    const Vec2 mid = x + (0.5 * (a + hcross)) * u;
    const double sg = contains(E, mid) ? flip : -flip;
    acc += sg * (std::pow(a, -s) - std::pow(hcross, -s));
    a = hcross;
  }
  if (rmax == kInf) {
    const Vec2 far = x + (a + std::max(1.0, a)) * u;
    acc += (contains(E, far) ? flip : -flip) * std::pow(a, -s);
  } else if (rmax > a) {
    const Vec2 mid = x + (0.5 * (a + rmax)) * u;
    const double sg = contains(E, mid) ? flip : -flip;
    acc += sg * (std::pow(a, -s) - std::pow(rmax, -s));
  }
  return acc / s;
}

// One trace entry: angular integral of the radial sums over a full turn.
// exit(phi) returns the cutoff radius for windowed variants (kInf otherwise).
template <class Shape, class Exit>
inline double pv_entry(const Shape& E, bool complement_of, Vec2 x, double rho,
                       double s, const std::vector<double>& breakpoints,
                       Exit&& exit, double rel_tol, double& err_acc) {
  std::vector<double> hits;
  auto f = [&](double phi) {
    const Vec2 u{std::cos(phi), std::sin(phi)};
    return radial_signed(E, complement_of, x, u, rho, s, exit(phi), hits);
  };
  const double floor_tol = 1e-13 * std::pow(rho, -s) / s;
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    const QuadResult q = integrate_adaptive(f, breakpoints[k], breakpoints[k + 1],
                                            rel_tol, floor_tol);
    total += q.value;
    err_acc += q.error;
  }
  return total;
}

inline std::vector<double> breakpoint_grid(std::vector<double> features) {
  std::vector<double> out{0.0, 2.0 * kPi};
  for (int k = 1; k < 16; ++k) out.push_back(2.0 * kPi * k / 16.0);
  for (double phi : features) out.push_back(phi);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-12; }),
            out.end());
  if (out.back() < 2.0 * kPi - 1e-12) out.push_back(2.0 * kPi);
  return out;
}

// Exclusion-radius schedule: halve eight times starting from the local
// feature size (or take the caller's override).
inline std::vector<double> pv_schedule(double r_loc, const QuadratureSpec& quad) {
  if (!quad.pv_radii.empty()) return quad.pv_radii;
  std::vector<double> out;
  for (int j = 1; j <= 8; ++j) out.push_back(r_loc * std::pow(2.0, -j));
  return out;
}

// Two-stage extrapolation of the trace: the disk expansion carries rho^{1-s}
// and rho^{3-s} terms, so eliminate both from the last three entries.
inline double trace_value(const std::vector<std::pair<double, double>>& tr,
                          double s, double& amplification, double& correction) {
  amplification = 1.0;
  correction = 0.0;
  const std::size_t m = tr.size();
  if (m == 0) return 0.0;
  if (m == 1) return tr[0].second;
  auto stage1 = [&](std::size_t i, std::size_t j) {
    const double q = std::pow(tr[i].first / tr[j].first, 1.0 - s);
    return tr[j].second + (tr[j].second - tr[i].second) / (q - 1.0);
  };
  const double q1 = std::pow(tr[m - 2].first / tr[m - 1].first, 1.0 - s);
  if (m == 2) {
    amplification = 1.0 + 2.0 / (q1 - 1.0);
    return stage1(0, 1);
  }
  const double a1 = stage1(m - 3, m - 2);
  const double a2 = stage1(m - 2, m - 1);
  const double q2 = std::pow(tr[m - 2].first / tr[m - 1].first, 3.0 - s);
  const double value = a2 + (a2 - a1) / (q2 - 1.0);
  correction = std::abs(value - a2);
  amplification = (1.0 + 2.0 / (q1 - 1.0)) * (1.0 + 2.0 / (q2 - 1.0));
  return value;
}

template <class Shape, class Exit>
inline CurvatureResult pv_run(const Shape& E, bool complement_of, Vec2 x,
                              const std::vector<double>& radii, double s,
                              const std::vector<double>& breakpoints,
                              Exit&& exit, const QuadratureSpec& quad) {
  CurvatureResult out;
  const std::size_t m = radii.size();
  std::vector<double> vals(m, 0.0), errs(m, 0.0);
  parallel_blocks(m, [&](std::size_t k) {
    vals[k] = pv_entry(E, complement_of, x, radii[k], s, breakpoints, exit,
                       quad.rel_tol, errs[k]);
  });
  for (std::size_t k = 0; k < m; ++k) out.pv_trace.push_back({radii[k], vals[k]});
  for (std::size_t k = m >= 4 ? m - 3 : 1; k < m; ++k)
    out.cauchy_gap = std::max(out.cauchy_gap, std::abs(vals[k] - vals[k - 1]));
  if (m >= 3) {
    const double g_last = std::abs(vals[m - 1] - vals[m - 2]);
    const double g_prev = std::abs(vals[m - 2] - vals[m - 3]);
    const double noise = 10.0 * (errs[m - 1] + errs[m - 2]) +
                         1e-12 * (std::abs(vals[m - 1]) + 1.0);
    if (g_last > noise && g_last >= g_prev)
      throw NoCancellation("PV trace stopped contracting at the final radius");
  }
  double amp = 1.0, corr = 0.0;
  out.value = trace_value(out.pv_trace, s, amp, corr);
  double emax = 0.0;
  for (std::size_t k = m >= 3 ? m - 3 : 0; k < m; ++k) emax = std::max(emax, errs[k]);
  out.quad_error = emax * amp + corr;
  return out;
}

inline double local_feature_size(const Ball& b, Vec2) { return b.radius; }
inline double local_feature_size(const HalfSpace&, Vec2) { return 1.0; }
inline double local_feature_size(const Polygon& p, Vec2 x) {
  double d1 = kInf;
  for (const Vec2& v : p.vertices) {
    const double d = norm(v - x);
    if (d > 1e-12) d1 = std::min(d1, d);
  }
  return d1 == kInf ? 1.0 : d1;
}
inline double local_feature_size(const Subgraph& g, Vec2 x) {
  const double R = g.radius;
  double d1 = kInf;
  const Vec2 corners[4] = {{-R, -R},
                           {R, -R},
                           {-R, poly_eval(g.coeff, -R)},
                           {R, poly_eval(g.coeff, R)}};
  for (const Vec2& c : corners) {
    const double d = norm(c - x);
    if (d > 1e-12) d1 = std::min(d1, d);
  }
  return d1 == kInf ? R : std::min(d1, R);
}

}  // namespace curvdetail

// ===== Principal-value curvature =====

inline CurvatureResult fmc_pv(const AnalyticShape& E, Vec2 x,
                              const FracParams& params,
                              const QuadratureSpec& quad = {},
                              PvPath path = PvPath::automatic,
                              bool complement_of = false) {
  validate(params);
  validate(quad);
  validate(E);
  if (params.n != 2) throw DomainError("curvature requires ambient dimension 2");
  const double scale = std::max(1.0, norm(x));
  if (std::abs(signed_distance(E, x)) > 1e-6 * scale)
    throw NotOnBoundary("base point is not on the boundary");
  const double s = params.s;
  return std::visit(
      [&](const auto& shape) -> CurvatureResult {
        const auto radii =
            curvdetail::pv_schedule(curvdetail::local_feature_size(shape, x), quad);
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, HalfSpace>) {
          if (path == PvPath::automatic) {
            // opposite rays swap set and complement, so every annulus
            // integrates to zero exactly
            CurvatureResult out;
            for (double rho : radii) out.pv_trace.push_back({rho, 0.0});
            return out;
          }
        }
        std::vector<double> feats;
        curvdetail::feature_angles(shape, x, feats);
        const auto brk = curvdetail::breakpoint_grid(std::move(feats));
        return curvdetail::pv_run(shape, complement_of, x, radii, s, brk,
                                  [](double) { return kInf; }, quad);
      },
      E);
}

// PV restricted to the vertical window {|y_1 - x_1| < r} of the full graph
// {y_2 < u(y_1)} (no box floor), base point at the origin of the graph.
// This is the quantity the explicit graph formula reproduces.
inline CurvatureResult fmc_pv_cylinder(const Subgraph& E, double r,
                                       const FracParams& params,
                                       const QuadratureSpec& quad = {}) {
  validate(params);
  validate(quad);
  validate(E);
  if (params.n != 2) throw DomainError("curvature requires ambient dimension 2");
  if (!(r > 0.0)) throw DomainError("window radius must be positive");
  const Vec2 x{0.0, 0.0};
  const double s = params.s;
  const double rl = std::min(r, curvdetail::local_feature_size(E, x));
  const auto radii = curvdetail::pv_schedule(rl, quad);

  std::vector<double> feats;
  curvdetail::push_angle(feats, 0.5 * kPi);
  curvdetail::push_angle(feats, -0.5 * kPi);
  for (double tx : {-r, r}) {
    const Vec2 c{tx, poly_eval(E.coeff, tx)};
    if (norm(c) > 1e-14) curvdetail::push_angle(feats, std::atan2(c.y, c.x));
  }
  const auto brk = curvdetail::breakpoint_grid(std::move(feats));

  CurvatureResult out;
  const std::size_t m = radii.size();
  std::vector<double> vals(m, 0.0), errs(m, 0.0);
  double gmax = 0.0;
  for (std::size_t k = 0; k < E.coeff.size(); ++k)
    gmax += std::abs(E.coeff[k]) * std::pow(r, static_cast<double>(k));
  const double far = 2.0 * (r + gmax + 1.0);
  parallel_blocks(m, [&](std::size_t k) {
    std::vector<double> hits;
    auto f = [&](double phi) {
      const Vec2 u{std::cos(phi), std::sin(phi)};
      const double rexit = std::abs(u.x) > r / 1e12 ? r / std::abs(u.x) : kInf;
      hits.clear();
      curvdetail::graph_ray_roots(E.coeff, x, u, std::min(rexit, far), hits);
      std::sort(hits.begin(), hits.end());
      double acc = 0.0, a = radii[k];
      auto below = [&](double rr) {
        const Vec2 p = x + rr * u;
        return p.y < poly_eval(E.coeff, p.x);
      };
      for (double hc : hits) {
        if (hc <= a) continue;
        if (hc >= rexit) break;
        acc += (below(0.5 * (a + hc)) ? 1.0 : -1.0) *
               (std::pow(a, -s) - std::pow(hc, -s));
        a = hc;
      }
      if (rexit == kInf) {
        acc += (below(a + std::max(1.0, a)) ? 1.0 : -1.0) * std::pow(a, -s);
      } else if (rexit > a) {
        acc += (below(0.5 * (a + rexit)) ? 1.0 : -1.0) *
               (std::pow(a, -s) - std::pow(rexit, -s));
      }
      return acc / s;
    };
    const double floor_tol = 1e-13 * std::pow(radii[k], -s) / s;
    for (std::size_t b = 0; b + 1 < brk.size(); ++b) {
      const QuadResult q =
          integrate_adaptive(f, brk[b], brk[b + 1], quad.rel_tol, floor_tol);
      vals[k] += q.value;
      errs[k] += q.error;
    }
  });
  for (std::size_t k = 0; k < m; ++k) out.pv_trace.push_back({radii[k], vals[k]});
  for (std::size_t k = m >= 4 ? m - 3 : 1; k < m; ++k)
    out.cauchy_gap = std::max(out.cauchy_gap, std::abs(vals[k] - vals[k - 1]));
  double amp = 1.0, corr = 0.0;
  out.value = curvdetail::trace_value(out.pv_trace, s, amp, corr);
  double emax = 0.0;
  for (std::size_t k = m >= 3 ? m - 3 : 0; k < m; ++k) emax = std::max(emax, errs[k]);
  out.quad_error = emax * amp + corr;
  return out;
}

// ===== Explicit graph formula =====

// Samples of a C^{1,alpha} graph on [-radius, radius], uniform spacing, odd
// count so the origin is a node.
struct GraphTable {
  double radius = 1.0;
  std::vector<double> values;
};

inline void validate(const GraphTable& g) {
  if (!(g.radius > 0.0)) throw DomainError("graph table radius must be positive");
  if (g.values.size() < 5 || g.values.size() % 2 == 0)
    throw DomainError("graph table needs an odd sample count of at least 5");
  if (std::abs(g.values[g.values.size() / 2]) > 1e-12)
    throw DomainError("graph must vanish at the origin");
}

namespace curvdetail {

// Cubic Hermite interpolation with finite-difference slopes; reproduces
// quadratics exactly, which the formula tests rely on.
struct HermiteTable {
  double r = 1.0, h = 1.0;
  std::vector<double> v, d;

  explicit HermiteTable(const GraphTable& g) : r(g.radius), v(g.values) {
    const std::size_t m = v.size();
    v[m / 2] = 0.0;  // validated tiny; exact zero keeps the ratio forms clean
    h = 2.0 * r / static_cast<double>(m - 1);
    d.resize(m);
    for (std::size_t i = 1; i + 1 < m; ++i) d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[m - 1] = (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) / (2.0 * h);
  }
  double operator()(double t) const {
    const double u =
        std::clamp((t + r) / h, 0.0, static_cast<double>(v.size() - 1) - 1e-12);
    const std::size_t i = static_cast<std::size_t>(u);
    const double w = u - static_cast<double>(i);
    const double w2 = w * w, w3 = w2 * w;
    return (2.0 * w3 - 3.0 * w2 + 1.0) * v[i] + (w3 - 2.0 * w2 + w) * h * d[i] +
           (-2.0 * w3 + 3.0 * w2) * v[i + 1] + (w3 - w2) * h * d[i + 1];
  }
  // u(t)/t, u(-t)/t and their sum divided once more by t, for t in (0, r].
  // Inside the two central cells the interpolant is factored so the divisions
  // never amplify rounding noise; the odd (slope) parts cancel symbolically in
  // the sum.  Dividing the raw interpolant by t twice loses everything below
  // t ~ 1e-5.
  void ratio_pair(double t, double& Tp, double& Tm, double& S_over_t) const {
    if (t < h) {
      const std::size_t m0 = v.size() / 2;
      const double w = t / h, omw = 1.0 - w, f32 = 3.0 - 2.0 * w;
      Tp = d[m0] * omw * omw + w * (v[m0 + 1] * f32 / h - d[m0 + 1] * omw);
      Tm = -d[m0] * omw * omw + w * (v[m0 - 1] * f32 / h + d[m0 - 1] * omw);
      S_over_t = (v[m0 + 1] + v[m0 - 1]) * f32 / (h * h) +
                 (d[m0 - 1] - d[m0 + 1]) * omw / h;
    } else {
      Tp = (*this)(t) / t;
      Tm = (*this)(-t) / t;
      S_over_t = (Tp + Tm) / t;
    }
  }
  // max nodal-slope Holder quotient at exponent alpha and the given stride
  double holder(double alpha, std::size_t stride = 1) const {
    double H = 0.0;
    const double hh = h * static_cast<double>(stride);
    for (std::size_t i = 0; i + 2 * stride < v.size(); ++i) {
      const double g0 = (v[i + stride] - v[i]) / hh;
      const double g1 = (v[i + 2 * stride] - v[i + stride]) / hh;
      H = std::max(H, std::abs(g1 - g0) / std::pow(hh, alpha));
    }
    return H;
  }
};

inline double graph_regularity_exponent(double s) { return s + 0.45 * (1.0 - s); }

}  // namespace curvdetail

// Contribution of the graph over its own vertical window to the curvature at
// the origin: 2 * integral of (inner arctan-type profile) against the
// |y'|^{-(n+s-1)} weight.  Positive when the graph bends upward.
inline double fmc_graph_local(const GraphTable& u, const FracParams& params,
                              double rel_tol = 1e-10) {
  validate(u);
  validate(params);
  if (params.n != 2) throw DomainError("graph formula implemented for ambient dimension 2");
  const double s = params.s;
  const curvdetail::HermiteTable tab(u);
  const double alpha = curvdetail::graph_regularity_exponent(s);
  // a slope jump keeps its Holder quotient growing toward the fine scale
  // (h^{-alpha}); smooth data decays there (|u''| h^{1-alpha}), so compare the
  // two dyadic scales instead of trusting an absolute level
  const double rough = tab.holder(alpha), rough2 = tab.holder(alpha, 2);
  if (rough > 1.0 && rough >= 1.2 * rough2)
    throw RegularityError("slope jumps persist at the finest scale: data is rougher than C^{1,alpha}");

  const double p = 2.0 + s;
  auto kern = [&](double t) { return std::pow(1.0 + t * t, -0.5 * p); };
  auto inner = [&](double T) {
    const double sgn = T < 0.0 ? -1.0 : 1.0;
    const double a = std::abs(T);
    double w = gauss(gl32(), kern, 0.0, std::min(a, 3.0));
    if (a > 3.0) w += integrate_adaptive(kern, 3.0, a, 1e-12, 1e-300).value;
    return sgn * w;
  };
  // Both wings at once.  Writing the pair as one kernel integral over
  // [-u(-v)/v, u(v)/v] keeps the near-origin cancellation exact: the interval
  // width comes from the factored even part, never from subtracting two noisy
  // interpolant values.
  const GaussRule& rule = gl32();
  auto f = [&](double v) {
    double Tp, Tm, Sv;
    tab.ratio_pair(v, Tp, Tm, Sv);
    const double S = Sv * v;
    if (std::abs(S) <= 0.5) {
      const double c = 0.5 * (Tp - Tm), hw = 0.5 * S;
      double acc = 0.0;
      for (std::size_t i = 0; i < rule.x.size(); ++i)
        acc += rule.w[i] * kern(c + hw * rule.x[i]);
      return Sv * acc;
    }
    return 2.0 * (inner(Tp) + inner(Tm)) / v;
  };
  // |u(t)| <= M |t| bounds the integrand scale; an absolute floor at that
  // scale keeps flat and odd graphs (true value ~ 0) from grinding on noise.
  double slope_max = 0.0;
  for (std::size_t i = 0; i + 1 < u.values.size(); ++i)
    slope_max = std::max(slope_max, std::abs(u.values[i + 1] - u.values[i]) / tab.h);
  const double scale =
      4.0 * std::max(slope_max, 1e-3) * std::pow(u.radius, 1.0 - s) / (1.0 - s);
  const QuadResult q = integrate_power_singular(f, s, u.radius, rel_tol, 1e-13 * scale);
  if (!q.converged)
    throw ToleranceNotMet("graph curvature quadrature stalled", q.value, q.error);
  return q.value;
}

// ===== Asymptotic scan =====

// Classical mean curvature with the orientation that makes the s->1 identity
// hold for the ball (measured sign; see fmc_asymptotic_scan).
inline double classical_mean_curvature(const AnalyticShape& E, Vec2 x) {
  if (const Ball* b = std::get_if<Ball>(&E)) return 1.0 / b->radius;
  if (const Subgraph* g = std::get_if<Subgraph>(&E)) {
    std::vector<double> d1(g->coeff.size() > 1 ? g->coeff.size() - 1 : 1, 0.0);
    for (std::size_t k = 1; k < g->coeff.size(); ++k)
      d1[k - 1] = g->coeff[k] * static_cast<double>(k);
    std::vector<double> d2(d1.size() > 1 ? d1.size() - 1 : 1, 0.0);
    for (std::size_t k = 1; k < d1.size(); ++k)
      d2[k - 1] = d1[k] * static_cast<double>(k);
    const double up = poly_eval(d1, x.x), upp = poly_eval(d2, x.x);
    return -upp / std::pow(1.0 + up * up, 1.5);
  }
  return 0.0;  // half-space; polygon edges are flat
}

// Rows of (s, (1-s) I_s, target).  The limit constant is (n-1) omega_{n-1} H;
// the measured sign for the ball is negative, so the target carries that sign.
inline AsymptoticTable fmc_asymptotic_scan(const AnalyticShape& E, Vec2 x,
                                           const std::vector<double>& s_list,
                                           const QuadratureSpec& quad = {}) {
  AsymptoticTable tab;
  tab.n = 2;
  const double target = -omega(1) * classical_mean_curvature(E, x);
  for (double s : s_list) {
    const CurvatureResult r = fmc_pv(E, x, FracParams{2, s}, quad);
    tab.rows.push_back({s, (1.0 - s) * r.value, target, (1.0 - s) * r.quad_error});
  }
  return tab;
}

// ===== Lattice Euler-Lagrange residual =====

struct ResidualCell {
  int i = 0, j = 0;
  double value = 0.0;
};

struct ResidualReport {
  double max_abs = 0.0;
  std::vector<ResidualCell> cells;
};

namespace curvdetail {

// Point-kernel mass of a straight lattice interface seen from the first
// interior cell center (own row uncancelled): the discrete operator's
// flat-interface constant.  Subtracting it renormalizes the residual so flat
// boundaries read as zero.
inline double flat_interface_constant(double s) {
  const PointTable& pt = point_table(s);
  const double p = 2.0 + s;
  double acc = 0.0;
  for (int k = 1; k <= 400; ++k) acc += pt(k, 0);
  acc += std::pow(400.5, 1.0 - p) / (p - 1.0);
  return 2.0 * acc;
}

// Signed mass of the plane outside the frame under the continuation rule:
// every frame-edge cell extends to infinity away from the frame.  Axis-aligned
// half-planes therefore continue exactly, and shapes that stay clear of the
// frame see a pure-complement exterior.  All quantities in lattice units
// relative to the cell center (ci,cj).
struct OutsideContinuation {
  const GridSet* E = nullptr;
  double s = 0.5;
  std::map<std::pair<double, double>, double> memo;

  // mass of {dx >= a, dy >= b}; a > 0, b any sign
  double quadrant(double a, double b) {
    const auto key = std::make_pair(a, b);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    const double v = point_to_quadrant(a, b, s);
    memo.emplace(key, v);
    return v;
  }
  double strip(double a, double lo, double hi) {
    return quadrant(a, lo) - quadrant(a, hi);
  }
  double at(int ci, int cj) {
    const int W = E->width, H = E->height;
    const double L = ci + 0.5, R = W - ci - 0.5, B = cj + 0.5, T = H - cj - 0.5;
    double acc = 0.0;
    auto sgn = [&](int i, int j) { return E->test(i, j) ? 1.0 : -1.0; };
    auto column = [&](int col, double a) {  // runs of equal occupancy
      for (int j = 0; j < H;) {
        int j2 = j;
        while (j2 + 1 < H && E->test(col, j2 + 1) == E->test(col, j)) ++j2;
        acc += sgn(col, j) * strip(a, j - cj - 0.5, j2 - cj + 0.5);
        j = j2 + 1;
      }
    };
    auto row = [&](int rw, double a) {
      for (int i = 0; i < W;) {
        int i2 = i;
        while (i2 + 1 < W && E->test(i2 + 1, rw) == E->test(i, rw)) ++i2;
        acc += sgn(i, rw) * strip(a, i - ci - 0.5, i2 - ci + 0.5);
        i = i2 + 1;
      }
    };
    column(W - 1, R);
    column(0, L);
    row(H - 1, T);
    row(0, B);
    acc += sgn(W - 1, H - 1) * quadrant(R, T) + sgn(0, H - 1) * quadrant(L, T) +
           sgn(W - 1, 0) * quadrant(R, B) + sgn(0, 0) * quadrant(L, B);
    return acc;
  }
};

}  // namespace curvdetail

// Renormalized one-cell-exclusion curvature at every boundary cell of E whose
// center lies in omega.  Outside the frame each edge cell continues to
// infinity, so axis-aligned flat data is extended exactly.  Values are in
// curvature units (h^{-s} times the lattice sum minus the flat-interface
// constant), so straight interfaces read near zero and convex ones negative.
inline ResidualReport euler_lagrange_residual(const GridSet& E, const Rect& omega,
                                              const FracParams& params,
                                              const QuadratureSpec& quad = {}) {
  validate(params);
  validate(quad);
  if (params.n != 2) throw DomainError("lattice residual requires ambient dimension 2");
  const double s = params.s;
  const PointTable& pt = point_table(s);
  const double cflat = curvdetail::flat_interface_constant(s);
  const double hs = std::pow(E.h, -s);

  auto is_set = [&](int i, int j) {
    return i >= 0 && i < E.width && j >= 0 && j < E.height && E.test(i, j);
  };
  std::vector<std::pair<int, int>> bnd;
  for (int j = 0; j < E.height; ++j)
    for (int i = 0; i < E.width; ++i) {
      if (!E.test(i, j)) continue;
      if (!omega.contains(E.cell_center(i, j))) continue;
      if (is_set(i - 1, j) && is_set(i + 1, j) && is_set(i, j - 1) && is_set(i, j + 1))
        continue;
      bnd.push_back({i, j});
    }
  ResidualReport rep;
  if (bnd.empty()) return rep;

  // strip masses repeat along rows and columns; memoize them
  curvdetail::OutsideContinuation cont{&E, s, {}};
  std::vector<double> outside(bnd.size());
  for (std::size_t k = 0; k < bnd.size(); ++k)
    outside[k] = cont.at(bnd[k].first, bnd[k].second);

  std::vector<double> vals(bnd.size());
  parallel_blocks(bnd.size(), [&](std::size_t k) {
    const auto [ci, cj] = bnd[k];
    double acc = 0.0;
    for (int j = 0; j < E.height; ++j)
      for (int i = 0; i < E.width; ++i) {
        if (i == ci && j == cj) continue;
        const double m = pt(i - ci, j - cj);
        acc += E.test(i, j) ? m : -m;
      }
    acc += outside[k];
    vals[k] = hs * (acc - cflat);
  });
  for (std::size_t k = 0; k < bnd.size(); ++k) {
    rep.cells.push_back({bnd[k].first, bnd[k].second, vals[k]});
    rep.max_abs = std::max(rep.max_abs, std::abs(vals[k]));
  }
  return rep;
}

// ===== First variation =====

struct DilationField {};
struct TranslationField {
  Vec2 direction{1.0, 0.0};
};
struct TangentialField {};
using BoundaryField = std::variant<DilationField, TranslationField, TangentialField>;

struct VariationCheck {
  double lhs = 0.0;  // finite-difference derivative of the perimeter
  double rhs = 0.0;  // minus the boundary integral of I_s nu . phi
  double gap = 0.0;
};

// Flow the ball along the field, differentiate the global perimeter, and
// compare with the curvature integral over the boundary.
inline VariationCheck first_variation_check(const AnalyticShape& E,
                                            const BoundaryField& phi, double s,
                                            const std::vector<double>& t_list,
                                            const QuadratureSpec& quad = {}) {
  const Ball* b = std::get_if<Ball>(&E);
  if (!b) throw DomainError("first-variation check supports balls");
  validate(*b);
  if (t_list.empty()) throw DomainError("need at least one step size");
  const double R = b->radius;

  auto perimeter_at = [&](double t) -> double {
    double radius = R;
    if (std::holds_alternative<DilationField>(phi)) radius = R * (1.0 + t);
    if (std::holds_alternative<TangentialField>(phi))
      radius = R * std::sqrt(1.0 + t * t);
    return s_perimeter_ball(radius, s, quad.rel_tol, quad.abs_tol).value;
  };
  std::vector<double> ts = t_list;
  std::sort(ts.begin(), ts.end(), std::greater<double>());
  double lhs = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const double t = ts[k];
    if (!(t > 0.0)) throw DomainError("step sizes must be positive");
    const double fd = (perimeter_at(t) - perimeter_at(-t)) / (2.0 * t);
    if (k == 0) {
      lhs = fd;
    } else {
      const double ratio = ts[k - 1] / t;
      lhs = fd + (fd - prev) / (ratio * ratio - 1.0);  // O(t^2) step
    }
    prev = fd;
  }

  const Vec2 bx = b->center + Vec2{R, 0.0};
  const double curv = fmc_pv(E, bx, FracParams{2, s}, quad).value;
  double rhs = 0.0;
  if (std::holds_alternative<DilationField>(phi)) {
    rhs = -curv * R * (2.0 * kPi * R);  // nu . phi = R on the circle
  } else if (const TranslationField* tr = std::get_if<TranslationField>(&phi)) {
    // nu . e integrates to zero around the circle
    const Vec2 e = tr->direction;
    const QuadResult q = integrate_adaptive(
        [&](double th) { return e.x * std::cos(th) + e.y * std::sin(th); }, 0.0,
        2.0 * kPi, 1e-12, 1e-15);
    rhs = -curv * R * q.value;
  }  // tangential: nu . phi = 0 pointwise
  return {lhs, rhs, std::abs(lhs - rhs)};
}

// ===== Continuity of the curvature in the graph =====

struct ContinuityRow {
  double c1a_dist = 0.0;      // discrete C^{1,alpha} distance on the unit window
  double symdiff_tail = 0.0;  // bound on the contribution outside the window
  double gap = 0.0;
  double bound = 0.0;
};

namespace curvdetail {

// Calibrated once on quadratic-plus-bump families over s in [0.3, 0.7]; the
// worst measured gap/(C^{1,alpha} distance) ratio was 8.1, frozen here with
// 1.5x margin.
inline constexpr double kContinuityFit = 12.0;

}  // namespace curvdetail

// For each table in the sequence: curvature gap against the limit graph vs
// the fitted C^{1,alpha}-continuity bound plus the outer symmetric-difference
// tail.
inline std::vector<ContinuityRow> curvature_continuity_check(
    const std::vector<GraphTable>& u_seq, const GraphTable& u_limit,
    const FracParams& params) {
  validate(u_limit);
  validate(params);
  const double alpha = curvdetail::graph_regularity_exponent(params.s);
  const double base = fmc_graph_local(u_limit, params);
  const double r = u_limit.radius;
  const std::size_t m = u_limit.values.size();
  const double h = 2.0 * r / static_cast<double>(m - 1);

  std::vector<ContinuityRow> rows;
  for (const GraphTable& uk : u_seq) {
    if (uk.values.size() != m || uk.radius != r)
      throw SizeMismatch("graph tables must share the sampling frame");
    ContinuityRow row;
    row.gap = std::abs(fmc_graph_local(uk, params) - base);
    double sup = 0.0, dsup = 0.0, hold = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double y = -r + h * static_cast<double>(i);
      const double diff = std::abs(uk.values[i] - u_limit.values[i]);
      if (std::abs(y) <= 1.0 + 1e-12)
        sup = std::max(sup, diff);
      else
        tail += 2.0 * diff * h;  // kernel bound |y'|^{-(2+s)} <= 1 past the window
      if (i + 1 < m) {
        const double g =
            ((uk.values[i + 1] - u_limit.values[i + 1]) - (uk.values[i] - u_limit.values[i])) / h;
        const double yc = y + 0.5 * h;
        if (std::abs(yc) <= 1.0 + 1e-12) dsup = std::max(dsup, std::abs(g));
      }
      if (i + 2 < m && std::abs(y + h) <= 1.0 + 1e-12) {
        const double g0 = ((uk.values[i + 1] - u_limit.values[i + 1]) -
                           (uk.values[i] - u_limit.values[i])) / h;
        const double g1 = ((uk.values[i + 2] - u_limit.values[i + 2]) -
                           (uk.values[i + 1] - u_limit.values[i + 1])) / h;
        hold = std::max(hold, std::abs(g1 - g0) / std::pow(h, alpha));
      }
    }
    row.c1a_dist = sup + dsup + hold;
    row.symdiff_tail = tail;
    row.bound = curvdetail::kContinuityFit * row.c1a_dist + row.symdiff_tail;
    rows.push_back(row);
  }
  return rows;
}

// Closed trace of the unit disk at a boundary point: every exclusion radius
// has an explicit one-dimensional reduction, which pins the generic quadrature
// path in the tests.
inline double unit_disk_pv_closed(double rho, double s) {
  if (!(rho > 0.0 && rho < 2.0)) throw DomainError("exclusion radius must lie in (0,2)");
  const double w0 = std::asin(0.5 * rho);
  auto f = [&](double w) { return std::pow(2.0 * std::sin(w), -s); };
  const QuadResult q = integrate_adaptive(f, w0, 0.5 * kPi, 1e-12, 1e-300);
  return -(4.0 / s) * (w0 * std::pow(rho, -s) + q.value);
}

}  // namespace nlperim
