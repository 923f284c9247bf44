#pragma once

#include <tuple>

#include "nlperim/kernel.hpp"

namespace nlperim {

// ===== Result types =====

struct SPerimeterBreakdown {
  double local = 0.0;     // both points inside the window
  double nonlocal = 0.0;  // cross terms with the window's exterior
  double total = 0.0;
  double error = 0.0;
};

struct AsymptoticRow {
  double s = 0.0;
  double scaled_value = 0.0;  // (1-s) * measured energy
  double target = 0.0;        // limit constant * classical perimeter
  double error = 0.0;
};

struct AsymptoticTable {
  int n = 2;
  std::vector<AsymptoticRow> rows;
};

enum class ScanMode { total_perimeter, local_part };

inline std::vector<double> default_scan_grid(int n) {
  // the two near-1 values are cheap only with the 1D closed forms
  if (n == 1) return {0.5, 0.7, 0.9, 0.95, 0.99, 0.999};
  return {0.5, 0.7, 0.9, 0.95};
}

// ===== Classical perimeter =====

inline double classical_perimeter(const IntervalSet& e) {
  return 2.0 * static_cast<double>(e.intervals.size());
}

// Cell-interface (staircase) length; frame edges count against the empty
// exterior.  This is the perimeter of the pixel set itself, not an estimate of
// a smooth source shape.
inline double classical_perimeter(const GridSet& g) {
  long edges = 0;
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i) {
      if (!g.test(i, j)) continue;
      if (i == 0 || !g.test(i - 1, j)) ++edges;
      if (i == g.width - 1 || !g.test(i + 1, j)) ++edges;
      if (j == 0 || !g.test(i, j - 1)) ++edges;
      if (j == g.height - 1 || !g.test(i, j + 1)) ++edges;
    }
  return static_cast<double>(edges) * g.h;
}

// Same, but keeping only interface edges whose midpoint lies in the window.
inline double classical_perimeter(const GridSet& g, const Rect& window) {
  long edges = 0;
  auto mid_in = [&](double x, double y) { return window.contains({x, y}); };
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i) {
      if (!g.test(i, j)) continue;
      const double x0 = g.origin.x + i * g.h, y0 = g.origin.y + j * g.h;
      const double xc = x0 + 0.5 * g.h, yc = y0 + 0.5 * g.h;
      if ((i == 0 || !g.test(i - 1, j)) && mid_in(x0, yc)) ++edges;
      if ((i == g.width - 1 || !g.test(i + 1, j)) && mid_in(x0 + g.h, yc)) ++edges;
      if ((j == 0 || !g.test(i, j - 1)) && mid_in(xc, y0)) ++edges;
      if ((j == g.height - 1 || !g.test(i, j + 1)) && mid_in(xc, y0 + g.h)) ++edges;
    }
  return static_cast<double>(edges) * g.h;
}

inline double classical_perimeter(const Ball& b) {
  validate(b);
  return 2.0 * kPi * b.radius;
}

inline double classical_perimeter(const Polygon& p) {
  validate(p);
  std::vector<double> lens;
  const std::size_t m = p.vertices.size();
  for (std::size_t i = 0; i < m; ++i)
    lens.push_back(norm(p.vertices[(i + 1) % m] - p.vertices[i]));
  return pairwise_sum(lens);
}

inline double classical_perimeter(const Subgraph& g) {
  validate(g);
  auto du = [&](double t) {
    double acc = 0.0;
    for (std::size_t k = g.coeff.size(); k-- > 1;)
      acc = acc * t + static_cast<double>(k) * g.coeff[k];
    return acc;
  };
  const double arc =
      integrate_adaptive([&](double t) { return std::hypot(1.0, du(t)); },
                         -g.radius, g.radius, 1e-12, 1e-15)
          .value;
  const double ul = poly_eval(g.coeff, -g.radius), ur = poly_eval(g.coeff, g.radius);
  return arc + 2.0 * g.radius + (ul + g.radius) + (ur + g.radius);
}

inline double classical_perimeter(const KochApproximation& k) {
  return 3.0 * std::pow(4.0, k.generation) * k.side / std::pow(3.0, k.generation);
}

// Boundary length of a half-space inside a ball window: the chord.
inline double classical_perimeter(const HalfSpace& h, const Ball& window) {
  validate(h);
  validate(window);
  const double nn = norm(h.normal);
  const double d = std::abs(h.offset - dot(window.center, h.normal)) / nn;
  if (d >= window.radius) return 0.0;
  return 2.0 * std::sqrt(window.radius * window.radius - d * d);
}

inline double classical_perimeter(const AnalyticShape& e) {
  return std::visit(
      [&](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, HalfSpace>)
          throw DomainError("half-space boundary length needs a bounded window");
        else
          return classical_perimeter(v);
      },
      e);
}

// ===== Global 1D fractional perimeter (exact) =====

// P_s(E) = L_s(E, complement): two half-line tails plus the finitely many gaps.
inline double s_perimeter_global_1d(const IntervalSet& e, double s) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (e.intervals.empty()) return 0.0;
  const double lo = e.intervals.front().left;
  const double hi = e.intervals.back().right;
  std::vector<double> terms;
  terms.push_back(interval_left_tail(e, lo, s));
  terms.push_back(interval_right_tail(e, hi, s));
  IntervalSet gaps;
  for (std::size_t i = 0; i + 1 < e.intervals.size(); ++i)
    gaps.intervals.push_back({e.intervals[i].right, e.intervals[i + 1].left});
  if (!gaps.intervals.empty()) terms.push_back(interval_interaction(e, gaps, s));
  return pairwise_sum(terms);
}

// 1D breakdown against a bounded interval window; every piece is closed form.
inline SPerimeterBreakdown s_perimeter(const IntervalSet& e, const Interval& omega,
                                       double s) {
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  if (!(omega.left < omega.right)) throw OrderingError("empty window interval");
  IntervalSet ein, eout;
  for (const auto& iv : e.intervals) {
    const double l = std::max(iv.left, omega.left);
    const double r = std::min(iv.right, omega.right);
    if (l < r) ein.intervals.push_back({l, r});
    if (iv.left < omega.left)
      eout.intervals.push_back({iv.left, std::min(iv.right, omega.left)});
    if (iv.right > omega.right)
      eout.intervals.push_back({std::max(iv.left, omega.right), iv.right});
  }
  const IntervalSet cin = complement_within(e, omega.left, omega.right);
  SPerimeterBreakdown out;
  if (!ein.intervals.empty() && !cin.intervals.empty())
    out.local = interval_interaction(ein, cin, s);
  double nl = 0.0;
  if (!ein.intervals.empty()) {
    nl += interval_left_tail(ein, omega.left, s);
    nl += interval_right_tail(ein, omega.right, s);
    if (!eout.intervals.empty()) nl -= interval_interaction(ein, eout, s);
  }
  if (!eout.intervals.empty() && !cin.intervals.empty())
    nl += interval_interaction(eout, cin, s);
  out.nonlocal = nl;
  out.total = out.local + out.nonlocal;
  out.error = 1e-12 * std::abs(out.total) + 1e-15;
  return out;
}

// ===== Radial reductions for disks =====

namespace detail {

// L_s(B_r(0), complement of B_R(0)) for r <= R, via the polar slice
// 2 pi int_0^r rho K(rho) drho; the r == R endpoint carries a (R-rho)^{-s}
// blow-up that gets peeled off by substitution.
inline QuadResult disk_to_ball_complement(double r, double R, double s, double rel,
                                          double abs_tol) {
  QuadResult out;
  if (r < R * (1.0 - 1e-14)) {
    out = integrate_adaptive(
        [&](double rho) {
          return 2.0 * kPi * rho * point_to_ball_complement(rho, R, s);
        },
        0.0, r, rel, abs_tol);
  } else {
    out = integrate_power_singular(
        [&](double t) {
          if (!(t > 0.0) || t >= R) return 0.0;
          return std::pow(t, s) * 2.0 * kPi * (R - t) *
                 detail::ball_complement_kernel(t, R, s);
        },
        s, R, rel, abs_tol);
  }
  out.error += 1e-10 * std::abs(out.value);
  return out;
}

// Same interaction for a disk not centered in the window ball: polar around the
// window center, weighting each radius by the arc it cuts out of the disk.
inline QuadResult offcenter_disk_to_ball_complement(const Ball& e, const Ball& om,
                                                    double s, double rel,
                                                    double abs_tol) {
  const double d = norm(e.center - om.center);
  if (d <= 1e-12 * om.radius)
    return disk_to_ball_complement(e.radius, om.radius, s, rel, abs_tol);
  if (e.radius + d >= om.radius * (1.0 - 1e-12))
    throw DomainError("inner ball must keep a positive distance to the window boundary");
  auto arc = [&](double rho) {
    const double ca = (rho * rho + d * d - e.radius * e.radius) / (2.0 * rho * d);
    if (ca >= 1.0) return 0.0;
    if (ca <= -1.0) return 2.0 * kPi;
    return 2.0 * std::acos(ca);
  };
  QuadResult out = integrate_adaptive(
      [&](double rho) {
        return rho * arc(rho) * point_to_ball_complement(rho, om.radius, s);
      },
      std::max(0.0, d - e.radius), d + e.radius, rel, abs_tol);
  out.error += 1e-10 * std::abs(out.value);
  return out;
}

}  // namespace detail

// P_s(B_r) of a disk, all of it nonlocal mass against the complement.
inline QuadResult s_perimeter_ball(double radius, double s, double rel = 1e-9,
                                   double abs_tol = 1e-12) {
  if (!(radius > 0.0)) throw DomainError("ball radius must be positive");
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  return detail::disk_to_ball_complement(radius, radius, s, rel, abs_tol);
}

// ===== Half-space against a ball window =====

namespace detail {

// L_s(B_R ∩ {y < y0}, {y > y0}) for |y0| < R: slices at depth t below the line
// see the half-plane factor times t^{-s}.
inline QuadResult cap_to_halfplane(double R, double y0, double s, double rel,
                                   double abs_tol) {
  const double fac = halfplane_kernel_factor(s);
  const double b = y0 + R;
  if (!(b > 0.0)) return {};
  auto f = [&](double t) {
    const double y = y0 - t;
    const double c2 = R * R - y * y;
    if (c2 <= 0.0) return 0.0;
    return fac * 2.0 * std::sqrt(c2);
  };
  return integrate_power_singular(f, s, b, rel, abs_tol);
}

// L_s between the two caps of B_R split by {y = y0}: the x-correlation of the
// two chords closes in terms of the kernel column integral, leaving a 2D
// iterated quadrature in the two depths.
inline QuadResult cap_cap_interaction(double R, double y0, double s, double rel,
                                      double abs_tol) {
  const double p = 2.0 + s;
  const double below = y0 + R, above = R - y0;
  if (!(below > 0.0) || !(above > 0.0)) return {};
  auto halfchord = [&](double y) {
    const double c2 = R * R - y * y;
    return c2 > 0.0 ? std::sqrt(c2) : 0.0;
  };
  auto inner = [&](double t2) {
    const double c2 = halfchord(y0 + t2);
    if (c2 <= 0.0) return 0.0;
    auto g = [&](double t1) {
      const double c1 = halfchord(y0 - t1);
      if (c1 <= 0.0) return 0.0;
      const auto pieces = corr_pieces(-c1, c1, -c2, c2);
      return inner_eval(t1 + t2, pieces, p);
    };
    return integrate_adaptive(g, 0.0, below, rel, abs_tol).value;
  };
  auto f = [&](double t2) { return std::pow(t2, s) * inner(t2); };
  QuadResult out = integrate_power_singular(f, s, above, rel, abs_tol);
  out.error += 1e-8 * std::abs(out.value);  // inner quadrature slop
  return out;
}

}  // namespace detail

inline SPerimeterBreakdown s_perimeter(const HalfSpace& e, const Ball& om,
                                       const FracParams& par,
                                       const QuadratureSpec& spec = {}) {
  validate(par);
  if (par.n != 2) throw DomainError("half-space windows are 2D here");
  validate(e);
  validate(om);
  const double s = par.s, R = om.radius;
  const double nn = norm(e.normal);
  const double t0 = (e.offset - dot(om.center, e.normal)) / nn;  // >0: center in E
  SPerimeterBreakdown out;
  if (std::abs(t0) >= R) {
    // the boundary line misses the window; one cross term survives
    const double gap = std::abs(t0);
    const double fac = halfplane_kernel_factor(s);
    QuadResult q = integrate_adaptive(
        [&](double w) {
          const double c2 = R * R - w * w;
          if (c2 <= 0.0) return 0.0;
          return fac * 2.0 * std::sqrt(c2) * std::pow(gap - w, -s);
        },
        -R, R, spec.rel_tol, spec.abs_tol);
    out.nonlocal = q.value;
    out.error = q.error + 1e-10 * std::abs(q.value);
  } else {
    const QuadResult f1 = detail::cap_to_halfplane(R, t0, s, spec.rel_tol, spec.abs_tol);
    const QuadResult f2 = detail::cap_to_halfplane(R, -t0, s, spec.rel_tol, spec.abs_tol);
    const QuadResult a1 = detail::cap_cap_interaction(R, t0, s, spec.rel_tol, spec.abs_tol);
    out.local = a1.value;
    out.nonlocal = (f1.value - a1.value) + (f2.value - a1.value);
    out.error = f1.error + f2.error + 3.0 * a1.error +
                1e-10 * (std::abs(f1.value) + std::abs(f2.value));
    if (out.nonlocal < 0.0 && out.nonlocal > -10.0 * out.error) out.nonlocal = 0.0;
  }
  out.total = out.local + out.nonlocal;
  return out;
}

// ===== Ball in ball window =====

inline SPerimeterBreakdown s_perimeter(const Ball& e, const Ball& om,
                                       const FracParams& par,
                                       const QuadratureSpec& spec = {}) {
  validate(par);
  if (par.n != 2) throw DomainError("ball windows are 2D");
  validate(e);
  validate(om);
  const double s = par.s;
  const double d = norm(e.center - om.center);
  SPerimeterBreakdown out;
  if (d + om.radius <= e.radius * (1.0 + 1e-14)) {
    // window swallowed by the set: its boundary is never seen locally
    QuadResult nl =
        detail::offcenter_disk_to_ball_complement(om, e, s, spec.rel_tol, spec.abs_tol);
    out.nonlocal = nl.value;
    out.error = nl.error;
  } else if (d + e.radius < om.radius) {
    // contained set: the full perimeter is visible, position-independent
    QuadResult tot = s_perimeter_ball(e.radius, s, spec.rel_tol, spec.abs_tol);
    QuadResult nl =
        detail::offcenter_disk_to_ball_complement(e, om, s, spec.rel_tol, spec.abs_tol);
    out.nonlocal = nl.value;
    out.local = tot.value - nl.value;
    out.error = tot.error + 2.0 * nl.error;
    if (out.local < 0.0 && out.local > -10.0 * out.error) out.local = 0.0;
  } else {
    throw DomainError("ball must lie strictly inside or fully contain the window");
  }
  out.total = out.local + out.nonlocal;
  return out;
}

// ===== Pixel sets: exterior closure of a rectangular frame =====

namespace detail {

// int_K^inf (x^2 + a^2)^(-q/2) dx
inline double power_tail_integral(double a, double K, double q) {
  a = std::abs(a);
  if (a == 0.0) return std::pow(K, 1.0 - q) / (q - 1.0);
  return std::pow(a, 1.0 - q) * g_tail(K / a, q);
}

// Sum_{k >= K} of the far-field cell value at offsets (di, k), Euler-Maclaurin
// closed; val gets the sum, err the midpoint-model and truncation budget.
inline void column_tail(int di, int K, double p, double far_coeff, double& val,
                        double& err) {
  const double a2 = static_cast<double>(di) * di;
  const double x = K;
  const double u = x * x + a2;
  auto up = [&](double q) { return std::pow(u, -0.5 * q); };
  const double f = up(p);
  const double fp = -p * x * up(p + 2.0);
  const double fppp =
      3.0 * p * (p + 2.0) * x * up(p + 4.0) - p * (p + 2.0) * (p + 4.0) * x * x * x * up(p + 6.0);
  val = power_tail_integral(di, K, p) + 0.5 * f - fp / 12.0 + fppp / 720.0;
  const double c = p * p / 12.0;  // curvature correction of the midpoint rule
  const double g = up(p + 2.0);
  const double gp = -(p + 2.0) * x * up(p + 4.0);
  val += c * (power_tail_integral(di, K, p + 2.0) + 0.5 * g - gp / 12.0);
  err = std::abs(fppp) / 720.0 + c * std::abs(gp) / 12.0 +
        far_coeff * (power_tail_integral(di, K, p + 4.0) + 0.5 * up(p + 4.0));
}

// Exterior interaction of every cell of a W x H frame with the complement of
// the frame rectangle, in lattice units.  The complement splits into two
// half-planes (closed form per column) and two half-infinite strips (offset
// table columns summed with the Euler-Maclaurin tail).
struct FrameClosure {
  int width = 0, height = 0;
  std::vector<double> value;  // per cell, multiply by h^(2-s)
  std::vector<double> error;
};

inline FrameClosure build_frame_closure(int W, int H, double s) {
  const auto& tbl = offset_table(s);
  const double p = 2.0 + s;
  FrameClosure fc;
  fc.width = W;
  fc.height = H;
  fc.value.assign(static_cast<std::size_t>(W) * H, 0.0);
  fc.error.assign(static_cast<std::size_t>(W) * H, 0.0);

  // U(di, dj) = interaction of the unit cell [0,1]^2 with the half-infinite
  // column [di, di+1] x [dj, inf), dj >= 1.
  const int nd = 2 * W - 1;
  const int em_start = std::max(2 * tbl.radius + 1, 17);
  std::vector<double> u_row(nd), e_row(nd), psu(nd + 1), pse(nd + 1);
  // v_strip[dj-1][i]: interaction of a cell in column i with the full-width
  // strip dj rows above it (plus prefix machinery below)
  std::vector<std::vector<double>> v_strip(H), v_err(H);
  for (int dj = 1; dj <= H; ++dj) {
    const int K = std::max(dj, em_start);
    for (int t = 0; t < nd; ++t) {
      const int di = t - (W - 1);
      double v = 0.0, e = 0.0;
      for (int k = dj; k < K; ++k) {
        v += tbl(di, k);
        e += tbl.far_error(di, k);
      }
      double tv, te;
      column_tail(di, K, p, tbl.far_coeff, tv, te);
      u_row[t] = v + tv;
      e_row[t] = e + te;
    }
    psu[0] = 0.0;
    pse[0] = 0.0;
    for (int t = 0; t < nd; ++t) {
      psu[t + 1] = psu[t] + u_row[t];
      pse[t + 1] = pse[t] + e_row[t];
    }
    v_strip[dj - 1].resize(W);
    v_err[dj - 1].resize(W);
    for (int i = 0; i < W; ++i) {
      // columns m = 0..W-1 at offsets m - i, i.e. table slots (W-1-i)..(2W-2-i)
      v_strip[dj - 1][i] = psu[2 * W - 1 - i] - psu[W - 1 - i];
      v_err[dj - 1][i] = pse[2 * W - 1 - i] - pse[W - 1 - i];
    }
  }
  std::vector<double> side(W);
  for (int i = 0; i < W; ++i) {
    const Rect cell{static_cast<double>(i), 0.0, static_cast<double>(i + 1), 1.0};
    side[i] = rect_to_halfplane(cell, 0, false, 0.0, s) +
              rect_to_halfplane(cell, 0, true, static_cast<double>(W), s);
  }
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      const std::size_t c = static_cast<std::size_t>(j) * W + i;
      fc.value[c] = side[i] + v_strip[H - j - 1][i] + v_strip[j][i];
      fc.error[c] = v_err[H - j - 1][i] + v_err[j][i] + 1e-13 * side[i];
    }
  return fc;
}

inline const FrameClosure& frame_closure(int W, int H, double s) {
  static std::map<std::tuple<int, int, double>, std::unique_ptr<FrameClosure>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(W, H, s);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto fc = std::make_unique<FrameClosure>(build_frame_closure(W, H, s));
  auto& ref = *fc;
  cache.emplace(key, std::move(fc));
  return ref;
}

template <class Pred>
inline GridSet masked(const GridSet& g, Pred keep) {
  GridSet out = g;
  for (int j = 0; j < g.height; ++j)
    for (int i = 0; i < g.width; ++i)
      out.occupancy[out.index(i, j)] =
          (g.test(i, j) && keep(i, j)) ? std::uint8_t{1} : std::uint8_t{0};
  return out;
}

inline void lattice_window(const GridSet& g, const Rect& w, int& i0, int& i1,
                           int& j0, int& j1) {
  auto snap = [&](double x, double o) {
    const double t = (x - o) / g.h;
    const double r = std::nearbyint(t);
    if (std::abs(t - r) > 1e-6 * std::max(1.0, std::abs(t)))
      throw DomainError("window must align with the pixel lattice");
    return static_cast<int>(r);
  };
  i0 = snap(w.xmin, g.origin.x);
  i1 = snap(w.xmax, g.origin.x);
  j0 = snap(w.ymin, g.origin.y);
  j1 = snap(w.ymax, g.origin.y);
  if (!(0 <= i0 && i0 < i1 && i1 <= g.width && 0 <= j0 && j0 < j1 && j1 <= g.height))
    throw DomainError("window must be a nonempty sub-rectangle of the frame");
}

}  // namespace detail

// Pixel-set breakdown against a lattice-aligned rectangular window inside the
// frame.  Interactions with the plane beyond the frame close analytically.
inline SPerimeterBreakdown s_perimeter(const GridSet& e, const Rect& omega,
                                       const FracParams& par,
                                       const QuadratureSpec& spec = {}) {
  validate(par);
  if (par.n != 2) throw DomainError("pixel sets are 2D");
  if (e.width <= 0 || e.height <= 0 || !(e.h > 0.0))
    throw DegenerateSet("empty pixel frame");
  int i0, i1, j0, j1;
  detail::lattice_window(e, omega, i0, i1, j0, j1);
  auto in_window = [&](int i, int j) {
    return i >= i0 && i < i1 && j >= j0 && j < j1;
  };
  const GridSet comp = complement(e);
  const GridSet a_in = detail::masked(e, in_window);
  const GridSet a_out = detail::masked(e, [&](int i, int j) { return !in_window(i, j); });
  const GridSet c_in = detail::masked(comp, in_window);
  const GridSet c_out = detail::masked(comp, [&](int i, int j) { return !in_window(i, j); });

  SPerimeterBreakdown out;
  auto add = [&](const GridSet& x, const GridSet& y, double& slot) {
    if (x.count_set() == 0 || y.count_set() == 0) return;
    const QuadResult q = grid_interaction(x, y, par, spec);
    slot += q.value;
    out.error += q.error;
  };
  add(a_in, c_in, out.local);
  add(a_in, c_out, out.nonlocal);
  add(a_out, c_in, out.nonlocal);
  if (a_in.count_set() > 0) {
    const auto& fc = detail::frame_closure(e.width, e.height, par.s);
    const double scale = std::pow(e.h, 2.0 - par.s);
    std::vector<double> vals, errs;
    for (int j = 0; j < e.height; ++j)
      for (int i = 0; i < e.width; ++i)
        if (a_in.test(i, j)) {
          const std::size_t c = static_cast<std::size_t>(j) * e.width + i;
          vals.push_back(fc.value[c]);
          errs.push_back(fc.error[c]);
        }
    out.nonlocal += scale * pairwise_sum(vals);
    out.error += scale * pairwise_sum(errs);
  }
  out.total = out.local + out.nonlocal;
  return out;
}

inline SPerimeterBreakdown s_perimeter(const GridSet& e, const FracParams& par,
                                       const QuadratureSpec& spec = {}) {
  return s_perimeter(e, e.frame(), par, spec);
}

// ===== Shape dispatch =====

inline SPerimeterBreakdown s_perimeter(const AnalyticShape& e, const AnalyticShape& om,
                                       const FracParams& par,
                                       const QuadratureSpec& spec = {}) {
  if (const auto* ob = std::get_if<Ball>(&om)) {
    if (const auto* eb = std::get_if<Ball>(&e)) return s_perimeter(*eb, *ob, par, spec);
    if (const auto* eh = std::get_if<HalfSpace>(&e))
      return s_perimeter(*eh, *ob, par, spec);
    throw DomainError("ball windows support ball and half-space sets");
  }
  const auto* op = std::get_if<Polygon>(&om);
  Rect w;
  if (!op || !detail::axis_aligned_rect(*op, w))
    throw DomainError("window must be a ball or an axis-aligned rectangle");
  if (std::holds_alternative<HalfSpace>(e))
    throw DomainError("half-space sets need a ball window");
  const Rect bb = bounding_box(e);
  if (!(bb.xmin >= w.xmin && bb.xmax <= w.xmax && bb.ymin >= w.ymin && bb.ymax <= w.ymax))
    throw DomainError("set must be contained in the rectangular window");
  const double h = std::max(w.width(), w.height()) / 192.0;
  const GridSet g = rasterize(e, w, h, 1u << 26);
  SPerimeterBreakdown out = s_perimeter(g, par, spec);
  // staircase resolution error, proportional to the boundary mass at scale h
  const double stair = classical_perimeter(g);
  const double rel_geom = 0.5 * h * stair / std::max(g.measure(), h * h);
  out.error += rel_geom * out.total;
  return out;
}

// ===== Asymptotic scans =====

namespace detail {

inline void check_scan_grid(const std::vector<double>& s_list) {
  if (s_list.empty()) throw DomainError("empty s grid");
  for (std::size_t i = 0; i < s_list.size(); ++i) {
    if (!(s_list[i] > 0.0 && s_list[i] < 1.0))
      throw DomainError("scan values must lie in (0,1)");
    if (i > 0 && !(s_list[i] > s_list[i - 1]))
      throw DomainError("scan values must increase strictly");
  }
}

}  // namespace detail

// 1D global scan: rows are exact, target 2 * (#intervals) since the jump set
// of an interval union carries one unit of mass per endpoint.
inline AsymptoticTable asymptotic_scan(const IntervalSet& e,
                                       std::vector<double> s_list = {}) {
  if (s_list.empty()) s_list = default_scan_grid(1);
  detail::check_scan_grid(s_list);
  AsymptoticTable tab;
  tab.n = 1;
  const double target = classical_perimeter(e);  // omega_0 = 1
  for (double s : s_list) {
    const double v = s_perimeter_global_1d(e, s);
    tab.rows.push_back({s, (1.0 - s) * v, target, 1e-12 * std::abs(v)});
  }
  return tab;
}

inline AsymptoticTable asymptotic_scan(const Ball& e, const Ball& om,
                                       std::vector<double> s_list = {},
                                       ScanMode mode = ScanMode::total_perimeter,
                                       const QuadratureSpec& spec = {}) {
  if (s_list.empty()) s_list = default_scan_grid(2);
  detail::check_scan_grid(s_list);
  AsymptoticTable tab;
  tab.n = 2;
  const double target = 2.0 * classical_perimeter(e);  // omega_1 = 2
  for (double s : s_list) {
    const SPerimeterBreakdown bd = s_perimeter(e, om, FracParams{2, s}, spec);
    const double v = mode == ScanMode::total_perimeter ? bd.total : bd.local;
    tab.rows.push_back({s, (1.0 - s) * v, target, (1.0 - s) * bd.error});
  }
  return tab;
}

// Pixel-set scan; the caller supplies the classical perimeter of the source
// shape, since the staircase length of the raster does not converge to it.
inline AsymptoticTable asymptotic_scan(const GridSet& e, const Rect& omega,
                                       double classical_target,
                                       std::vector<double> s_list = {},
                                       ScanMode mode = ScanMode::local_part,
                                       const FracParams& base = {2, 0.5},
                                       const QuadratureSpec& spec = {}) {
  if (s_list.empty()) s_list = default_scan_grid(2);
  detail::check_scan_grid(s_list);
  AsymptoticTable tab;
  tab.n = 2;
  const double target = 2.0 * classical_target;
  for (double s : s_list) {
    FracParams par = base;
    par.s = s;
    const SPerimeterBreakdown bd = s_perimeter(e, omega, par, spec);
    const double v = mode == ScanMode::total_perimeter ? bd.total : bd.local;
    tab.rows.push_back({s, (1.0 - s) * v, target, (1.0 - s) * bd.error});
  }
  return tab;
}

// ===== Band bound for the nonlocal part =====

// Upper bound 2 P_s^L(E, band) + 4 n omega_n / s |Omega| rho^{-s}, with the
// band the tubular rho-neighborhood of the window boundary.
inline double nonlocal_band_bound(const HalfSpace& e, const Ball& om, double rho,
                                  const FracParams& par,
                                  const QuadratureSpec& spec = {}) {
  validate(par);
  if (par.n != 2) throw DomainError("band bounds are 2D here");
  validate(e);
  validate(om);
  if (!(rho > 0.0) || rho >= om.radius)
    throw DegenerateSet("band width must lie in (0, window radius)");
  const double R = om.radius;
  const double h = rho / 8.0;
  const double half = R + rho;
  const Rect box{om.center.x - half, om.center.y - half, om.center.x + half,
                 om.center.y + half};
  const int side = detail::cell_count(2.0 * half, h);
  GridSet band_e{side, side, {box.xmin, box.ymin}, h,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side, 0)};
  GridSet band_c = band_e;
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i) {
      const Vec2 pc = band_e.cell_center(i, j);
      const double dr = std::abs(norm(pc - om.center) - R);
      if (dr >= rho) continue;
      if (contains(e, pc))
        band_e.set(i, j, true);
      else
        band_c.set(i, j, true);
    }
  if (band_e.count_set() == 0 || band_c.count_set() == 0)
    throw DegenerateSet("band misses one side of the set boundary");
  const double band = grid_interaction(band_e, band_c, par, spec).value;
  const double tail =
      4.0 * par.n * omega(par.n) / par.s * (kPi * R * R) * std::pow(rho, -par.s);
  return 2.0 * band + tail;
}

}  // namespace nlperim
