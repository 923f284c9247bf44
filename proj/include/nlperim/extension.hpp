#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include <fftw3.h>

#include "nlperim/errors.hpp"
#include "nlperim/geometry.hpp"
#include "nlperim/kernel.hpp"
#include "nlperim/numerics.hpp"

namespace nlperim {

// Harmonic-type lift of a boundary trace to the weighted upper half-space,
// realized by Poisson-kernel convolution, plus the monotonicity functional
// Phi(r) built from its weighted Dirichlet energy.

// ===== Trace data =====

// Uniform samples on a line (n = 1) or plane (n = 2) window, continued
// analytically outside it: either by a single constant, or by two constants
// jumping across an axis-aligned half-space boundary (the sign-like traces).
struct TraceWindow {
  int n = 1;
  int nx = 0, ny = 1;                   // ny stays 1 on a line
  Vec2 origin;                          // coordinate of sample (0,0)
  double h = 1.0;
  std::vector<double> values;           // row-major, ny rows of nx
  std::optional<HalfSpace> tail_split;  // far-field jump locus, if any
  double tail_in = 0.0;                 // far value on the half-space side
  double tail_out = 0.0;                // far value on the other side

  double base(Vec2 p) const {
    if (!tail_split) return tail_in;
    return signed_distance(*tail_split, p) <= 0.0 ? tail_in : tail_out;
  }
  Vec2 point(int i, int j) const { return {origin.x + i * h, origin.y + j * h}; }
};

inline bool axis_aligned(const HalfSpace& hs) {
  return (std::abs(std::abs(hs.normal.x) - 1.0) < 1e-12 && std::abs(hs.normal.y) < 1e-12) ||
         (std::abs(std::abs(hs.normal.y) - 1.0) < 1e-12 && std::abs(hs.normal.x) < 1e-12);
}

inline void validate(const TraceWindow& u) {
  if (u.n != 1 && u.n != 2) throw DomainError("trace dimension must be 1 or 2");
  if (u.n == 1 && u.ny != 1) throw DomainError("line traces have a single row");
  if (u.nx < 4 || u.ny < 1) throw DomainError("trace window too small");
  if (!(u.h > 0.0)) throw DomainError("trace step must be positive");
  if (u.values.size() != static_cast<std::size_t>(u.nx) * u.ny)
    throw SizeMismatch("trace sample count does not match the window");
  for (double v : u.values)
    if (!std::isfinite(v)) throw UnboundedTrace("trace samples must be finite");
  if (!std::isfinite(u.tail_in) || !std::isfinite(u.tail_out))
    throw UnboundedTrace("trace tail values must be finite");
  if (u.tail_split) {
    validate(*u.tail_split);
    if (!axis_aligned(*u.tail_split))
      throw DomainError("trace tail split must be axis-aligned");
    if (u.n == 1 && std::abs(u.tail_split->normal.y) > 0.5)
      throw DomainError("line trace cannot split along y");
  } else if (u.tail_in != u.tail_out) {
    throw DomainError("constant tail requires equal tail values");
  }
}

inline double sup_abs_trace(const TraceWindow& u) {
  double m = std::max(std::abs(u.tail_in), std::abs(u.tail_out));
  for (double v : u.values) m = std::max(m, std::abs(v));
  return m;
}

// ===== Extension field =====

struct ExtensionField {
  int n = 1;
  int nx = 0, ny = 1;
  Vec2 origin;
  double h = 1.0;
  double a = 0.5;                // weight exponent 1 - s
  std::vector<double> z;         // strictly increasing positive levels
  std::vector<double> values;    // level-major, each level ny rows of nx

  std::size_t idx(int i, int j, int lev) const {
    return (static_cast<std::size_t>(lev) * ny + j) * nx + i;
  }
  double at(int i, int j, int lev) const { return values[idx(i, j, lev)]; }
};

inline void validate(const ExtensionField& f) {
  if (!(f.a > 0.0 && f.a < 1.0)) throw DomainError("weight exponent must be in (0,1)");
  if (f.z.empty()) throw DomainError("extension needs at least one level");
  double prev = 0.0;
  for (double zl : f.z) {
    if (!(zl > prev)) throw DomainError("levels must be positive and strictly increasing");
    prev = zl;
  }
  if (f.values.size() != f.z.size() * static_cast<std::size_t>(f.nx) * f.ny)
    throw SizeMismatch("field storage does not match grid and levels");
}

// Geometric ladder hugging the boundary where the weighted energy concentrates.
inline std::vector<double> extension_levels(double h, double z_cap) {
  if (!(h > 0.0 && z_cap > 0.0)) throw DomainError("level ladder needs positive h and cap");
  std::vector<double> z;
  double v = 0.25 * h;
  while (v < z_cap * (1.0 - 1e-12)) {
    z.push_back(v);
    v *= 1.25;
  }
  z.push_back(z_cap);
  return z;
}

struct PhiRow {
  double r = 0.0;
  double phi = 0.0;
};

struct MonotonicityTrace {
  std::vector<PhiRow> rows;
};

inline void validate(const MonotonicityTrace& t) {
  for (std::size_t i = 1; i < t.rows.size(); ++i)
    if (!(t.rows[i].r > t.rows[i - 1].r))
      throw OrderingError("phi trace radii must increase");
}

namespace extdetail {

// Poisson kernel without its normalization constant; the discrete mass is
// normalized per level anyway, which is what keeps the maximum principle
// exact on the grid.
inline double raw_kernel(double r2, double z, double s, int n) {
  return std::pow(z, s) * std::pow(r2 + z * z, -0.5 * (n + s));
}

// One z-level of the discrete kernel: normalized window-convolution weights
// plus the normalized column masses along one axis (for the analytic-tail
// split).  Everything sums to exactly 1 including the two closed-form side
// remainders, so the extension is a true convex average of trace values.
struct LevelKernel {
  std::vector<double> conv;  // (2nx-1) x (2ny-1), offset-indexed
  std::vector<double> cum_ge;  // cum_ge[k + K] = mass of columns >= k
  int K = 0;                   // column index range [-K, K]
  double scale = 1.0;          // 1 / raw total
};

inline LevelKernel build_level_kernel(const TraceWindow& u, double z, double s,
                                      int split_axis) {
  LevelKernel out;
  const double h = u.h;
  const int pad = static_cast<int>(std::ceil(8.0 * z / h)) + 32;
  const int nS = split_axis == 0 ? u.nx : u.ny;   // samples along the split
  const int nC = split_axis == 0 ? u.ny : u.nx;   // samples across it
  const int K = nS + pad, Kc = nC + pad;
  out.K = K;

  // column masses along the split axis, cross direction closed beyond Kc
  std::vector<double> col(2 * K + 1, 0.0);
  const double p1 = 1.0 + s, pn = u.n + s;
  for (int k = -K; k <= K; ++k) {
    const double t = k * h;
    double m;
    if (u.n == 1) {
      m = raw_kernel(t * t, z, s, 1) * h;
    } else {
      double acc = 0.0;
      for (int i = -Kc; i <= Kc; ++i) acc += raw_kernel(t * t + (i * h) * (i * h), z, s, 2);
      const double b = std::hypot(t, z);
      m = acc * h * h +
          2.0 * h * std::pow(z, s) * std::pow(b, -p1) *
              detail::g_range((Kc + 0.5) * h / b, kInf, 2.0 + s);
    }
    col[k + K] = m;
  }
  // side remainders from the exact marginal (same kernel family, n = 1)
  const double marg = u.n == 2 ? detail::g_range(-kInf, kInf, pn) : 1.0;
  const double rem = marg * detail::g_range((K + 0.5) * h / z, kInf, p1);

  double total = 2.0 * rem;
  for (double m : col) total += m;
  out.scale = 1.0 / total;

  out.cum_ge.assign(2 * K + 2, 0.0);
  double acc = rem;
  for (int k = K; k >= -K; --k) {
    out.cum_ge[k + K] = acc += col[k + K];
  }
  for (auto& c : out.cum_ge) c *= out.scale;
  // index 2K+1 stays 0: nothing above the top column beyond the remainder
  out.cum_ge[2 * K + 1] = rem * out.scale;

  out.conv.assign(static_cast<std::size_t>(2 * u.nx - 1) * (2 * u.ny - 1), 0.0);
  for (int dj = -(u.ny - 1); dj <= u.ny - 1; ++dj)
    for (int di = -(u.nx - 1); di <= u.nx - 1; ++di) {
      const double r2 = (di * h) * (di * h) + (dj * h) * (dj * h);
      out.conv[static_cast<std::size_t>(dj + u.ny - 1) * (2 * u.nx - 1) +
               (di + u.nx - 1)] =
          raw_kernel(r2, z, s, u.n) * std::pow(h, u.n) * out.scale;
    }
  return out;
}

// mass of the source columns lying on the half-space side, seen from a
// sample whose split-axis coordinate is xa
inline double side_mass(const LevelKernel& lk, double xa, double level, bool below,
                        double h) {
  const double w = (xa - level) / h;
  auto cum = [&](int k) {  // mass of columns >= k
    k = std::clamp(k + lk.K, 0, 2 * lk.K + 1);
    return lk.cum_ge[k];
  };
  if (below) {  // side = {coord <= level}: source offset k >= w
    return cum(static_cast<int>(std::ceil(w - 1e-9)));
  }
  return 1.0 - cum(static_cast<int>(std::floor(w + 1e-9)) + 1);
}

// linear convolution of the window residual with the level kernel
inline void conv_residual(const TraceWindow& u, const std::vector<double>& v,
                          const LevelKernel& lk, std::vector<double>& out) {
  const int nx = u.nx, ny = u.ny;
  out.assign(static_cast<std::size_t>(nx) * ny, 0.0);
  if (u.n == 1 || static_cast<std::size_t>(nx) * ny <= 4096) {
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        double acc = 0.0;
        for (int jj = 0; jj < ny; ++jj) {
          const double* krow = lk.conv.data() +
                               static_cast<std::size_t>(j - jj + ny - 1) * (2 * nx - 1);
          const double* vrow = v.data() + static_cast<std::size_t>(jj) * nx;
          for (int ii = 0; ii < nx; ++ii) acc += krow[i - ii + nx - 1] * vrow[ii];
        }
        out[static_cast<std::size_t>(j) * nx + i] = acc;
      }
    return;
  }
  // FFT path for plane windows
  auto fft_len = [](int need) {
    int p = 1;
    while (p < need) p *= 2;
    return p;
  };
  const int PX = fft_len(3 * nx - 2), PY = fft_len(3 * ny - 2);
  const std::size_t real_n = static_cast<std::size_t>(PY) * PX;
  const std::size_t cplx_n = static_cast<std::size_t>(PY) * (PX / 2 + 1);
  double* A = fftw_alloc_real(real_n);
  double* B = fftw_alloc_real(real_n);
  fftw_complex* Af = fftw_alloc_complex(cplx_n);
  fftw_complex* Bf = fftw_alloc_complex(cplx_n);
  std::fill(A, A + real_n, 0.0);
  std::fill(B, B + real_n, 0.0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) A[static_cast<std::size_t>(j) * PX + i] = v[static_cast<std::size_t>(j) * nx + i];
  for (int dj = -(ny - 1); dj <= ny - 1; ++dj)
    for (int di = -(nx - 1); di <= nx - 1; ++di)
      B[static_cast<std::size_t>((dj + PY) % PY) * PX + (di + PX) % PX] =
          lk.conv[static_cast<std::size_t>(dj + ny - 1) * (2 * nx - 1) + (di + nx - 1)];
  fftw_plan pa = fftw_plan_dft_r2c_2d(PY, PX, A, Af, FFTW_ESTIMATE);
  fftw_plan pb = fftw_plan_dft_r2c_2d(PY, PX, B, Bf, FFTW_ESTIMATE);
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t k = 0; k < cplx_n; ++k) {
    const double re = Af[k][0] * Bf[k][0] - Af[k][1] * Bf[k][1];
    const double im = Af[k][0] * Bf[k][1] + Af[k][1] * Bf[k][0];
    Af[k][0] = re;
    Af[k][1] = im;
  }
  fftw_plan pi = fftw_plan_dft_c2r_2d(PY, PX, Af, A, FFTW_ESTIMATE);
  fftw_execute(pi);
  const double inv = 1.0 / (static_cast<double>(PX) * PY);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      out[static_cast<std::size_t>(j) * nx + i] = A[static_cast<std::size_t>(j) * PX + i] * inv;
  fftw_destroy_plan(pa);
  fftw_destroy_plan(pb);
  fftw_destroy_plan(pi);
  fftw_free(A);
  fftw_free(B);
  fftw_free(Af);
  fftw_free(Bf);
}

// reduce an axis-aligned half-space to (axis, below-flag, level)
struct AxisSplit {
  int axis = 0;
  bool below = true;  // side = {coord <= level}
  double level = 0.0;
};

inline AxisSplit reduce_split(const HalfSpace& hs) {
  AxisSplit out;
  out.axis = std::abs(hs.normal.x) > 0.5 ? 0 : 1;
  const double n_comp = out.axis == 0 ? hs.normal.x : hs.normal.y;
  out.below = n_comp > 0.0;
  out.level = hs.offset * (out.below ? 1.0 : -1.0);
  return out;
}

}  // namespace extdetail

// ===== Poisson extension =====

inline ExtensionField poisson_extend(const TraceWindow& u,
                                     const std::vector<double>& z_levels,
                                     const FracParams& par) {
  validate(u);
  validate(par);
  if (par.n != u.n) throw DomainError("trace dimension must match the parameters");
  const double s = par.s;
  ExtensionField f;
  f.n = u.n;
  f.nx = u.nx;
  f.ny = u.ny;
  f.origin = u.origin;
  f.h = u.h;
  f.a = 1.0 - s;
  f.z = z_levels;
  f.values.assign(z_levels.size() * static_cast<std::size_t>(u.nx) * u.ny, 0.0);
  validate(f);

  // window residual against the analytic far field
  std::vector<double> v(u.values.size());
  double vmax = 0.0;
  for (int j = 0; j < u.ny; ++j)
    for (int i = 0; i < u.nx; ++i) {
      const std::size_t q = static_cast<std::size_t>(j) * u.nx + i;
      v[q] = u.values[q] - u.base(u.point(i, j));
      vmax = std::max(vmax, std::abs(v[q]));
    }
  const std::optional<extdetail::AxisSplit> split =
      u.tail_split ? std::optional(extdetail::reduce_split(*u.tail_split))
                   : std::nullopt;
  const int split_axis = split ? split->axis : 0;

  std::vector<double> conv_out;
  for (std::size_t lev = 0; lev < z_levels.size(); ++lev) {
    const extdetail::LevelKernel lk =
        extdetail::build_level_kernel(u, z_levels[lev], s, split_axis);
    double* dst = f.values.data() + lev * static_cast<std::size_t>(u.nx) * u.ny;
    if (!split) {
      std::fill_n(dst, static_cast<std::size_t>(u.nx) * u.ny, u.tail_in);
    } else {
      // the base field varies only along the split axis
      const int nS = split_axis == 0 ? u.nx : u.ny;
      std::vector<double> prof(nS);
      for (int k = 0; k < nS; ++k) {
        const Vec2 p = split_axis == 0 ? u.point(k, 0) : u.point(0, k);
        const double xa = split_axis == 0 ? p.x : p.y;
        const double m = extdetail::side_mass(lk, xa, split->level, split->below, u.h);
        prof[k] = u.tail_out + (u.tail_in - u.tail_out) * m;
      }
      for (int j = 0; j < u.ny; ++j)
        for (int i = 0; i < u.nx; ++i)
          dst[static_cast<std::size_t>(j) * u.nx + i] = prof[split_axis == 0 ? i : j];
    }
    if (vmax > 0.0) {
      extdetail::conv_residual(u, v, lk, conv_out);
      for (std::size_t q = 0; q < conv_out.size(); ++q) dst[q] += conv_out[q];
    }
  }
  return f;
}

// ===== Weighted Dirichlet energy =====

// Energy of the field over the upper half-ball of radius r centered at the
// origin of the trace plane (x = 0).  Central differences in x, a trapezoid
// in z with the weight z^a, and an analytic bottom slab on [0, z_1] where the
// gradient of the lowest level is taken constant.
inline double weighted_energy(const ExtensionField& f, double r) {
  validate(f);
  if (!(r > 0.0)) throw DomainError("radius must be positive");
  if (!(f.z.front() < r)) throw RegionOutOfDomain("no levels below the requested radius");
  if (f.z.back() < r * (1.0 - 1e-9))
    throw RegionOutOfDomain("level ladder stops below the requested radius");
  if (f.z.size() < 2) throw RegionOutOfDomain("vertical differences need two levels");
  const int nx = f.nx, ny = f.ny;
  const double h = f.h;

  // index box of the disk |x| <= r, with one cell of margin for differences
  auto coord = [&](int i, int j) { return Vec2{f.origin.x + i * h, f.origin.y + j * h}; };
  {
    const Vec2 lo = coord(1, f.n == 2 ? 1 : 0);
    const Vec2 hi = coord(nx - 2, f.n == 2 ? ny - 2 : 0);
    if (lo.x > -r || hi.x < r || (f.n == 2 && (lo.y > -r || hi.y < r)))
      throw RegionOutOfDomain("half-ball reaches outside the sampled window");
  }

  const int nlev = static_cast<int>(f.z.size());
  // per-level disk sums of |grad u|^2
  auto level_sum = [&](int lev, double rad2) {
    double acc = 0.0;
    for (int j = 0; j < ny; ++j)
      for (int i = 1; i + 1 < nx; ++i) {
        if (f.n == 2 && (j < 1 || j + 1 >= ny)) continue;
        const Vec2 p = coord(i, j);
        const double py = f.n == 2 ? p.y : 0.0;
        if (p.x * p.x + py * py > rad2) continue;
        const double gx = (f.at(i + 1, j, lev) - f.at(i - 1, j, lev)) / (2.0 * h);
        double g2 = gx * gx;
        if (f.n == 2) {
          const double gy = (f.at(i, j + 1, lev) - f.at(i, j - 1, lev)) / (2.0 * h);
          g2 += gy * gy;
        }
        double gz;
        if (lev == 0) {
          gz = (f.at(i, j, 1) - f.at(i, j, 0)) / (f.z[1] - f.z[0]);
        } else if (lev + 1 == nlev) {
          gz = (f.at(i, j, lev) - f.at(i, j, lev - 1)) / (f.z[lev] - f.z[lev - 1]);
        } else {
          const double dzm = f.z[lev] - f.z[lev - 1], dzp = f.z[lev + 1] - f.z[lev];
          gz = (dzm / dzp * (f.at(i, j, lev + 1) - f.at(i, j, lev)) +
                dzp / dzm * (f.at(i, j, lev) - f.at(i, j, lev - 1))) /
               (dzm + dzp);
        }
        acc += (g2 + gz * gz) * std::pow(h, f.n);
      }
    return acc;
  };

  std::vector<double> D(nlev, 0.0);
  int top = 0;
  for (int lev = 0; lev < nlev && f.z[lev] < r; ++lev) {
    D[lev] = level_sum(lev, r * r - f.z[lev] * f.z[lev]);
    top = lev;
  }
  const double a = f.a;
  double e = D[0] * std::pow(f.z[0], 1.0 + a) / (1.0 + a);  // analytic bottom slab
  for (int lev = 0; lev < top; ++lev)
    e += 0.5 * (D[lev] * std::pow(f.z[lev], a) + D[lev + 1] * std::pow(f.z[lev + 1], a)) *
         (f.z[lev + 1] - f.z[lev]);
  // the cap between the last level under r and the pole, where the disk closes
  e += 0.5 * D[top] * std::pow(f.z[top], a) * (r - f.z[top]);
  return e;
}

// ===== Trace builders =====

inline TraceWindow shape_trace(const AnalyticShape& E, double half_width, double h) {
  if (!(half_width > 0.0 && h > 0.0)) throw DomainError("window must be positive");
  if (std::holds_alternative<Subgraph>(E))
    throw DomainError("graph sets have no constant or two-sided far field");
  TraceWindow u;
  u.n = 2;
  u.nx = u.ny = 2 * static_cast<int>(std::round(half_width / h)) + 1;
  u.h = h;
  u.origin = {-(u.nx - 1) / 2 * h, -(u.ny - 1) / 2 * h};
  u.values.resize(static_cast<std::size_t>(u.nx) * u.ny);
  if (const HalfSpace* hs = std::get_if<HalfSpace>(&E)) {
    if (!axis_aligned(*hs))
      throw DomainError("half-space traces must be axis-aligned");
    u.tail_split = *hs;
    u.tail_in = 1.0;
    u.tail_out = -1.0;
  } else {
    u.tail_in = u.tail_out = -1.0;  // bounded shapes vanish far away
  }
  for (int j = 0; j < u.ny; ++j)
    for (int i = 0; i < u.nx; ++i)
      u.values[static_cast<std::size_t>(j) * u.nx + i] =
          signed_distance(E, u.point(i, j)) <= 0.0 ? 1.0 : -1.0;
  validate(u);
  return u;
}

inline TraceWindow grid_trace(const GridSet& g,
                              std::optional<HalfSpace> tail_split = std::nullopt) {
  TraceWindow u;
  u.n = 2;
  u.nx = g.width;
  u.ny = g.height;
  u.h = g.h;
  const Vec2 c0 = g.cell_center(0, 0);
  u.origin = c0;
  u.values.resize(g.occupancy.size());
  for (std::size_t q = 0; q < g.occupancy.size(); ++q)
    u.values[q] = g.occupancy[q] ? 1.0 : -1.0;
  if (tail_split) {
    u.tail_split = tail_split;
    u.tail_in = 1.0;
    u.tail_out = -1.0;
  } else {
    u.tail_in = u.tail_out = -1.0;
  }
  validate(u);
  return u;
}

// ===== Monotonicity functional =====

struct ExtensionOptions {
  double h = 1.0 / 48;
  double margin = 0.25;  // extra window beyond what the shape and radii need
};

inline MonotonicityTrace phi_trace_from(const TraceWindow& u,
                                        const std::vector<double>& r_list,
                                        const FracParams& par) {
  if (r_list.empty()) throw DomainError("empty radius list");
  for (std::size_t i = 0; i < r_list.size(); ++i) {
    if (!(r_list[i] > 0.0)) throw DomainError("radii must be positive");
    if (i && !(r_list[i] > r_list[i - 1])) throw OrderingError("radii must increase");
  }
  const ExtensionField f = poisson_extend(u, extension_levels(u.h, r_list.back()), par);
  MonotonicityTrace out;
  for (double r : r_list)
    out.rows.push_back({r, weighted_energy(f, r) / std::pow(r, par.n + f.a - 1.0)});
  validate(out);
  return out;
}

inline MonotonicityTrace phi_trace(const AnalyticShape& E,
                                   const std::vector<double>& r_list,
                                   const FracParams& par,
                                   const ExtensionOptions& opt = {}) {
  if (par.n != 2) throw DomainError("plane traces require n = 2");
  if (std::abs(signed_distance(E, {0.0, 0.0})) > 2.0 * opt.h)
    throw OriginNotOnBoundary("the origin must lie on the boundary of the set");
  if (r_list.empty()) throw DomainError("empty radius list");
  double L = r_list.back() + opt.margin;
  if (!std::holds_alternative<HalfSpace>(E)) {
    // bounded shapes must sit inside the window for the constant tail
    Rect bb{0, 0, 0, 0};
    if (const Ball* b = std::get_if<Ball>(&E))
      bb = {b->center.x - b->radius, b->center.y - b->radius,
            b->center.x + b->radius, b->center.y + b->radius};
    else if (const Polygon* p = std::get_if<Polygon>(&E)) {
      bb = {kInf, kInf, -kInf, -kInf};
      for (const Vec2& vtx : p->vertices) {
        bb.xmin = std::min(bb.xmin, vtx.x);
        bb.ymin = std::min(bb.ymin, vtx.y);
        bb.xmax = std::max(bb.xmax, vtx.x);
        bb.ymax = std::max(bb.ymax, vtx.y);
      }
    } else {
      throw DomainError("unsupported shape for the extension trace");
    }
    L = std::max({L, std::abs(bb.xmin), std::abs(bb.xmax), std::abs(bb.ymin),
                  std::abs(bb.ymax)}) +
        opt.margin;
  }
  return phi_trace_from(shape_trace(E, L, opt.h), r_list, par);
}

inline MonotonicityTrace phi_trace(const GridSet& E, const std::vector<double>& r_list,
                                   const FracParams& par,
                                   std::optional<HalfSpace> tail_split = std::nullopt) {
  if (par.n != 2) throw DomainError("plane traces require n = 2");
  // the origin must separate set from unset cells nearby
  bool near_set = false, near_unset = false;
  for (int j = 0; j < E.height; ++j)
    for (int i = 0; i < E.width; ++i) {
      const Vec2 c = E.cell_center(i, j);
      if (std::hypot(c.x, c.y) > 2.0 * E.h) continue;
      (E.test(i, j) ? near_set : near_unset) = true;
    }
  if (!near_set || !near_unset)
    throw OriginNotOnBoundary("the origin must lie on the boundary of the set");
  return phi_trace_from(grid_trace(E, tail_split), r_list, par);
}

// ===== Phi upper bound =====

namespace extdetail {

// Phi of the axis-aligned half-plane on a fixed standard grid; the shape is
// a cone, so the value is r-independent up to discretization.
inline double phi_halfplane_reference(double s) {
  static std::map<double, double> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(s);
  if (it != cache.end()) return it->second;
  const AnalyticShape hp = HalfSpace{{0.0, 1.0}, 0.0};
  const MonotonicityTrace t =
      phi_trace(hp, {0.5}, FracParams{2, s}, ExtensionOptions{1.0 / 48, 0.25});
  cache.emplace(s, t.rows[0].phi);
  return t.rows[0].phi;
}

}  // namespace extdetail

// The monotonicity functional of a minimizer stays below a fixed multiple of
// the half-plane's plateau; the multiple is frozen after calibration.
inline constexpr double kPhiBoundFactor = 5.0;

inline bool phi_bound_check(const MonotonicityTrace& trace, const FracParams& par) {
  validate(trace);
  validate(par);
  const double cap = kPhiBoundFactor * extdetail::phi_halfplane_reference(par.s);
  for (const PhiRow& row : trace.rows)
    if (row.phi > cap) return false;
  return true;
}

// ===== Fractional Laplacian =====

namespace extdetail {

// 4-point (cubic) interpolation of line samples, zero beyond the window
inline double line_value(const TraceWindow& u, double x) {
  const double t = (x - u.origin.x) / u.h;
  const int j = static_cast<int>(std::floor(t));
  if (j < 1 || j + 2 >= u.nx) {
    if (t > -0.5 && t < u.nx - 0.5) {  // edge cells: linear
      const int i = std::clamp(static_cast<int>(std::round(t)), 0, u.nx - 1);
      return u.values[i];
    }
    return 0.0;
  }
  const double w = t - j;
  const double* p = u.values.data() + (j - 1);
  const double c0 = -w * (w - 1.0) * (w - 2.0) / 6.0;
  const double c1 = (w + 1.0) * (w - 1.0) * (w - 2.0) / 2.0;
  const double c2 = -(w + 1.0) * w * (w - 2.0) / 2.0;
  const double c3 = (w + 1.0) * w * (w - 1.0) / 6.0;
  return c0 * p[0] + c1 * p[1] + c2 * p[2] + c3 * p[3];
}

}  // namespace extdetail

inline double c_constant(int n, double s);

// Second-difference form of the fractional Laplacian at one point of a line
// trace: no principal value is needed because the symmetric difference is
// O(y^2).  The trace must decay (Gaussian-class) toward the window edges; the
// far field is closed analytically with u = 0 outside.
inline double frac_laplacian_direct(const TraceWindow& u, double x, double s,
                                    const QuadratureSpec& quad = {}) {
  validate(u);
  validate(quad);
  if (u.n != 1) throw DomainError("direct evaluation works on line traces");
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  const double h = u.h;
  const double x_lo = u.origin.x, x_hi = u.origin.x + (u.nx - 1) * h;
  if (x < x_lo + 4.0 * h || x > x_hi - 4.0 * h)
    throw DomainError("evaluation point too close to the window edge");

  double umax = 0.0;
  for (double vv : u.values) umax = std::max(umax, std::abs(vv));
  if (umax == 0.0) return 0.0;
  // affine traces have vanishing second differences everywhere, hence value 0
  // under the natural affine continuation
  double dd_max = 0.0;
  for (int i = 1; i + 1 < u.nx; ++i)
    dd_max = std::max(dd_max,
                      std::abs(u.values[i + 1] + u.values[i - 1] - 2.0 * u.values[i]));
  if (dd_max <= 1e-12 * (1.0 + umax)) return 0.0;
  // otherwise the far field is closed with u = 0, which needs actual decay
  const int edge = std::max(2, u.nx / 20);
  double edge_max = 0.0;
  for (int i = 0; i < edge; ++i)
    edge_max = std::max({edge_max, std::abs(u.values[i]), std::abs(u.values[u.nx - 1 - i])});
  if (edge_max > 1e-6 * umax)
    throw RoughnessError("trace does not decay toward the window edges");

  auto at = [&](double t) { return extdetail::line_value(u, t); };
  const double u0 = at(x);
  // C^2 gate: curvature estimates at steps h and 2h must agree
  const double d2h = (at(x + h) + at(x - h) - 2.0 * u0) / (h * h);
  const double d22 = (at(x + 2.0 * h) + at(x - 2.0 * h) - 2.0 * u0) / (4.0 * h * h);
  if (std::abs(d2h - d22) > 0.3 * std::max({std::abs(d2h), std::abs(d22), 1e-3 * umax}))
    throw RoughnessError("second differences disagree across scales: not C^2 here");
  const double d4 = (at(x + 2.0 * h) - 4.0 * at(x + h) + 6.0 * u0 - 4.0 * at(x - h) +
                     at(x - 2.0 * h)) /
                    (h * h * h * h);

  const double Y = std::min(x - x_lo, x_hi - x) - 2.0 * h;
  // regular part of the integrand: (2u(x) - u(x+y) - u(x-y)) / y^2
  auto freg = [&](double y) {
    if (y < 0.5 * h) return -(d2h + d4 * y * y / 12.0);
    return (2.0 * u0 - at(x + y) - at(x - y)) / (y * y);
  };
  const double scale = umax * (1.0 + std::pow(Y, -2.0 * s)) / s;
  double main;
  if (s > 0.5) {
    const QuadResult q = integrate_power_singular(freg, 2.0 * s - 1.0, Y, quad.rel_tol,
                                                  1e-13 * scale);
    if (!q.converged)
      throw ToleranceNotMet("fractional Laplacian quadrature stalled", q.value, q.error);
    main = q.value;
  } else {
    const QuadResult q = integrate_adaptive(
        [&](double y) { return freg(y) * std::pow(y, 1.0 - 2.0 * s); }, 0.0, Y,
        quad.rel_tol, 1e-13 * scale);
    if (!q.converged)
      throw ToleranceNotMet("fractional Laplacian quadrature stalled", q.value, q.error);
    main = q.value;
  }
  const double tail = 2.0 * u0 * std::pow(Y, -2.0 * s) / (2.0 * s);
  // the symmetrized integrand is even in y, so the half-line integral carries
  // the factor 2 that cancels the 1/2 of the second-difference form
  return c_constant(1, s) * (main + tail);
}

// Spectral evaluation on a periodic window: multiply by |xi|^(2s).  The
// anchor oracle for the direct form.
inline std::vector<double> frac_laplacian_fourier(const std::vector<double>& u,
                                                  double h, double s) {
  if (u.size() < 8) throw DomainError("window too small");
  if (!(h > 0.0)) throw DomainError("step must be positive");
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  const int nx = static_cast<int>(u.size());
  double umax = 0.0, step_max = 0.0;
  for (int i = 0; i < nx; ++i) {
    if (!std::isfinite(u[i])) throw UnboundedTrace("samples must be finite");
    umax = std::max(umax, std::abs(u[i]));
    if (i) step_max = std::max(step_max, std::abs(u[i] - u[i - 1]));
  }
  // periodic wrap check: the jump across the seam may not exceed the interior
  // variation scale (a smoothly wrapping mode passes, a truncated bump fails)
  const double seam = std::abs(u.front() - u.back());
  if (seam > 4.0 * step_max + 1e-8 * umax)
    throw AliasWarning("window boundary values do not wrap smoothly");

  std::vector<double> out(u.size());
  const int nc = nx / 2 + 1;
  double* in = fftw_alloc_real(nx);
  fftw_complex* sp = fftw_alloc_complex(nc);
  std::copy(u.begin(), u.end(), in);
  fftw_plan pf = fftw_plan_dft_r2c_1d(nx, in, sp, FFTW_ESTIMATE);
  fftw_execute(pf);
  const double L = nx * h;
  for (int k = 0; k < nc; ++k) {
    const double xi = 2.0 * kPi * k / L;
    const double mul = std::pow(xi, 2.0 * s);
    sp[k][0] *= mul;
    sp[k][1] *= mul;
  }
  fftw_plan pb = fftw_plan_dft_c2r_1d(nx, sp, in, FFTW_ESTIMATE);
  fftw_execute(pb);
  for (int i = 0; i < nx; ++i) out[i] = in[i] / nx;
  fftw_destroy_plan(pf);
  fftw_destroy_plan(pb);
  fftw_free(in);
  fftw_free(sp);
  return out;
}

// ===== Normalization constant =====

// C(n,s) = ( int (1 - cos z_1) / |z|^{n+2s} dz )^{-1}, the constant that makes
// the second-difference form match the Fourier symbol |xi|^{2s}.

namespace extdetail {

// Accelerated sum of an alternating tail: iterated averaging of the partial
// sums (Euler transform), error ~ |t_0| 2^(-m) for smooth envelopes.
inline double euler_sum(std::vector<double> partial) {
  while (partial.size() > 1) {
    for (std::size_t i = 0; i + 1 < partial.size(); ++i)
      partial[i] = 0.5 * (partial[i] + partial[i + 1]);
    partial.pop_back();
  }
  return partial[0];
}

// int_1^inf f(t) t^{-p} dt for an oscillatory f with known simple zeros:
// panels between consecutive zeros alternate in sign, so a handful of them
// plus Euler acceleration gives near machine accuracy.
template <class F, class Z>
inline double oscillatory_power_tail(F&& f, Z&& zero, double p) {
  const GaussRule& rule = gl32();
  auto integrand = [&](double t) { return f(t) * std::pow(t, -p); };
  const int direct = 16, accel = 32;
  double acc = gauss(rule, integrand, 1.0, zero(0));
  int k = 0;
  for (; k < direct; ++k) acc += gauss(rule, integrand, zero(k), zero(k + 1));
  std::vector<double> partial;
  double run = 0.0;
  for (int j = 0; j < accel; ++j) {
    run += gauss(rule, integrand, zero(k + j), zero(k + j + 1));
    partial.push_back(run);
  }
  return acc + euler_sum(std::move(partial));
}

// int_1^inf cos(t) t^{-p} dt
inline double cos_power_tail(double p) {
  return oscillatory_power_tail([](double t) { return std::cos(t); },
                                [](int k) { return kPi * (k + 0.5); }, p);
}

// int_1^inf J0(r) r^{-p} dr; zeros refined from the McMahon expansion by
// Newton steps (J0' = -J1)
inline double bessel_power_tail(double p) {
  auto zero = [](int k) {
    const double b = (k + 0.75) * kPi;
    double x = b - 1.0 / (8.0 * b);
    for (int it = 0; it < 2; ++it)
      x += std::cyl_bessel_j(0.0, x) / std::cyl_bessel_j(1.0, x);
    return x;
  };
  return oscillatory_power_tail([](double t) { return std::cyl_bessel_j(0.0, t); }, zero,
                                p);
}

}  // namespace extdetail

inline double c_constant(int n, double s) {
  if (n != 1 && n != 2) throw DomainError("constant available for n = 1, 2 only");
  if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0,1)");
  // the integrand is even in z_1, so work on a half-domain and double
  auto inner_regular = [&](double t) {
    // (1 - cos t)/t^2, resp. (1 - J0(r))/r^2, extended continuously to 0
    if (n == 1)
      return t < 1e-4 ? 0.5 - t * t / 24.0 : (1.0 - std::cos(t)) / (t * t);
    return t < 1e-4 ? 0.25 - t * t / 64.0 : (1.0 - std::cyl_bessel_j(0.0, t)) / (t * t);
  };
  double inner;
  if (s > 0.5) {
    inner = integrate_power_singular(inner_regular, 2.0 * s - 1.0, 1.0, 1e-12, 1e-15).value;
  } else {
    inner = integrate_adaptive(
                [&](double t) { return inner_regular(t) * std::pow(t, 1.0 - 2.0 * s); },
                0.0, 1.0, 1e-12, 1e-15)
                .value;
  }
  const double p = 1.0 + 2.0 * s;
  const double outer = 1.0 / (2.0 * s) - (n == 1 ? extdetail::cos_power_tail(p)
                                                 : extdetail::bessel_power_tail(p));
  const double integral = (n == 1 ? 2.0 : 2.0 * kPi) * (inner + outer);
  return 1.0 / integral;
}

}  // namespace nlperim
