#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>
#include <vector>

#include "errors.hpp"

namespace nlperim {

inline constexpr double kPi = std::numbers::pi;

// ===== Deterministic summation =====
//
// Fixed binary reduction tree: the result depends only on the order of the
// inputs, never on the worker count that produced them.

inline double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), v.size());
}

// ===== Worker pool =====

inline int worker_count() {
  if (const char* env = std::getenv("NLPERIM_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return std::min(w, 64);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
}

// Runs fn(block) for block = 0..nblocks-1.  Blocks are fixed by the caller,
// each block writes its own output slot, so results are independent of the
// worker count.
template <class Fn>
inline void parallel_blocks(std::size_t nblocks, Fn&& fn) {
  const int workers = std::min<std::size_t>(worker_count(), nblocks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < nblocks; ++b) fn(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= nblocks) return;
      fn(b);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int w = 0; w + 1 < workers; ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
}

// Deterministic parallel sum of f(i) over [0, n).  Block layout depends only
// on block_size; partials are combined with the pairwise tree.
template <class F>
inline double parallel_sum(std::size_t n, std::size_t block_size, F&& f) {
  if (n == 0) return 0.0;
  block_size = std::max<std::size_t>(1, block_size);
  const std::size_t nblocks = (n + block_size - 1) / block_size;
  std::vector<double> partial(nblocks, 0.0);
  parallel_blocks(nblocks, [&](std::size_t b) {
    const std::size_t lo = b * block_size;
    const std::size_t hi = std::min(n, lo + block_size);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += f(i);
    partial[b] = s;
  });
  return pairwise_sum(partial);
}

// ===== Gauss-Legendre rules =====

struct GaussRule {
  std::vector<double> x, w;

  explicit GaussRule(int n) : x(n), w(n) {
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double xi = std::cos(kPi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = xi;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2 * k - 1) * xi * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
        const double dx = -p1 / dp;
        xi += dx;
        if (std::abs(dx) < 1e-15) break;
      }
      x[i] = -xi;
      x[n - 1 - i] = xi;
      w[i] = w[n - 1 - i] = 2.0 / ((1.0 - xi * xi) * dp * dp);
    }
  }
};

inline const GaussRule& gl8() { static const GaussRule r(8); return r; }
inline const GaussRule& gl16() { static const GaussRule r(16); return r; }
inline const GaussRule& gl32() { static const GaussRule r(32); return r; }
inline const GaussRule& gl64() { static const GaussRule r(64); return r; }

template <class F>
inline double gauss(const GaussRule& g, F&& f, double a, double b) {
  const double c = 0.5 * (a + b), hl = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t i = 0; i < g.x.size(); ++i) s += g.w[i] * f(c + hl * g.x[i]);
  return s * hl;
}

// ===== Adaptive quadrature =====

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = true;
};

namespace detail {

// Child tolerance shrinks by 0.6 per level rather than 0.5 so that endpoint
// singularities of Holder type (error contraction 2^-(1+alpha)) still catch
// up with the requirement; the achieved error is accumulated and reported.
template <class F>
inline void adapt_rec(F& f, double a, double b, double whole, double tol,
                      int depth, int max_depth, QuadResult& out) {
  const double m = 0.5 * (a + b);
  const double left = gauss(gl16(), f, a, m);
  const double right = gauss(gl16(), f, m, b);
  const double diff = std::abs(left + right - whole);
  if (diff <= tol || depth >= max_depth) {
    out.value += left + right;
    out.error += diff;
    if (diff > tol && depth >= max_depth) out.converged = false;
    return;
  }
  adapt_rec(f, a, m, left, 0.6 * tol, depth + 1, max_depth, out);
  adapt_rec(f, m, b, right, 0.6 * tol, depth + 1, max_depth, out);
}

}  // namespace detail

template <class F>
inline QuadResult integrate_adaptive(F f, double a, double b,
                                     double rel_tol = 1e-10,
                                     double abs_tol = 1e-14,
                                     int max_depth = 48) {
  QuadResult out;
  if (a == b) return out;
  const double whole = gauss(gl16(), f, a, b);
  const double tol = std::max(abs_tol, rel_tol * std::abs(whole));
  detail::adapt_rec(f, a, b, whole, tol, 0, max_depth, out);
  return out;
}

// Integral of u^(-sigma) * f(u) over (0, b) with 0 <= sigma < 1 and f smooth.
// The substitution u = v^(1/(1-sigma)) removes the endpoint singularity
// exactly, so the adaptive rule sees a smooth integrand.
template <class F>
inline QuadResult integrate_power_singular(F f, double sigma, double b,
                                           double rel_tol = 1e-10,
                                           double abs_tol = 1e-14) {
  if (sigma < 0.0 || sigma >= 1.0) throw DomainError("power exponent must lie in [0,1)");
  if (b <= 0.0) return {};
  const double q = 1.0 / (1.0 - sigma);
  auto g = [&](double v) { return f(std::pow(v, q)); };
  QuadResult r = integrate_adaptive(g, 0.0, std::pow(b, 1.0 - sigma), rel_tol, abs_tol);
  r.value *= q;
  r.error *= q;
  return r;
}

// ===== Angular kernel primitives =====
//
// g_incomplete(T, p) = int_0^T (1+t^2)^(-p/2) dt for p > 1.  Used throughout:
// column integrals of the interaction kernel reduce to it.

inline double g_full(double p) {
  return 0.5 * std::sqrt(kPi) * std::exp(std::lgamma(0.5 * (p - 1.0)) - std::lgamma(0.5 * p));
}

inline double g_incomplete(double T, double p) {
  if (T <= 0.0) return (T == 0.0) ? 0.0 : -g_incomplete(-T, p);
  if (std::isinf(T)) return g_full(p);
  if (T <= 3.0) {
    // t = tan(theta): integral of cos(theta)^(p-2) over (0, atan T)
    const double theta = std::atan(T);
    return gauss(gl64(), [&](double th) { return std::pow(std::cos(th), p - 2.0); }, 0.0, theta);
  }
  // tail: int_T^inf (1+t^2)^(-p/2) dt = int_0^(1/T) tau^(p-2) (1+tau^2)^(-p/2) dtau
  const double sigma = 2.0 - p;  // in (-inf, 1): singular only when p < 2
  double tail;
  if (sigma > 0.0) {
    tail = integrate_power_singular(
               [&](double tau) { return std::pow(1.0 + tau * tau, -0.5 * p); }, sigma, 1.0 / T)
               .value;
  } else {
    tail = integrate_adaptive(
               [&](double tau) { return std::pow(tau, p - 2.0) * std::pow(1.0 + tau * tau, -0.5 * p); },
               0.0, 1.0 / T)
               .value;
  }
  return g_full(p) - tail;
}

// Unit-ball volume in dimension d.
inline double omega(double d) {
  if (d < 0.0) throw DomainError("omega: dimension must be nonnegative");
  return std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
}

}  // namespace nlperim
