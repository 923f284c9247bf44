#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nlperim/errors.hpp"
#include "nlperim/geometry.hpp"
#include "nlperim/kernel.hpp"

namespace nlperim {

// Relative perimeter minimization over a grid window with fixed exterior
// data.  The frame's occupancy holds the exterior cells; free cells (the
// window Omega) are driven by a configuration bit array.  Beyond the frame the
// set continues as the tail half-space, or as complement when absent.
struct MinimizationProblem {
  GridSet frame;
  std::vector<std::uint8_t> free_mask;  // 1 = cell belongs to Omega
  std::optional<HalfSpace> tail;        // axis-aligned continuation, else complement
  FracParams params{2, 0.5};
  QuadratureSpec quad{};
};

inline bool tail_is_axis_aligned(const HalfSpace& hs) {
  return (std::abs(std::abs(hs.normal.x) - 1.0) < 1e-12 && std::abs(hs.normal.y) < 1e-12) ||
         (std::abs(std::abs(hs.normal.y) - 1.0) < 1e-12 && std::abs(hs.normal.x) < 1e-12);
}

inline void validate(const MinimizationProblem& p) {
  validate(p.params);
  validate(p.quad);
  if (p.params.n != 2) throw DomainError("grid minimization requires ambient dimension 2");
  if (p.frame.width <= 0 || p.frame.height <= 0)
    throw DomainError("problem frame is empty");
  const std::size_t cells =
      static_cast<std::size_t>(p.frame.width) * p.frame.height;
  if (p.frame.occupancy.size() != cells || p.free_mask.size() != cells)
    throw SizeMismatch("frame occupancy and free mask must cover the frame");
  for (std::size_t c = 0; c < cells; ++c)
    if (p.free_mask[c] && p.frame.occupancy[c])
      throw DomainError("free cells cannot carry exterior data");
  if (p.tail) {
    validate(*p.tail);
    if (!tail_is_axis_aligned(*p.tail))
      throw DomainError("tail half-space must be axis-aligned");
  }
}

struct MinimizerReport {
  std::vector<std::uint8_t> configuration;  // over free cells, raster order
  double energy = 0.0;
  long iterations = 0;
  long accepted_flips = 0;
  std::uint64_t seed = 0;
  std::string method;  // "brute" | "anneal"
};

namespace mindetail {

// Mass of {dx >= a, dy >= b} from a unit cell, lattice units: midpoint value
// with a second-moment (Laplacian) correction when there is room for the
// half-step stencil.  Only the corner pieces of the exterior use this; the
// slab pieces are exact.
inline double cell_to_quadrant(double a, double b, double s,
                               std::map<std::pair<double, double>, double>& memo) {
  const auto key = std::make_pair(a, b);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  auto Q = [&](double x, double y) { return point_to_quadrant(x, y, s); };
  double v = Q(a, b);
  if (a > 1.0)
    v += (1.0 / 6.0) * (Q(a + 0.5, b) + Q(a - 0.5, b) + Q(a, b + 0.5) +
                        Q(a, b - 0.5) - 4.0 * Q(a, b));
  memo.emplace(key, v);
  return v;
}

// Interactions of free cell (i,j) with the region beyond the frame, split
// into the tail's set part and the complement.  Lattice units.
struct TailMasses {
  double set = 0.0, unset = 0.0;
};

inline TailMasses tail_masses(const MinimizationProblem& p, int i, int j,
                              std::map<std::pair<double, double>, double>& memo) {
  const double s = p.params.s;
  const double W = p.frame.width, H = p.frame.height;
  const Rect cell{static_cast<double>(i), static_cast<double>(j), i + 1.0, j + 1.0};
  const double ci = i + 0.5, cj = j + 0.5;

  const double left = rect_to_halfplane(cell, 0, false, 0.0, s);
  const double right = rect_to_halfplane(cell, 0, true, W, s);
  const double bottom = rect_to_halfplane(cell, 1, false, 0.0, s);
  const double top = rect_to_halfplane(cell, 1, true, H, s);
  auto corner = [&](double a, double b) { return cell_to_quadrant(a, b, s, memo); };
  const double total = left + right + bottom + top - corner(ci, cj) -
                       corner(W - ci, cj) - corner(ci, H - cj) -
                       corner(W - ci, H - cj);

  TailMasses out;
  if (!p.tail) {
    out.unset = total;
    return out;
  }
  // reduce the half-space to (axis, "set = {coord <= t}" flag, level t) in
  // lattice coordinates; for the y axis work in (u,v) = (x,y), for x swap
  const HalfSpace& hs = *p.tail;
  const bool y_axis = std::abs(hs.normal.x) < 0.5;
  const double n_comp = y_axis ? hs.normal.y : hs.normal.x;
  const double org = y_axis ? p.frame.origin.y : p.frame.origin.x;
  const bool below = n_comp > 0.0;  // {coord <= t} when the normal is +e
  const double t = (hs.offset * (below ? 1.0 : -1.0) - org) / p.frame.h;

  // mass of outside intersected with {v <= t} in the (u,v) frame
  const double cu = y_axis ? ci : cj, cv = y_axis ? cj : ci;
  const double U = y_axis ? W : H, V = y_axis ? H : W;
  const int axis_v = y_axis ? 1 : 0;
  const double lo_slab = y_axis ? bottom : left;
  const double hi_slab = y_axis ? top : right;
  const double lhp = corner(cu, cv - t);          // {u <= 0, v <= t}
  const double rhp = corner(U - cu, cv - t);      // {u >= U, v <= t}
  double below_mass = lhp + rhp;
  if (t >= 0.0) {
    below_mass += lo_slab;  // the whole lower slab strip lies under t
    below_mass -= corner(cu, cv) + corner(U - cu, cv);  // already in lhp/rhp
  } else {
    const double whole = rect_to_halfplane(cell, axis_v, false, t, s);
    below_mass += whole - corner(cu, cv - t) - corner(U - cu, cv - t);
  }
  if (t > V) {
    const double band = hi_slab - rect_to_halfplane(cell, axis_v, true, t, s);
    below_mass += band - (corner(cu, V - cv) - corner(cu, t - cv)) -
                  (corner(U - cu, V - cv) - corner(U - cu, t - cv));
  }
  out.set = below ? below_mass : total - below_mass;
  out.unset = total - out.set;
  return out;
}

// Precomputed cell-pair kernel and exterior weights; flip deltas are O(N).
struct EnergyModel {
  int n = 0;
  double scale = 1.0;  // h^{2-s}
  std::vector<int> cell_of;                // free order -> frame index
  std::vector<int> free_pos;               // frame index -> free order or -1
  std::vector<double> kmat;                // n x n, lattice units
  std::vector<double> w_set, w_unset;      // exterior weights, lattice units

  explicit EnergyModel(const MinimizationProblem& p) {
    validate(p);
    const int W = p.frame.width, H = p.frame.height;
    free_pos.assign(static_cast<std::size_t>(W) * H, -1);
    for (int j = 0; j < H; ++j)
      for (int i = 0; i < W; ++i)
        if (p.free_mask[p.frame.index(i, j)]) {
          free_pos[p.frame.index(i, j)] = static_cast<int>(cell_of.size());
          cell_of.push_back(static_cast<int>(p.frame.index(i, j)));
        }
    n = static_cast<int>(cell_of.size());
    const double s = p.params.s;
    scale = std::pow(p.frame.h, 2.0 - s);
    if (static_cast<double>(n) * n * sizeof(double) > 2.0e9)
      throw TooLarge("kernel matrix exceeds the 2 GB budget");

    const OffsetTable& tab = offset_table(s);
    kmat.assign(static_cast<std::size_t>(n) * n, 0.0);
    parallel_blocks(static_cast<std::size_t>(n), [&](std::size_t k) {
      const int ak = cell_of[k], ai = ak % W, aj = ak / W;
      for (int m = 0; m < n; ++m) {
        const int bm = cell_of[m];
        kmat[k * n + m] = tab(bm % W - ai, bm / W - aj);
      }
    });

    w_set.assign(n, 0.0);
    w_unset.assign(n, 0.0);
    std::map<std::pair<double, double>, double> memo;
    for (int k = 0; k < n; ++k) {
      const int ak = cell_of[k], ai = ak % W, aj = ak / W;
      double ws = 0.0, wu = 0.0;
      for (int j = 0; j < H; ++j)
        for (int i = 0; i < W; ++i) {
          const std::size_t c = p.frame.index(i, j);
          if (p.free_mask[c]) continue;
          (p.frame.occupancy[c] ? ws : wu) += tab(i - ai, j - aj);
        }
      const TailMasses tm = tail_masses(p, ai, aj, memo);
      w_set[k] = ws + tm.set;
      w_unset[k] = wu + tm.unset;
    }
  }

  double energy_lattice(const std::vector<std::uint8_t>& c) const {
    double pairs = 0.0, ext = 0.0;
    for (int k = 0; k < n; ++k) {
      for (int m = k + 1; m < n; ++m)
        if ((c[k] != 0) != (c[m] != 0)) pairs += kmat[static_cast<std::size_t>(k) * n + m];
      ext += c[k] ? w_unset[k] : w_set[k];
    }
    return pairs + ext;
  }
  double delta_lattice(const std::vector<std::uint8_t>& c, int k) const {
    double d = c[k] ? w_set[k] - w_unset[k] : w_unset[k] - w_set[k];
    const double* row = kmat.data() + static_cast<std::size_t>(k) * n;
    for (int m = 0; m < n; ++m) {
      if (m == k) continue;
      d += ((c[m] != 0) == (c[k] != 0)) ? row[m] : -row[m];
    }
    return d;
  }
  double energy(const std::vector<std::uint8_t>& c) const {
    return scale * energy_lattice(c);
  }
  double delta(const std::vector<std::uint8_t>& c, int k) const {
    return scale * delta_lattice(c, k);
  }
  // interactions of free cell k with everything set / everything unset,
  // excluding k itself; lattice units
  void split(const std::vector<std::uint8_t>& c, int k, double& set_part,
             double& unset_part) const {
    set_part = w_set[k];
    unset_part = w_unset[k];
    const double* row = kmat.data() + static_cast<std::size_t>(k) * n;
    for (int m = 0; m < n; ++m) {
      if (m == k) continue;
      (c[m] ? set_part : unset_part) += row[m];
    }
  }
};

inline void check_config(const EnergyModel& model, const std::vector<std::uint8_t>& c) {
  if (static_cast<int>(c.size()) != model.n)
    throw SizeMismatch("configuration length must match the free cell count");
}

}  // namespace mindetail

// ===== Energy =====

inline double energy(const MinimizationProblem& p, const std::vector<std::uint8_t>& config) {
  const mindetail::EnergyModel model(p);
  mindetail::check_config(model, config);
  return model.energy(config);
}

// Change of energy from flipping one free cell; `cell` is the frame index.
inline double energy_delta_flip(const MinimizationProblem& p,
                                const std::vector<std::uint8_t>& config, int cell) {
  const mindetail::EnergyModel model(p);
  mindetail::check_config(model, config);
  if (cell < 0 || cell >= static_cast<int>(model.free_pos.size()) ||
      model.free_pos[cell] < 0)
    throw CellNotFree("cell is not part of the free window");
  return model.delta(config, model.free_pos[cell]);
}

// ===== Brute force =====

inline MinimizerReport brute_force_minimize(const MinimizationProblem& p) {
  const mindetail::EnergyModel model(p);
  if (model.n > 24) throw TooLarge("exhaustive search supports at most 24 free cells");
  MinimizerReport rep;
  rep.method = "brute";
  rep.seed = 0;
  const int n = model.n;
  if (n == 0) {
    rep.energy = model.energy({});
    rep.iterations = 1;
    return rep;
  }
  // Gray-code sweep with incremental deltas, then an exact recomputation over
  // the near-optimal candidates so accumulated rounding cannot misrank ties.
  std::vector<std::uint8_t> c(n, 0);
  double e = model.energy_lattice(c);
  double best = e;
  std::vector<std::uint32_t> cand{0};
  std::uint32_t mask = 0;
  const std::uint64_t total = 1ull << n;
  long improvements = 0;
  for (std::uint64_t t = 1; t < total; ++t) {
    const int bit = std::countr_zero(t);
    e += model.delta_lattice(c, bit);
    c[bit] ^= 1;
    mask ^= 1u << bit;
    const double band = 1e-7 * (1.0 + std::abs(best));
    if (e < best - band) {
      best = e;
      cand.clear();
      cand.push_back(mask);
      ++improvements;
    } else if (e <= best + band) {
      if (cand.size() < 65536) cand.push_back(mask);
      if (e < best) best = e;
    }
  }
  // exact pass over candidates; ties go to the lexicographically smallest
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  double best_exact = 0.0;
  std::vector<std::uint8_t> best_cfg;
  for (std::uint32_t m : cand) {
    std::vector<std::uint8_t> cc(n, 0);
    for (int k = 0; k < n; ++k) cc[k] = (m >> k) & 1u;
    const double ee = model.energy_lattice(cc);
    if (best_cfg.empty()) {
      best_exact = ee;
      best_cfg = std::move(cc);
      continue;
    }
    const double tie = 1e-12 * (1.0 + std::abs(best_exact));
    if (ee < best_exact - tie ||
        (ee <= best_exact + tie &&
         std::lexicographical_compare(cc.begin(), cc.end(), best_cfg.begin(),
                                      best_cfg.end()))) {
      best_exact = std::min(ee, best_exact);
      best_cfg = std::move(cc);
    }
  }
  rep.configuration = best_cfg;
  rep.energy = model.scale * best_exact;
  rep.iterations = static_cast<long>(total);
  rep.accepted_flips = improvements;
  return rep;
}

// ===== Annealed local search =====

struct AnnealSchedule {
  double t0 = -1.0;    // < 0: calibrate as mean |flip delta| of the start config
  double alpha = 0.95;
  int sweeps = 200;
};

inline void validate(const AnnealSchedule& s) {
  if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw DomainError("cooling factor must be in (0,1)");
  if (s.sweeps < 0) throw DomainError("sweep count must be nonnegative");
  if (!(s.t0 < 0.0 || s.t0 >= 0.0)) throw DomainError("start temperature is NaN");
}

inline MinimizerReport local_search_minimize(const MinimizationProblem& p,
                                             const AnnealSchedule& sched,
                                             std::uint64_t seed) {
  validate(sched);
  const mindetail::EnergyModel model(p);
  const int n = model.n;
  MinimizerReport rep;
  rep.method = "anneal";
  rep.seed = seed;
  if (n == 0) {
    rep.energy = model.energy({});
    return rep;
  }
  std::mt19937_64 rng(seed);
  auto uniform01 = [&]() { return (rng() >> 11) * 0x1.0p-53; };
  std::vector<std::uint8_t> c(n);
  for (int k = 0; k < n; ++k) c[k] = static_cast<std::uint8_t>(rng() & 1u);

  double T = sched.t0;
  if (T < 0.0) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) acc += std::abs(model.delta_lattice(c, k));
    T = acc / n;
  } else {
    T /= model.scale;  // schedule temperatures are physical, work in lattice
  }
  long proposals = 0, accepted = 0;
  std::vector<int> order(n);
  for (int k = 0; k < n; ++k) order[k] = k;
  for (int sweep = 0; sweep < sched.sweeps; ++sweep) {
    for (int k = n - 1; k > 0; --k)
      std::swap(order[k], order[rng() % static_cast<std::uint64_t>(k + 1)]);
    for (int k : order) {
      const double d = model.delta_lattice(c, k);
      ++proposals;
      if (d <= 0.0 || (T > 0.0 && uniform01() < std::exp(-d / T))) {
        c[k] ^= 1;
        ++accepted;
      }
    }
    T *= sched.alpha;
  }
  // descent to a single-flip local minimum
  for (;;) {
    int arg = -1;
    double bestd = -1e-13;
    for (int k = 0; k < n; ++k) {
      const double d = model.delta_lattice(c, k);
      ++proposals;
      if (d < bestd) {
        bestd = d;
        arg = k;
      }
    }
    if (arg < 0) break;
    c[arg] ^= 1;
    ++accepted;
  }
  rep.configuration = c;
  rep.energy = model.energy(c);
  rep.iterations = proposals;
  rep.accepted_flips = accepted;
  return rep;
}

// ===== Variational diagnostics =====

struct VariationalFlags {
  bool is_subsolution = false;
  bool is_supersolution = false;
};

// Singleton-cell sub/supersolution tests: no single flip may improve.
inline VariationalFlags variational_check(const MinimizationProblem& p,
                                          const std::vector<std::uint8_t>& config) {
  const mindetail::EnergyModel model(p);
  mindetail::check_config(model, config);
  VariationalFlags out{true, true};
  const double eps = 1e-10;
  for (int k = 0; k < model.n; ++k) {
    double S = 0.0, U = 0.0;
    model.split(config, k, S, U);
    if (config[k]) {
      if (S - U < -eps) out.is_subsolution = false;  // unsetting would help
    } else {
      if (S - U > eps) out.is_supersolution = false;  // setting would help
    }
  }
  return out;
}

struct DensityRow {
  double r = 0.0;
  double set_min = 0.0;    // min over boundary cells of |E cap B_r| / r^2
  double unset_min = 0.0;
};

inline std::vector<DensityRow> density_report(const MinimizationProblem& p,
                                              const std::vector<std::uint8_t>& config,
                                              const std::vector<double>& radii) {
  const mindetail::EnergyModel model(p);
  mindetail::check_config(model, config);
  const int W = p.frame.width, H = p.frame.height;
  const double h = p.frame.h;
  auto occupied = [&](int i, int j) {
    const std::size_t c = p.frame.index(i, j);
    return p.free_mask[c] ? config[model.free_pos[c]] != 0
                          : p.frame.occupancy[c] != 0;
  };
  auto free_cell = [&](int i, int j) {
    return i >= 0 && i < W && j >= 0 && j < H && p.free_mask[p.frame.index(i, j)];
  };
  std::vector<std::pair<int, int>> bnd;
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      if (!free_cell(i, j) || !occupied(i, j)) continue;
      const bool edge = (i > 0 && !occupied(i - 1, j)) || (i + 1 < W && !occupied(i + 1, j)) ||
                        (j > 0 && !occupied(i, j - 1)) || (j + 1 < H && !occupied(i, j + 1));
      if (edge) bnd.push_back({i, j});
    }
  std::vector<DensityRow> rows;
  for (double r : radii) {
    if (!(r > 0.0)) throw DomainError("density radius must be positive");
    const int reach = static_cast<int>(std::ceil(r / h));
    DensityRow row{r, kInf, kInf};
    bool any = false;
    for (auto [bi, bj] : bnd) {
      // every counted cell must lie inside the sampled frame; the ball may
      // reach over the fixed exterior data, which is part of the set
      if (bi - reach < 0 || bi + reach >= W || bj - reach < 0 || bj + reach >= H)
        continue;
      any = true;
      int set_count = 0, unset_count = 0;
      for (int dj = -reach; dj <= reach; ++dj)
        for (int di = -reach; di <= reach; ++di) {
          if (std::hypot(di * h, dj * h) > r) continue;
          (occupied(bi + di, bj + dj) ? set_count : unset_count)++;
        }
      row.set_min = std::min(row.set_min, set_count * h * h / (r * r));
      row.unset_min = std::min(row.unset_min, unset_count * h * h / (r * r));
    }
    if (any) rows.push_back(row);
  }
  if (rows.empty())
    throw NoInteriorBalls("no boundary cell admits an interior ball at the given radii");
  return rows;
}

// ===== Strip comparison =====

// Exterior data bounded by two horizontal levels must pin the minimizer's
// window between the same levels, up to one cell of slack.
inline bool strip_comparison_test(const MinimizationProblem& p) {
  const mindetail::EnergyModel model(p);
  const int W = p.frame.width, H = p.frame.height;
  // locate the strip from the exterior cells: everything at or below the last
  // set row must be set, everything at or above the first unset row unset
  int a_row = -1, b_row = H;
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      const std::size_t c = p.frame.index(i, j);
      if (p.free_mask[c]) continue;
      if (p.frame.occupancy[c]) a_row = std::max(a_row, j);
      else b_row = std::min(b_row, j);
    }
  for (int j = 0; j < H; ++j)
    for (int i = 0; i < W; ++i) {
      const std::size_t c = p.frame.index(i, j);
      if (p.free_mask[c]) continue;
      const bool set = p.frame.occupancy[c] != 0;
      if ((j <= a_row && !set) || (j >= b_row && set))
        throw DomainError("exterior data is not a strip");
    }

  MinimizerReport rep;
  if (model.n <= 24) {
    rep = brute_force_minimize(p);
  } else {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      MinimizerReport r = local_search_minimize(p, AnnealSchedule{}, seed);
      if (rep.configuration.empty() || r.energy < rep.energy) rep = std::move(r);
    }
  }
  for (int k = 0; k < model.n; ++k) {
    const int j = model.cell_of[k] / W;
    if (j <= a_row - 1 && !rep.configuration[k]) return false;
    if (j >= b_row + 1 && rep.configuration[k]) return false;
  }
  return true;
}

// Exterior data flipped; only possible when the unbounded remainder is a
// half-space (the complement of "none" is everything, which has no tail form).
inline MinimizationProblem complemented(const MinimizationProblem& p) {
  validate(p);
  if (!p.tail)
    throw DomainError("complement needs a half-space tail to stay representable");
  MinimizationProblem out = p;
  const std::size_t cells = p.frame.occupancy.size();
  for (std::size_t c = 0; c < cells; ++c)
    if (!p.free_mask[c]) out.frame.occupancy[c] = p.frame.occupancy[c] ? 0 : 1;
  out.tail = HalfSpace{{-p.tail->normal.x, -p.tail->normal.y}, -p.tail->offset};
  return out;
}

}  // namespace nlperim
