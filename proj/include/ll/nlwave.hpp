#pragma once

// Finite differences for  d_t^2 u = Lap u + a u^2 - f  on a box in 1+2 or
// 1+3 dimensions (the wave operator is Lap - d_t^2, so this is box u + a u^2 = f).
// Leapfrog in time, fourth-order Laplacian, zero Dirichlet ghosts.

#include "ll/core.hpp"
#include "ll/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ll {

struct GridSpec {
  int dims = 3;        // spacetime dimension, 3 or 4
  int n = 128;         // points per spatial axis
  double half = 1.0;   // box [-half, half]^(dims-1)
  double cfl = 0.5;
  double a = 1.0;
  std::function<double(const Vec3&)> a_field;  // replaces a when set

  int d() const { return dims - 1; }
  double h() const { return 2.0 * half / (n - 1); }
  double dt() const { return cfl * h(); }
  // Light-speed bound 1/sqrt(d) and the leapfrog bound for the fourth-order
  // stencil, whose symbol peaks at 16/3 per axis.
  double cfl_max() const { return std::min(1.0 / std::sqrt(d()), std::sqrt(3.0 / (4.0 * d()))); }

  void validate() const {
    if (dims != 3 && dims != 4) throw std::invalid_argument("dims must be 3 or 4");
    if (n < 8) throw std::invalid_argument("n must be at least 8");
    if (!(half > 0)) throw std::invalid_argument("half extent must be positive");
    if (!(cfl > 0) || cfl > cfl_max())
      throw std::invalid_argument("CFL violation: cfl = " + std::to_string(cfl) + " exceeds " +
                                  std::to_string(cfl_max()));
  }
};

using Field = std::vector<double>;

// Padded lattice: two ghost layers per side, kept at zero.
class Lattice {
 public:
  int d, n, np;
  double h, half;
  std::size_t size;
  std::size_t s[3] = {1, 0, 0};

  explicit Lattice(const GridSpec& g) : d(g.d()), n(g.n), np(g.n + 4), h(g.h()), half(g.half) {
    g.validate();
    s[1] = np;
    s[2] = d == 3 ? std::size_t(np) * np : 0;
    size = d == 3 ? std::size_t(np) * np * np : std::size_t(np) * np;
  }

  Field zeros() const { return Field(size, 0.0); }
  std::size_t at(int i, int j, int k = 0) const { return (i + 2) * s[0] + (j + 2) * s[1] + (d == 3 ? (k + 2) * s[2] : 0); }
  Vec3 coord(int i, int j, int k = 0) const {
    return Vec3(-half + i * h, -half + j * h, d == 3 ? -half + k * h : 0.0);
  }
  double cell_volume() const { return std::pow(h, d); }

  // fn(p, i, j, k) over interior points; slabs along the outermost axis run
  // in parallel and write disjoint outputs.
  template <class F>
  void for_interior(F&& fn) const {
    if (d == 2) {
      parallel_for(n, [&](std::size_t j) {
        for (int i = 0; i < n; ++i) fn(at(i, int(j)), i, int(j), 0);
      });
    } else {
      parallel_for(n, [&](std::size_t k) {
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i) fn(at(i, j, int(k)), i, j, int(k));
      });
    }
  }

  double lap(const double* u, std::size_t p) const {
    double acc = 0;
    for (int ax = 0; ax < d; ++ax) {
      std::size_t st = s[ax];
      acc += -u[p - 2 * st] + 16 * u[p - st] - 30 * u[p] + 16 * u[p + st] - u[p + 2 * st];
    }
    return acc / (12 * h * h);
  }

  Field sample(const std::function<double(const Vec3&)>& fn) const {
    Field f = zeros();
    for_interior([&](std::size_t p, int i, int j, int k) { f[p] = fn(coord(i, j, k)); });
    return f;
  }

  bool inside(const Vec3& x, double margin = 0) const {
    for (int ax = 0; ax < d; ++ax)
      if (std::abs(x(ax)) > half - margin) return false;
    return true;
  }

  // Multilinear interpolation; zero outside the box.
  double interp(const Field& f, const Vec3& x) const {
    double fr[3] = {0, 0, 0};
    int base[3] = {0, 0, 0};
    for (int ax = 0; ax < d; ++ax) {
      double c = (x(ax) + half) / h;
      if (c < 0 || c > n - 1) return 0.0;
      base[ax] = std::min(int(std::floor(c)), n - 2);
      fr[ax] = c - base[ax];
    }
    double acc = 0;
    int corners = 1 << d;
    for (int m = 0; m < corners; ++m) {
      double w = 1;
      int id[3] = {0, 0, 0};
      for (int ax = 0; ax < d; ++ax) {
        int bit = (m >> ax) & 1;
        id[ax] = base[ax] + bit;
        w *= bit ? fr[ax] : 1 - fr[ax];
      }
      acc += w * f[at(id[0], id[1], id[2])];
    }
    return acc;
  }
};

inline double max_abs(const Field& f) {
  double m = 0;
  for (double v : f) m = std::max(m, std::abs(v));
  return m;
}

// ---------------------------------------------------------------------------
// Coupled quadratic systems.  Field k obeys
//   d_t^2 u_k = Lap u_k + a * sum c u_i u_j - time(t) * space(x)
// which covers the single solution, the eps-hierarchy w_1..w_4 and the
// mixed-derivative fields U_S of a multi-wave expansion.

struct QuadTerm {
  int i, j;
  double c;
};

struct SourceTerm {
  std::function<double(double)> time;  // empty: no source
  Field space;
};

struct WaveSystem {
  int K = 1;
  std::vector<std::vector<QuadTerm>> quad;
  std::vector<Field> u0, v0;  // Cauchy data at t = 0 (empty: zero)
  std::vector<SourceTerm> ext;

  explicit WaveSystem(int k = 1) : K(k), quad(k), u0(k), v0(k), ext(k) {}
};

struct Snapshot {
  double t;
  int field;
  Field data;
};

struct RunOptions {
  double T = 1.0;
  std::vector<double> snap_times;
  std::vector<int> snap_fields;  // empty: all
  double blowup = 1e8;
  // Called after each step with (t_{n+1}, u^n, u^{n+1}).
  std::function<void(double, const std::vector<Field>&, const std::vector<Field>&)> hook;
};

struct RunResult {
  std::vector<Snapshot> snaps;
  int steps = 0;
  double dt = 0;
  std::vector<Field> final_prev, final_cur;

  const Field& snap(double t, int field) const {
    const Snapshot* best = nullptr;
    for (const auto& s : snaps)
      if (s.field == field && (!best || std::abs(s.t - t) < std::abs(best->t - t))) best = &s;
    if (!best) throw std::out_of_range("no snapshot for field " + std::to_string(field));
    return best->data;
  }
};

inline RunResult run_system(const GridSpec& g, const WaveSystem& sys, const RunOptions& opt) {
  Lattice L(g);
  const double dt = g.dt();
  const int K = sys.K;
  const int steps = int(std::lround(opt.T / dt));
  Field afield;
  if (g.a_field) afield = L.sample(g.a_field);
  auto a_at = [&](std::size_t p) { return g.a_field ? afield[p] : g.a; };

  std::vector<Field> cur(K), prev(K), next(K);
  for (int k = 0; k < K; ++k) {
    cur[k] = sys.u0[k].empty() ? L.zeros() : sys.u0[k];
    if (cur[k].size() != L.size) throw std::invalid_argument("Cauchy data size mismatch");
    prev[k] = L.zeros();
    next[k] = L.zeros();
  }

  // rhs_k(p) = Lap u_k + a * quad - f at the current level
  auto rhs = [&](const std::vector<Field>& u, int k, std::size_t p, double src_t) {
    double r = L.lap(u[k].data(), p);
    if (!sys.quad[k].empty()) {
      double q = 0;
      for (const auto& t : sys.quad[k]) q += t.c * u[t.i][p] * u[t.j][p];
      r += a_at(p) * q;
    }
    if (src_t != 0.0) r -= src_t * sys.ext[k].space[p];
    return r;
  };
  auto src_time = [&](int k, double t) { return sys.ext[k].time ? sys.ext[k].time(t) : 0.0; };

  // u^{-1} from the Taylor start, so u^1 = u^0 + dt v^0 + dt^2/2 rhs^0.
  for (int k = 0; k < K; ++k) {
    double st = src_time(k, 0.0);
    const Field* v0 = sys.v0[k].empty() ? nullptr : &sys.v0[k];
    L.for_interior([&](std::size_t p, int, int, int) {
      prev[k][p] = cur[k][p] - dt * (v0 ? (*v0)[p] : 0.0) + 0.5 * dt * dt * rhs(cur, k, p, st);
    });
  }

  RunResult res;
  res.dt = dt;
  res.steps = steps;
  std::vector<int> snap_steps;
  for (double t : opt.snap_times) snap_steps.push_back(int(std::lround(t / dt)));
  auto take = [&](int step, const std::vector<Field>& u) {
    for (std::size_t m = 0; m < snap_steps.size(); ++m) {
      if (snap_steps[m] != step) continue;
      for (int k = 0; k < K; ++k) {
        if (!opt.snap_fields.empty() &&
            std::find(opt.snap_fields.begin(), opt.snap_fields.end(), k) == opt.snap_fields.end())
          continue;
        res.snaps.push_back({step * dt, k, u[k]});
      }
    }
  };
  take(0, cur);

  for (int n = 0; n < steps; ++n) {
    double t = n * dt;
    for (int k = 0; k < K; ++k) {
      double st = src_time(k, t);
      Field& nx = next[k];
      const Field& c = cur[k];
      const Field& pv = prev[k];
      L.for_interior([&](std::size_t p, int, int, int) { nx[p] = 2 * c[p] - pv[p] + dt * dt * rhs(cur, k, p, st); });
    }
    std::swap(prev, cur);
    std::swap(cur, next);
    for (int k = 0; k < K; ++k) {
      double m = max_abs(cur[k]);
      if (!std::isfinite(m) || m > opt.blowup)
        throw std::runtime_error("solution diverged at t = " + std::to_string((n + 1) * dt));
    }
    if (opt.hook) opt.hook((n + 1) * dt, prev, cur);
    take(n + 1, cur);
  }
  res.final_prev = std::move(prev);
  res.final_cur = std::move(cur);
  return res;
}

// Leapfrog-conserved energy between levels n and n+1 (homogeneous linear case).
inline double discrete_energy(const GridSpec& g, const Field& un, const Field& un1) {
  Lattice L(g);
  double dt = g.dt(), kin = 0, pot = 0;
  for (std::size_t p = 0; p < L.size; ++p) {
    double v = (un1[p] - un[p]) / dt;
    kin += v * v;
  }
  std::vector<double> slab(L.n, 0.0);
  if (L.d == 2) {
    for (int j = 0; j < L.n; ++j)
      for (int i = 0; i < L.n; ++i) {
        std::size_t p = L.at(i, j);
        slab[j] -= un1[p] * L.lap(un.data(), p);
      }
  } else {
    for (int k = 0; k < L.n; ++k)
      for (int j = 0; j < L.n; ++j)
        for (int i = 0; i < L.n; ++i) {
          std::size_t p = L.at(i, j, k);
          slab[k] -= un1[p] * L.lap(un.data(), p);
        }
  }
  for (double s : slab) pot += s;
  return 0.5 * (kin + pot) * L.cell_volume();
}

// ---------------------------------------------------------------------------
// Sources.  Waves enter as Cauchy data at t = 0 (an impulsive source on the
// initial slice).  A beam is a compact pulse P(s) along s = dir.(x - c) - (t - t_hit)
// times a transverse window W(|perp(x - c)|); P = -bump' has zero mean so
// pairwise products stay localized.

inline double bump(double z) {
  if (std::abs(z) >= 1) return 0.0;
  double q = 1 - z * z;
  return q * q * q * q;
}
inline double bump_d(double z) {
  if (std::abs(z) >= 1) return 0.0;
  double q = 1 - z * z;
  return -8 * z * q * q * q;
}
inline double bump_dd(double z) {
  if (std::abs(z) >= 1) return 0.0;
  double q = 1 - z * z;
  return q * q * (56 * z * z - 8);
}

struct BeamSpec {
  Vec3 dir = Vec3::UnitX();      // unit spatial direction
  Vec3 through = Vec3::Zero();   // central ray passes here at t_hit
  double t_hit = 0;
  double width = 0.05;           // pulse half-width
  double window = kInf;          // transverse half-width s0
  double amp = 1.0;
  Vec3 shift = Vec3::Zero();     // translation of the whole beam

  Vec3 center() const { return through + shift; }
  double phase(double t, const Vec3& x) const { return dir.dot(x - center()) - (t - t_hit); }
  double transverse(const Vec3& x) const {
    Vec3 r = x - center();
    return (r - dir.dot(r) * dir).norm();
  }
  double win(const Vec3& x) const { return std::isinf(window) ? 1.0 : bump(transverse(x) / window); }
  // u and d_t u of the free beam at time t (exact only for window = inf)
  double u(double t, const Vec3& x) const { return amp * -bump_d(phase(t, x) / width) * win(x); }
  double ut(double t, const Vec3& x) const {
    return amp * bump_dd(phase(t, x) / width) / width * win(x);
  }
  // spacetime point on the central ray at time t
  Vec3 axis(double t) const { return center() + (t - t_hit) * dir; }
};

inline void validate_beams(const GridSpec& g, const std::vector<BeamSpec>& beams) {
  Lattice L(g);
  for (std::size_t j = 0; j < beams.size(); ++j) {
    const auto& b = beams[j];
    if (std::abs(b.dir.norm() - 1) > 1e-12) throw std::invalid_argument("beam " + std::to_string(j) + ": dir not unit");
    if (g.d() == 2 && b.dir(2) != 0) throw std::invalid_argument("beam " + std::to_string(j) + ": dir has a z part in 1+2");
    if (b.width < 2 * L.h) throw std::invalid_argument("beam " + std::to_string(j) + ": width below two cells");
    if (!(b.t_hit > 0)) throw std::invalid_argument("beam " + std::to_string(j) + ": t_hit must be positive");
    if (!L.inside(b.axis(0), b.width + 3 * L.h))
      throw std::invalid_argument("beam " + std::to_string(j) + ": initial pulse leaves the box");
  }
}

inline void beam_data(const Lattice& L, const BeamSpec& b, Field& u0, Field& v0) {
  u0 = L.sample([&](const Vec3& x) { return b.u(0, x); });
  v0 = L.sample([&](const Vec3& x) { return b.ut(0, x); });
}

// ---------------------------------------------------------------------------

inline RunResult linear_solve(const GridSpec& g, const SourceTerm& f, const RunOptions& opt) {
  WaveSystem sys(1);
  sys.ext[0] = f;
  GridSpec lin = g;
  lin.a = 0;
  lin.a_field = nullptr;
  return run_system(lin, sys, opt);
}

// Born terms w_1..w_4 of the eps-expansion of the solution with data eps*(u0, v0)
// and source eps*f:  d_t^2 w_k = Lap w_k + a sum_{i+j=k} w_i w_j.
inline WaveSystem born_system(const Field& u0, const Field& v0, const SourceTerm& f = {}) {
  WaveSystem sys(4);
  sys.u0[0] = u0;
  sys.v0[0] = v0;
  sys.ext[0] = f;
  for (int k = 2; k <= 4; ++k)
    for (int i = 1; i < k; ++i) sys.quad[k - 1].push_back({i - 1, k - i - 1, 1.0});
  return sys;
}

inline RunResult born_terms(const GridSpec& g, const Field& u0, const Field& v0, const RunOptions& opt,
                            const SourceTerm& f = {}) {
  return run_system(g, born_system(u0, v0, f), opt);
}

// Mixed-derivative fields U_S, S a nonempty subset of m waves (field index
// S - 1):  d_t^2 U_S = Lap U_S + a sum_{A subset S, A != 0, S} U_A U_{S\A}.
// U_{1..m} is d_eps1 ... d_epsm u at eps = 0.
inline WaveSystem subset_system(const std::vector<Field>& u0, const std::vector<Field>& v0) {
  int m = int(u0.size());
  int K = (1 << m) - 1;
  WaveSystem sys(K);
  for (int j = 0; j < m; ++j) {
    sys.u0[(1 << j) - 1] = u0[j];
    sys.v0[(1 << j) - 1] = v0[j];
  }
  for (int S = 1; S <= K; ++S)
    for (int A = (S - 1) & S; A > 0; A = (A - 1) & S) sys.quad[S - 1].push_back({A - 1, (S ^ A) - 1, 1.0});
  return sys;
}

inline RunResult nonlinear_solve(const GridSpec& g, const Field& u0, const Field& v0, double eps,
                                 const RunOptions& opt, const SourceTerm& f = {}) {
  WaveSystem sys(1);
  sys.u0[0] = u0;
  sys.v0[0] = v0;
  for (auto& x : sys.u0[0]) x *= eps;
  for (auto& x : sys.v0[0]) x *= eps;
  if (f.time) {
    sys.ext[0].space = f.space;
    sys.ext[0].time = [tf = f.time, eps](double t) { return eps * tf(t); };
  }
  sys.quad[0].push_back({0, 0, 1.0});
  return run_system(g, sys, opt);
}

struct RemainderReport {
  std::vector<double> eps, remainder;  // sup norm of u - sum_{k<=4} eps^k w_k at T
  double exponent = 0;                 // two-point fit on the last pair
};

inline RemainderReport remainder_scaling(const GridSpec& g, const Field& u0, const Field& v0,
                                         const std::vector<double>& eps, double T) {
  if (eps.size() < 2) throw std::invalid_argument("need at least two eps values");
  RunOptions o;
  o.T = T;
  auto born = born_terms(g, u0, v0, o);
  RemainderReport rep;
  for (double e : eps) {
    auto nl = nonlinear_solve(g, u0, v0, e, o);
    const Field& u = nl.final_cur[0];
    double r = 0;
    for (std::size_t p = 0; p < u.size(); ++p) {
      double s = 0, ek = 1;
      for (int k = 0; k < 4; ++k) {
        ek *= e;
        s += ek * born.final_cur[k][p];
      }
      r = std::max(r, std::abs(u[p] - s));
    }
    rep.eps.push_back(e);
    rep.remainder.push_back(r);
  }
  std::size_t n = eps.size();
  rep.exponent = std::log(rep.remainder[n - 1] / rep.remainder[n - 2]) / std::log(eps[n - 1] / eps[n - 2]);
  return rep;
}

// ---------------------------------------------------------------------------
// Ridges of |grad u|: local maxima along the gradient direction, refined to
// sub-cell position by a parabola.  The threshold is theta times the slice's
// amplitude converted to a gradient scale by the mollification width
// sigma_m, so smooth features of width >> sigma_m do not register.

struct RidgePoint {
  Vec3 x;
  double g;
};

struct RidgeOptions {
  double theta = 0.25;
  double sigma_cells = 2.0;
  int nms_cells = 1;  // suppression reach along the gradient
  int edge_cells = 4;
  std::function<bool(const Vec3&)> masked;  // excluded from the scan and the slice max
  double abs_threshold = 0;                 // floor on the threshold
};

struct RidgeResult {
  std::vector<RidgePoint> points;
  double threshold = 0;
  double slice_max = 0;
};

inline RidgeResult wavefront_detect(const GridSpec& g, const Field& u, const RidgeOptions& opt = {}) {
  Lattice L(g);
  const int n = L.n, d = L.d, e = opt.edge_cells;
  Field G = L.zeros();
  std::vector<Vec3> grad(L.size, Vec3::Zero());
  L.for_interior([&](std::size_t p, int, int, int) {
    Vec3 gr = Vec3::Zero();
    for (int ax = 0; ax < d; ++ax) gr(ax) = (u[p + L.s[ax]] - u[p - L.s[ax]]) / (2 * L.h);
    grad[p] = gr;
    G[p] = gr.norm();
  });
  auto usable = [&](int i, int j, int k) {
    if (i < e || j < e || i >= n - e || j >= n - e) return false;
    if (d == 3 && (k < e || k >= n - e)) return false;
    return !(opt.masked && opt.masked(L.coord(i, j, k)));
  };
  RidgeResult res;
  double umax = 0;
  int kmax = d == 3 ? n : 1;
  for (int k = 0; k < kmax; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        if (usable(i, j, k)) umax = std::max(umax, std::abs(u[L.at(i, j, k)]));
  res.slice_max = umax;
  res.threshold = std::max(opt.abs_threshold, opt.theta * umax / (opt.sigma_cells * L.h));
  if (!(res.threshold > 0)) return res;

  std::vector<std::vector<RidgePoint>> slabs(d == 3 ? n : n);
  auto scan = [&](int i, int j, int k, std::vector<RidgePoint>& out) {
    if (!usable(i, j, k)) return;
    std::size_t p = L.at(i, j, k);
    double g0 = G[p];
    if (g0 < res.threshold) return;
    Vec3 dir = grad[p] / g0;
    Vec3 x = L.coord(i, j, k);
    for (int r = 2; r <= opt.nms_cells; ++r)
      if (L.interp(G, x + r * L.h * dir) > g0 || L.interp(G, x - r * L.h * dir) >= g0) return;
    double gp = L.interp(G, x + L.h * dir), gm = L.interp(G, x - L.h * dir);
    if (!(g0 >= gp && g0 > gm)) return;
    double den = gm - 2 * g0 + gp, off = 0;
    if (den < 0) off = std::clamp(0.5 * (gm - gp) / den, -0.5, 0.5);
    out.push_back({x + off * L.h * dir, g0});
  };
  if (d == 2) {
    parallel_for(n, [&](std::size_t j) {
      for (int i = 0; i < n; ++i) scan(i, int(j), 0, slabs[j]);
    });
  } else {
    parallel_for(n, [&](std::size_t k) {
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) scan(i, j, int(k), slabs[k]);
    });
  }
  for (auto& s : slabs) res.points.insert(res.points.end(), s.begin(), s.end());
  return res;
}

// ---------------------------------------------------------------------------
// Multi-wave interaction.  m beams whose central rays meet at (t_q, x_q); the
// top mixed field U_{1..m} is ridge-scanned on late slices away from the beam
// strips, and the detected front is compared with the light cone of q.

// Flat-space condition (I): the central rays have a common point q and y lies
// on the future light cone of q.  Returns q when the rays meet.
inline std::optional<std::pair<double, Vec3>> rays_common_point(const std::vector<BeamSpec>& beams,
                                                                double tol = 1e-9) {
  // unknowns (t, x); each ray gives x - dir t = center - dir t_hit
  Eigen::MatrixXd A(3 * beams.size(), 4);
  Eigen::VectorXd rhs(3 * beams.size());
  for (std::size_t j = 0; j < beams.size(); ++j) {
    const auto& b = beams[j];
    for (int r = 0; r < 3; ++r) {
      A.row(3 * j + r).setZero();
      A(3 * j + r, 0) = -b.dir(r);
      A(3 * j + r, 1 + r) = 1.0;
      rhs(3 * j + r) = b.center()(r) - b.dir(r) * b.t_hit;
    }
  }
  Eigen::Vector4d sol = A.colPivHouseholderQr().solve(rhs);
  double res = (A * sol - rhs).norm();
  if (res > tol * (1 + rhs.norm())) return std::nullopt;
  return std::make_pair(sol(0), Vec3(sol.tail<3>()));
}

inline bool condition_I_flat(const std::vector<BeamSpec>& beams, double t, const Vec3& y, double tol) {
  auto q = rays_common_point(beams);
  if (!q) return false;
  double dt = t - q->first;
  return dt > 0 && std::abs((y - q->second).norm() - dt) <= tol;
}

struct InteractionConfig {
  GridSpec grid;
  std::vector<BeamSpec> beams;
  Vec3 x_q = Vec3::Zero();  // nominal meeting point, used for probe placement
  double t_q = 1.0;
  std::vector<double> slices;  // late times; the run stops at the last one
  double theta = 0.25;
  double mask_cells = 6;       // strip half-width beyond the pulse, in cells
  int probe_dirs = 48;
  std::vector<double> abs_thresholds;  // per slice; the negative control reuses the positive run's
  // Emitted fronts carry side lobes about one pulse width out; suppression
  // and the amplitude-to-gradient scale follow the pulse width.
  double nms_width_frac = 0.6;
  bool keep_snapshots = false;
};

enum class Verdict { False = 0, True = 1, Untested = 2 };

struct ProbeResult {
  double t;
  Vec3 y;
  bool on_cone;
  Verdict D, I;
};

struct SliceReport {
  double t;
  RidgeResult ridges;
  double frac_on_cone = 0;  // ridge points within 2h of the cone of q
  double max_cone_dist = 0;
  double coverage = 0;      // tested on-cone probes with D true
};

struct InteractionResult {
  std::vector<SliceReport> slices;
  std::vector<ProbeResult> probes;
  bool front_detected = false;
  double agreement = 0;  // D == I over tested probes
  int tested = 0, untested = 0;
  double h = 0;
  std::vector<Snapshot> snapshots;  // top field at the slices, when kept
};

inline bool in_strips(const std::vector<BeamSpec>& beams, double t, const Vec3& x, double h, double cells) {
  for (const auto& b : beams) {
    double pad = cells * h;
    if (std::abs(b.phase(t, x)) < b.width + pad && (std::isinf(b.window) || b.transverse(x) < b.window + pad))
      return true;
  }
  return false;
}

inline std::vector<Vec3> probe_directions(int d, int m) {
  std::vector<Vec3> out;
  if (d == 2) {
    for (int i = 0; i < m; ++i) {
      double a = 2 * kPi * (i + 0.5) / m;
      out.emplace_back(std::cos(a), std::sin(a), 0.0);
    }
  } else {
    double ga = kPi * (3 - std::sqrt(5.0));
    for (int i = 0; i < m; ++i) {
      double z = 1 - 2 * (i + 0.5) / m, r = std::sqrt(1 - z * z);
      out.emplace_back(r * std::cos(ga * i), r * std::sin(ga * i), z);
    }
  }
  return out;
}

inline InteractionResult interaction_experiment(const InteractionConfig& cfg) {
  const GridSpec& g = cfg.grid;
  Lattice L(g);
  validate_beams(g, cfg.beams);
  int m = int(cfg.beams.size());
  if (m < 2 || m > 4) throw std::invalid_argument("interaction needs 2 to 4 beams");
  if (cfg.slices.empty()) throw std::invalid_argument("no slices requested");
  std::vector<Field> u0(m), v0(m);
  for (int j = 0; j < m; ++j) beam_data(L, cfg.beams[j], u0[j], v0[j]);
  WaveSystem sys = subset_system(u0, v0);
  RunOptions o;
  o.T = *std::max_element(cfg.slices.begin(), cfg.slices.end());
  o.snap_times = cfg.slices;
  o.snap_fields = {sys.K - 1};
  auto run = run_system(g, sys, o);

  InteractionResult res;
  res.h = L.h;
  const double tol = 2 * L.h;
  auto dirs = probe_directions(L.d, cfg.probe_dirs);
  int agree = 0;
  for (double t : cfg.slices) {
    SliceReport sr;
    sr.t = t;
    RidgeOptions ro;
    ro.theta = cfg.theta;
    std::size_t si = res.slices.size();
    ro.abs_threshold = si < cfg.abs_thresholds.size() ? cfg.abs_thresholds[si] : 0.0;
    double wcells = cfg.beams[0].width / L.h;
    ro.nms_cells = std::max(1, int(std::lround(cfg.nms_width_frac * wcells)));
    ro.sigma_cells = std::max(2.0, 0.2 * wcells);
    ro.masked = [&](const Vec3& x) { return in_strips(cfg.beams, t, x, L.h, cfg.mask_cells); };
    sr.ridges = wavefront_detect(g, run.snap(t, sys.K - 1), ro);
    double R = t - cfg.t_q;
    int near = 0;
    for (const auto& p : sr.ridges.points) {
      double dist = std::abs((p.x - cfg.x_q).norm() - R);
      sr.max_cone_dist = std::max(sr.max_cone_dist, dist);
      if (dist <= tol) ++near;
    }
    sr.frac_on_cone = sr.ridges.points.empty() ? 0.0 : double(near) / sr.ridges.points.size();

    auto D_at = [&](const Vec3& y) {
      for (const auto& p : sr.ridges.points)
        if ((p.x - y).norm() <= tol) return true;
      return false;
    };
    int on_tested = 0, on_hit = 0;
    for (const auto& n : dirs)
      for (double f : {1.0, 0.55, 1.3}) {
        Vec3 y = cfg.x_q + f * R * n;
        ProbeResult pr{t, y, f == 1.0, Verdict::Untested, Verdict::Untested};
        bool testable = L.inside(y, (ro.edge_cells + 2) * L.h) && !ro.masked(y) && R > 0;
        if (!testable) {
          if (L.inside(y)) {
            res.probes.push_back(pr);
            ++res.untested;
          }
          continue;
        }
        pr.D = D_at(y) ? Verdict::True : Verdict::False;
        pr.I = condition_I_flat(cfg.beams, t, y, tol) ? Verdict::True : Verdict::False;
        ++res.tested;
        if (pr.D == pr.I) ++agree;
        if (pr.on_cone) {
          ++on_tested;
          if (pr.D == Verdict::True) ++on_hit;
        }
        res.probes.push_back(pr);
      }
    sr.coverage = on_tested ? double(on_hit) / on_tested : 0.0;
    res.slices.push_back(std::move(sr));
  }
  res.agreement = res.tested ? double(agree) / res.tested : 0.0;
  if (cfg.keep_snapshots) res.snapshots = std::move(run.snaps);
  res.front_detected = true;
  for (const auto& s : res.slices)
    if (s.ridges.points.empty() || s.frac_on_cone < 0.95 || s.coverage < 0.9) res.front_detected = false;
  return res;
}

// Beams through x_q at time t_q from evenly spread directions; used by the
// experiments and the CLI.
inline std::vector<BeamSpec> beams_through(int d, int m, const Vec3& x_q, double t_q, double width, double window) {
  std::vector<Vec3> dirs;
  if (d == 2) {
    for (int j = 0; j < m; ++j) {
      double a = 2 * kPi * j / m + 0.3;
      dirs.emplace_back(std::cos(a), std::sin(a), 0.0);
    }
  } else {
    const double s = 1 / std::sqrt(3.0);
    Vec3 tet[4] = {Vec3(s, s, s), Vec3(s, -s, -s), Vec3(-s, s, -s), Vec3(-s, -s, s)};
    for (int j = 0; j < m; ++j) dirs.push_back(tet[j % 4]);
  }
  std::vector<BeamSpec> out;
  for (const auto& dir : dirs) {
    BeamSpec b;
    b.dir = dir;
    b.through = x_q;
    b.t_hit = t_q;
    b.width = width;
    b.window = window;
    out.push_back(b);
  }
  return out;
}

// Shifts beam j sideways by `by` so the central rays no longer share a point.
// In 1+3 the sideways direction is the one that moves the initial pulse
// toward the box centre along the diagonal least used by the start point.
inline void translate_beam(std::vector<BeamSpec>& beams, int j, double by) {
  Vec3 dir = beams[j].dir;
  Vec3 perp;
  if (dir(2) == 0) {
    perp = Vec3(-dir(1), dir(0), 0);
  } else {
    Vec3 s = dir.cwiseSign();
    perp = -s + 3.0 * s(2) * Vec3::UnitZ();  // (a, b, -2c) pattern, orthogonal to +-(1,1,1) types
    perp -= perp.dot(dir) * dir;
  }
  beams[j].shift = by * perp.normalized();
}

// Same experiment with beam j translated; ridges are thresholded at the
// positive run's levels so weak residual interaction does not count as a front.
inline InteractionResult negative_control(InteractionConfig cfg, const InteractionResult& positive, int j,
                                          double by) {
  translate_beam(cfg.beams, j, by);
  cfg.abs_thresholds.clear();
  cfg.keep_snapshots = false;
  for (const auto& s : positive.slices) cfg.abs_thresholds.push_back(s.ridges.threshold);
  return interaction_experiment(cfg);
}

}  // namespace ll
