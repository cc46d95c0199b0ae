#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ll/geodesic.hpp"
#include "ll/observation.hpp"
#include "ll/parallel.hpp"

namespace ll {

// A future null vector with its base point; xi is g+-unit.
struct NullEntry {
  Point x;
  Vec4 xi = Vec4::Zero();
};

struct FourTuple {
  std::array<NullEntry, 4> e;
  double t0 = 0.4;
  double theta1 = 0.2;
};

struct ActiveParams {
  Region U = Region::everywhere();  // observation neighbourhood; only bounds kappa1
  double theta1 = 0.2;
  double t0 = 0.4;
  double kappa2 = 0.125;
  double max_param = 12.0;  // forward reach of tuple geodesics past t0
  double tol_q = 1e-6;      // pairwise closest approach accepted as a crossing
  double tol_tau = 1e-5;    // tau below this counts as "before the cut point"
};

struct EarliestSurface {
  std::vector<double> times;  // f+_a(q) per observer; empty when no q
  std::vector<char> boundary;
  std::optional<Point> q;
  double r = std::numeric_limits<double>::quiet_NaN();  // parameter on the probing geodesic, if any

  bool empty() const { return times.empty(); }
};

inline double surface_distance(const EarliestSurface& a, const EarliestSurface& b) {
  if (a.empty() || b.empty() || a.times.size() != b.times.size()) return kInf;
  double d = 0;
  for (std::size_t i = 0; i < a.times.size(); ++i) d = std::max(d, std::abs(a.times[i] - b.times[i]));
  return d;
}

inline NullEntry make_entry(const MetricSpec& m, const Point& x, const Vec3& spatial) {
  Vec4 xi = null_complete(m, x, spatial.normalized());
  return {x, detail::gplus_unit(m, x, xi)};
}

inline std::optional<NullEntry> flow(const MetricSpec& m, const NullEntry& e, double t) {
  auto r = exp_point(m, e.x, e.xi, t);
  if (!r) return std::nullopt;
  return NullEntry{r->first, r->second};
}

// Coordinate stand-in for the Sasaki distance: point distance and the g+ norm of
// the direction difference, both in the chart of a.
inline double sasaki_dist(const MetricSpec& m, const NullEntry& a, const NullEntry& b) {
  double dx = gplus_dist(m, a.x, b.x);
  Vec4 dv = tangent_to_chart(b.x, b.xi, a.x.chart) - a.xi;
  return std::hypot(dx, gplus_norm(m, a.x, dv));
}

// ------------------------------------------------------------ admissibility

struct Admissibility {
  bool ok = false;
  bool chronology = false;  // no x_j(t0) in the causal future of another
  bool spread = false;      // pairwise distance below theta1
  bool axis = false;        // all entries close to one point of the distinguished worldline
  double max_spread = 0.0;
  double axis_dist = kInf;
  double s_hat = 0.0;
  std::vector<std::string> failed;
};

namespace detail {

inline std::pair<double, double> closest_on_hat(const ObserverFamily& f, const std::vector<Point>& pts) {
  const MetricSpec& m = f.spec;
  auto worst = [&](double s) {
    Point h = f.hat().point(s);
    double d = 0;
    for (auto& p : pts) d = std::max(d, gplus_dist(m, h, p));
    return d;
  };
  int n = 400;
  double bs = -1, bd = kInf;
  for (int i = 0; i <= n; ++i) {
    double s = -1.0 + 2.0 * i / n, d = worst(s);
    if (d < bd) bd = d, bs = s;
  }
  double lo = std::max(-1.0, bs - 2.0 / n), hi = std::min(1.0, bs + 2.0 / n);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 50; ++it) {
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    if (worst(a) < worst(b)) hi = b;
    else lo = a;
  }
  double s = 0.5 * (lo + hi);
  return {s, std::min(bd, worst(s))};
}

}  // namespace detail

inline Admissibility admissible_tuple(const ObserverFamily& f, const FourTuple& T, bool check_axis = true) {
  const MetricSpec& m = f.spec;
  Admissibility a;
  std::array<Point, 4> moved;
  for (int j = 0; j < 4; ++j) {
    auto e = flow(m, T.e[j], T.t0);
    if (!e) throw std::runtime_error("admissible_tuple: geodesic flow failed for entry " + std::to_string(j));
    moved[j] = e->x;
  }
  a.chronology = true;
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k)
      if (j != k && chronological_relation(m, moved[k], moved[j]) != Relation::Unrelated) a.chronology = false;
  for (int j = 0; j < 4; ++j)
    for (int k = j + 1; k < 4; ++k) a.max_spread = std::max(a.max_spread, sasaki_dist(m, T.e[j], T.e[k]));
  a.spread = a.max_spread < T.theta1;
  if (check_axis) {
    std::vector<Point> pts;
    for (auto& e : T.e) pts.push_back(e.x);
    auto [s, d] = detail::closest_on_hat(f, pts);
    a.s_hat = s;
    a.axis_dist = d;
    a.axis = d < T.theta1;
  } else {
    a.axis = true;
  }
  if (!a.chronology) a.failed.push_back("chronology");
  if (!a.spread) a.failed.push_back("spread");
  if (!a.axis) a.failed.push_back("axis");
  a.ok = a.failed.empty();
  return a;
}

// ------------------------------------------------------------------ kappas

struct KappaOptions {
  int levels = 10;
  int dirs = 100;
  double safety = 0.5;
  double max_param = 12.0;
};

struct Kappas {
  double kappa1 = 0, kappa2 = 0, t0 = 0;
  double rho_min = kInf;
  double eps1 = kInf;  // infinite when no sampled geodesic has a cut point
  int samples = 0, with_cut = 0;
};

inline std::vector<Vec3> sphere_points(int n) {
  std::vector<Vec3> out;
  const double ga = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n, r = std::sqrt(1 - z * z);
    out.emplace_back(r * std::cos(ga * i), r * std::sin(ga * i), z);
  }
  return out;
}

// Sampled infima over the unit null bundle above the distinguished worldline
// between s- and s+. rho falls back to the exit parameter of U when no cut
// point is found.
inline Kappas estimate_kappas(const ObserverFamily& f, const Region& U, const KappaOptions& o = {}) {
  const MetricSpec& m = f.spec;
  Kappas k;
  auto dirs = sphere_points(o.dirs);
  std::size_t n = std::size_t(o.levels) * dirs.size();
  std::vector<double> rho(n), eps(n, kInf);
  CutOptions co;
  co.max_param = o.max_param;
  co.region = U;
  double t_top = f.hat().point(1.0).t();
  auto entry = [&](std::size_t i) {
    int l = int(i / dirs.size());
    double s = o.levels == 1 ? f.par.s_m : f.par.s_m + (f.par.s_p - f.par.s_m) * l / (o.levels - 1);
    return std::make_pair(s, make_entry(m, f.hat().point(s), dirs[i % dirs.size()]));
  };
  std::vector<char> cut(n, 0);
  parallel_for(n, [&](std::size_t i) {
    auto [s, e] = entry(i);
    CutRecord c = cut_time(m, e.x, e.xi, co);
    rho[i] = c.rho;
    cut[i] = !c.no_cut_in_region;
  });
  for (std::size_t i = 0; i < n; ++i) k.rho_min = std::min(k.rho_min, rho[i]);
  k.kappa1 = o.safety * k.rho_min / 5.0;
  // growth of f- from x to points past the cut point of the ray restarted at x(kappa1)
  parallel_for(n, [&](std::size_t i) {
    if (!cut[i]) return;
    auto [s, e] = entry(i);
    auto e1 = flow(m, e, k.kappa1);
    if (!e1) return;
    CutRecord c = cut_time(m, e1->x, detail::gplus_unit(m, e1->x, e1->xi), co);
    if (c.no_cut_in_region) return;
    auto p = exp_point(m, e.x, e.xi, k.kappa1 + c.rho / gplus_norm(m, e1->x, e1->xi));
    if (p && p->first.t() <= t_top) eps[i] = earliest_obs_time(f, f.a_hat, p->first, -1).s - s;
  });
  for (std::size_t i = 0; i < n; ++i)
    if (eps[i] < kInf) {
      ++k.with_cut;
      k.eps1 = std::min(k.eps1, eps[i]);
    }
  k.samples = int(n);
  k.t0 = 4.0 * k.kappa1;
  k.kappa2 = k.eps1 < kInf ? o.safety * k.eps1 / 4.0 : o.safety * (f.par.s_p - f.par.s_m) / 4.0;
  return k;
}

inline ActiveParams make_params(const ObserverFamily& f, const Region& U, double theta1, const KappaOptions& o = {}) {
  Kappas k = estimate_kappas(f, U, o);
  ActiveParams p;
  p.U = U;
  p.theta1 = theta1;
  p.t0 = k.t0;
  p.kappa2 = k.kappa2;
  p.max_param = o.max_param;
  return p;
}

// -------------------------------------------------------------- intersection

struct Intersection {
  Point q;
  std::array<double, 4> t{};  // parameters past x_j(t0)
  bool before_cut = false;
};

namespace detail {

struct Ray {
  GeodesicPath path;
  double lo = 0, hi = 0;
};

inline double coord_dist(const Point& a, const Point& b) { return chart_diff(a, b).norm(); }

// Gauss-Newton on (s, u) for the closest approach of two rays.
inline std::tuple<double, double, double> pair_newton(const MetricSpec& m, const Ray& A, const Ray& B, double s, double u) {
  for (int it = 0; it < 40; ++it) {
    auto [pa, va] = A.path.at(s);
    auto [pb, vb] = B.path.at(u);
    Vec4 F = chart_diff(pb, pa);
    Eigen::Matrix<double, 4, 2> J;
    J.col(0) = -va;
    J.col(1) = tangent_to_chart(pb, vb, pa.chart);
    Eigen::Vector2d d = J.colPivHouseholderQr().solve(-F);
    if (!d.allFinite()) break;
    double s1 = std::clamp(s + d(0), A.lo, A.hi), u1 = std::clamp(u + d(1), B.lo, B.hi);
    bool done = std::abs(s1 - s) + std::abs(u1 - u) < 1e-15;
    s = s1, u = u1;
    if (done) break;
  }
  return {s, u, gplus_dist(m, A.path.at(s).first, B.path.at(u).first)};
}

inline std::pair<double, double> closest_param(const MetricSpec& m, const Ray& A, const Point& c, int grid = 80) {
  double bs = A.lo, bd = kInf;
  for (int i = 0; i <= grid; ++i) {
    double s = A.lo + (A.hi - A.lo) * i / grid;
    double d = coord_dist(A.path.at(s).first, c);
    if (d < bd) bd = d, bs = s;
  }
  double s = bs;
  for (int it = 0; it < 40; ++it) {
    auto [p, v] = A.path.at(s);
    Vec4 F = chart_diff(p, c);
    Vec4 w = tangent_to_chart(p, v, c.chart);
    double ds = -F.dot(w) / w.dot(w);
    double s1 = std::clamp(s + ds, A.lo, A.hi);
    bool done = std::abs(s1 - s) < 1e-15;
    s = s1;
    if (done) break;
  }
  return {s, gplus_dist(m, A.path.at(s).first, c)};
}

}  // namespace detail

// Earliest point common to the four rays gamma_{x_j(t0), xi_j(t0)}((0, max_param)),
// without the cut-point check.
inline std::optional<Intersection> common_point(const MetricSpec& m, const FourTuple& T, const ActiveParams& P) {
  std::array<detail::Ray, 4> R;
  for (int j = 0; j < 4; ++j) {
    R[j].path = integrate_geodesic(m, T.e[j].x, T.e[j].xi, T.t0 + P.max_param);
    if (R[j].path.term == Termination::SolverFailure) return std::nullopt;
    R[j].lo = T.t0;
    R[j].hi = R[j].path.end();
    if (R[j].hi <= R[j].lo) return std::nullopt;
  }
  const int N = 80;
  std::vector<Point> a(N + 1), b(N + 1);
  for (int i = 0; i <= N; ++i) {
    a[i] = R[0].path.at(R[0].lo + (R[0].hi - R[0].lo) * i / N).first;
    b[i] = R[1].path.at(R[1].lo + (R[1].hi - R[1].lo) * i / N).first;
  }
  std::vector<double> D((N + 1) * (N + 1));
  for (int i = 0; i <= N; ++i)
    for (int k = 0; k <= N; ++k) D[i * (N + 1) + k] = detail::coord_dist(b[k], a[i]);
  struct Cand {
    double d;
    int i, k;
  };
  std::vector<Cand> cands;
  for (int i = 0; i <= N; ++i)
    for (int k = 0; k <= N; ++k) {
      double d = D[i * (N + 1) + k];
      bool min = true;
      for (int di = -1; di <= 1 && min; ++di)
        for (int dk = -1; dk <= 1; ++dk) {
          int ii = i + di, kk = k + dk;
          if ((di || dk) && ii >= 0 && ii <= N && kk >= 0 && kk <= N && D[ii * (N + 1) + kk] < d) {
            min = false;
            break;
          }
        }
      if (min) cands.push_back({d, i, k});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d < y.d; });
  if (cands.size() > 12) cands.resize(12);
  std::vector<Intersection> found;
  for (auto& c : cands) {
    double s0 = R[0].lo + (R[0].hi - R[0].lo) * c.i / N, u0 = R[1].lo + (R[1].hi - R[1].lo) * c.k / N;
    auto [s, u, res] = detail::pair_newton(m, R[0], R[1], s0, u0);
    if (res > P.tol_q || s <= R[0].lo + 1e-12 || u <= R[1].lo + 1e-12) continue;
    Intersection I;
    I.q = R[0].path.at(s).first;
    I.t[0] = s - T.t0;
    I.t[1] = u - T.t0;
    bool ok = true;
    for (int j = 2; j < 4 && ok; ++j) {
      auto [sj, dj] = detail::closest_param(m, R[j], I.q);
      ok = dj < P.tol_q && sj > R[j].lo + 1e-12;
      I.t[j] = sj - T.t0;
    }
    if (!ok) continue;
    bool dup = false;
    for (auto& g : found) dup |= gplus_dist(m, g.q, I.q) < 10 * P.tol_q;
    if (!dup) found.push_back(I);
  }
  if (found.empty()) return std::nullopt;
  auto it = std::min_element(found.begin(), found.end(), [](auto& x, auto& y) { return x.t[0] < y.t[0]; });
  return *it;
}

// The crossing q of the four rays, returned only when it lies before the first
// cut point of every ray (tau from x_j(t0) to q vanishes exactly up to there).
inline std::optional<Intersection> intersection_point(const MetricSpec& m, const FourTuple& T, const ActiveParams& P) {
  auto I = common_point(m, T, P);
  if (!I) return std::nullopt;
  for (int j = 0; j < 4; ++j) {
    auto e = flow(m, T.e[j], T.t0);
    if (!e) return std::nullopt;
    if (time_separation(m, e->x, I->q) > P.tol_tau) return std::nullopt;
  }
  I->before_cut = true;
  return I;
}

// ------------------------------------------------------------- condition (I)

struct ConditionI {
  bool holds = false;
  std::optional<Point> q;
  Vec4 zeta = Vec4::Zero();
  double t = 0.0;
};

inline ConditionI condition_I(const ObserverFamily& f, const Point& y, const FourTuple& T, const ActiveParams& P) {
  const MetricSpec& m = f.spec;
  ConditionI c;
  auto I = intersection_point(m, T, P);
  if (!I) return c;
  c.q = I->q;
  if (gplus_dist(m, I->q, y) < 1e-12) {
    c.holds = true;
    return c;
  }
  auto conn = null_connect(m, I->q, y);
  if (conn.empty()) return c;
  c.holds = true;
  c.zeta = conn.front().xi;
  c.t = conn.front().arrival;
  return c;
}

// ----------------------------------------------------------------- surfaces

inline EarliestSurface surface_S_e(const ObserverFamily& f, const FourTuple& T, const ActiveParams& P) {
  EarliestSurface S;
  auto I = intersection_point(f.spec, T, P);
  if (!I) return S;
  auto rec = earliest_light_obs_set(f, I->q);
  S.times = rec.times;
  S.boundary = rec.boundary;
  S.q = I->q;
  return S;
}

// --------------------------------------------------------------- S function

struct SValue {
  double value = 0.0;
  double r1 = kInf, r2 = kInf, r0 = kInf;
  std::optional<Point> q0;
  bool meets = false;  // the ray meets J+(mu(s1)) inside J-(p+)
};

namespace detail {

inline GeodesicPath probe_path(const ObserverFamily& f, const NullEntry& yz, double max_param) {
  Region R;
  R.tmax = f.hat().point(f.par.s_p2).t() + 1e-6;
  auto p = integrate_geodesic(f.spec, yz.x, yz.xi, max_param, R);
  if (p.term == Termination::SolverFailure) throw std::runtime_error("probe geodesic integration failed");
  return p;
}

inline double hat_clearance(const ObserverFamily& f, const GeodesicPath& p, int samples = 400) {
  auto dist = [&](double r) {
    Point x = p.at(r).first;
    auto s = f.hat().param_at_time(x.t());
    return s ? gplus_dist(f.spec, f.hat().point(*s), x) : kInf;
  };
  double h = p.end() / samples, best = kInf, rb = 0;
  for (int i = 0; i <= samples; ++i) {
    double d = dist(h * i);
    if (d < best) best = d, rb = h * i;
  }
  double lo = std::max(0.0, rb - h), hi = std::min(p.end(), rb + h);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 60; ++it) {
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    if (dist(a) < dist(b)) hi = b;
    else lo = a;
  }
  return std::min(best, dist(0.5 * (lo + hi)));
}

// smallest r in [0, end] with pred(r), for a predicate that stays true once true
template <class Pred>
double first_true(const GeodesicPath& p, Pred pred, int iters = 60) {
  if (pred(0.0)) return 0.0;
  double hi = p.end();
  if (!pred(hi)) return kInf;
  double lo = 0.0;
  for (int it = 0; it < iters; ++it) {
    double mid = 0.5 * (lo + hi);
    if (pred(mid)) hi = mid;
    else lo = mid;
  }
  return hi;
}

}  // namespace detail

inline SValue S_function(const ObserverFamily& f, const ActiveParams& P, const NullEntry& yz, double s1) {
  const MetricSpec& m = f.spec;
  auto path = detail::probe_path(f, yz, P.max_param + 10.0);
  if (detail::hat_clearance(f, path) < 1e-4)
    throw std::invalid_argument("S_function: the geodesic meets the distinguished observer");
  Point x1 = f.hat().point(s1), top = f.hat().point(f.par.s_p2), pp = f.p_plus();
  auto at = [&](double r) { return path.at(r).first; };
  SValue v;
  v.r1 = detail::first_true(path, [&](double r) { return chronological_relation(m, x1, at(r)) != Relation::Unrelated; });
  v.r2 = detail::first_true(path, [&](double r) { return chronological_relation(m, at(r), top) != Relation::Chronological; });
  v.r0 = std::min(v.r1, v.r2);
  v.meets = v.r1 < kInf && chronological_relation(m, at(v.r1), pp) != Relation::Unrelated;
  if (v.r0 < kInf) v.q0 = at(v.r0);
  v.value = v.meets ? earliest_obs_time(f, f.a_hat, *v.q0).s : f.par.s_p;
  return v;
}

// ------------------------------------------------------- genuine observations

// The already-constructed collection E_U(J+(mu(s1)) n J-(p+)), queried by membership.
struct SurfacePrior {
  std::function<bool(const EarliestSurface&)> contains;
};

// Membership decided through the surface's witness point.
inline SurfacePrior witness_prior(const ObserverFamily& f, double s1) {
  Point x1 = f.hat().point(s1), pp = f.p_plus();
  return {[&f, x1, pp](const EarliestSurface& S) {
    if (!S.q) return false;
    return chronological_relation(f.spec, x1, *S.q) != Relation::Unrelated &&
           chronological_relation(f.spec, *S.q, pp) != Relation::Unrelated;
  }};
}

namespace detail {

// (x, xi), xi g+-unit, whose geodesic passes p at parameter t0 with tangent along w.
inline std::optional<NullEntry> entry_before(const MetricSpec& m, const Point& p, const Vec4& w, double t0) {
  double c = 1.0 / gplus_norm(m, p, w);
  NullEntry e;
  for (int it = 0; it < 8; ++it) {
    auto r = exp_point(m, p, -c * w, t0);
    if (!r) return std::nullopt;
    e.x = r->first;
    e.xi = -r->second;
    double n = gplus_norm(m, e.x, e.xi);
    if (std::abs(n - 1.0) < 1e-14) break;
    c /= n;
  }
  return e;
}

}  // namespace detail

// Tuple whose first entry is (y, zeta) and whose other three rays are past null
// geodesics from q = gamma_{y,zeta}(r) tilted by alpha, cut at the time slice of
// gamma_{y,zeta}(t0).
inline std::optional<FourTuple> backward_tuple(const MetricSpec& m, const ActiveParams& P, const NullEntry& yz, double r,
                                               double alpha, double phase) {
  auto qv = exp_point(m, yz.x, yz.xi, r);
  auto c0p = exp_point(m, yz.x, yz.xi, P.t0);
  if (!qv || !c0p) return std::nullopt;
  Point q = qv->first;
  double c0 = c0p->first.t();
  FourTuple T;
  T.t0 = P.t0;
  T.theta1 = P.theta1;
  T.e[0] = yz;
  Vec3 n = (-qv->second).tail<3>().normalized();
  auto [e1, e2] = detail::frame(n);
  for (int j = 1; j < 4; ++j) {
    double ang = phase + 2.0 * M_PI * (j - 1) / 3.0;
    Vec3 nj = n + alpha * (std::cos(ang) * e1 + std::sin(ang) * e2);
    Vec4 eta = null_complete(m, q, nj.normalized(), -1.0);
    Region R;
    R.tmin = c0;
    double reach = 4.0 * (q.t() - c0) / std::abs(eta(0)) + 1.0;
    auto path = integrate_geodesic(m, q, eta, reach, R);
    if (path.term != Termination::ExitedRegion) return std::nullopt;
    const GeoSample& end = path.samples.back();
    auto e = detail::entry_before(m, end.p, -end.v, P.t0);
    if (!e) return std::nullopt;
    T.e[j] = *e;
  }
  return T;
}

struct GenuineOptions {
  std::vector<double> theta_fracs{0.5, 0.25, 0.125};
  int per_theta = 8;  // generic perturbed tuples per theta level
  int r_grid = 16;
  int bisect = 24;
  double tol_surface = 1e-6;
  std::uint64_t seed = 7;
  bool parallel = true;
};

struct GenuineResult {
  double S_obs = 0.0;
  std::optional<double> r_star;           // smallest accepted parameter
  std::vector<EarliestSurface> sigma;     // genuine, observed on the axis before S_obs
  std::vector<EarliestSurface> excluded;  // genuine but not before S_obs
  int tuples = 0;
  int generic_nonempty = 0;
};

namespace detail {

struct GenuineProbe {
  const ObserverFamily& f;
  const ActiveParams& P;
  const GenuineOptions& o;
  NullEntry yz;

  double alpha_for(double theta, double r) const { return 0.3 * theta / (1.0 + std::abs(r - P.t0)); }

  // Tuple in R_theta through gamma(r); alpha shrinks until the spread fits.
  std::optional<FourTuple> tuple_at(double r, double theta, double phase) const {
    double alpha = alpha_for(theta, r);
    for (int k = 0; k < 6; ++k, alpha *= 0.5) {
      auto T = backward_tuple(f.spec, P, yz, r, alpha, phase);
      if (!T) continue;
      T->theta1 = theta;
      auto a = admissible_tuple(f, *T, false);
      if (a.chronology && a.spread) return T;
    }
    return std::nullopt;
  }

  // Genuine surface at gamma(r): nonempty and identical at the two finest theta levels.
  std::optional<EarliestSurface> at(double r, int& tuples) const {
    std::vector<EarliestSurface> lv;
    for (std::size_t l = 0; l < o.theta_fracs.size(); ++l) {
      auto T = tuple_at(r, o.theta_fracs[l] * P.theta1, 0.7 * l);
      ++tuples;
      lv.push_back(T ? surface_S_e(f, *T, P) : EarliestSurface{});
    }
    std::size_t n = lv.size();
    if (n == 0 || lv[n - 1].empty()) return std::nullopt;
    if (n >= 2 && surface_distance(lv[n - 1], lv[n - 2]) > o.tol_surface) return std::nullopt;
    lv[n - 1].r = r;
    return lv[n - 1];
  }
};

}  // namespace detail

inline GenuineResult genuine_observations(const ObserverFamily& f, const ActiveParams& P, const NullEntry& yz, double s1,
                                          const SurfacePrior& prior, const GenuineOptions& o = {},
                                          const std::vector<double>& extra_r = {}) {
  const MetricSpec& m = f.spec;
  if (!(s1 > -1.0 && s1 <= f.par.s_p)) throw std::invalid_argument("genuine_observations: s1 outside (-1, s+]");
  auto path = detail::probe_path(f, yz, P.max_param + 10.0);
  if (detail::hat_clearance(f, path) < 1e-4)
    throw std::invalid_argument("genuine_observations: the geodesic meets the distinguished observer");
  double r_end = path.end();
  GenuineResult G;
  G.S_obs = f.par.s_p;
  if (r_end <= P.t0) return G;
  detail::GenuineProbe probe{f, P, o, yz};

  // generic tuples from each theta level; they rarely meet, and never stably
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> nd;
  for (double frac : o.theta_fracs) {
    double th = frac * P.theta1;
    for (int k = 0; k < o.per_theta; ++k) {
      FourTuple T;
      T.t0 = P.t0;
      T.theta1 = th;
      T.e[0] = yz;
      for (int j = 1; j < 4; ++j) {
        Vec4 dx(nd(rng), nd(rng), nd(rng), nd(rng));
        Vec3 dn(nd(rng), nd(rng), nd(rng));
        Point x(yz.x.x + 0.1 * th * dx.normalized(), yz.x.chart);
        Vec3 sp = yz.xi.tail<3>().normalized() + 0.1 * th * dn.normalized();
        T.e[j] = make_entry(m, x, sp);
      }
      ++G.tuples;
      if (!surface_S_e(f, T, P).empty()) ++G.generic_nonempty;
    }
  }

  std::vector<double> rs;
  for (int k = 1; k <= o.r_grid; ++k) rs.push_back(P.t0 + (r_end - P.t0) * k / o.r_grid);
  for (double r : extra_r)
    if (r > P.t0 && r <= r_end) rs.push_back(r);
  std::vector<std::optional<EarliestSurface>> surf(rs.size());
  std::vector<int> cnt(rs.size(), 0);
  std::vector<char> acc(rs.size(), 0);
  auto eval = [&](std::size_t i) {
    surf[i] = probe.at(rs[i], cnt[i]);
    acc[i] = surf[i] && prior.contains(*surf[i]);
  };
  if (o.parallel) parallel_for(rs.size(), eval);
  else
    for (std::size_t i = 0; i < rs.size(); ++i) eval(i);
  for (int c : cnt) G.tuples += c;

  // refine the first accepted grid point downward; acceptance is an interval in r
  int first = -1;
  for (int k = 0; k < o.r_grid; ++k)
    if (acc[k]) {
      first = k;
      break;
    }
  double best = kInf;
  for (std::size_t i = 0; i < rs.size(); ++i)
    if (acc[i]) {
      double h = surf[i]->times[f.a_hat];
      if (h < best) best = h, G.r_star = rs[i];
    }
  if (first >= 0) {
    double lo = first == 0 ? P.t0 : rs[first - 1], hi = rs[first];
    std::optional<EarliestSurface> Shi = surf[first];
    for (int it = 0; it < o.bisect; ++it) {
      double mid = 0.5 * (lo + hi);
      int c = 0;
      auto S = probe.at(mid, c);
      G.tuples += c;
      if (S && prior.contains(*S)) hi = mid, Shi = S;
      else lo = mid;
    }
    double h = Shi->times[f.a_hat];
    if (h <= best) best = h, G.r_star = hi;
  }
  if (best < kInf) G.S_obs = std::min(best, f.par.s_p);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (!surf[i]) continue;
    if (surf[i]->times[f.a_hat] < G.S_obs) G.sigma.push_back(*surf[i]);
    else G.excluded.push_back(*surf[i]);
  }
  (void)m;
  return G;
}

// ----------------------------------------------------------- stepwise build

struct StepwiseOptions {
  double step = 0.0;    // 0: 0.9 kappa2
  double offset = 0.0;  // 0: theta1 / 4; displacement of y off the axis
  GenuineOptions genuine;
};

struct ConstructedSurface {
  EarliestSurface S;
  int level = 0;
  int target = -1;
  bool near_axis = false;
};

struct StepLevel {
  double s1 = 0, s2 = 0;
  std::size_t total = 0;  // collection size after the level
  int resolved = 0;
};

struct StepwiseResult {
  std::vector<ConstructedSurface> surfaces;
  std::vector<StepLevel> levels;
  std::vector<int> target_surface;  // index into surfaces, -1 if unresolved
  int unresolved = 0;
};

namespace detail {

struct TargetOutcome {
  std::vector<ConstructedSurface> add;
  int own = -1;  // index within add
};

inline TargetOutcome resolve_target(const ObserverFamily& f, const ActiveParams& P, const StepwiseOptions& o, double s1,
                                    const Point& q) {
  const MetricSpec& m = f.spec;
  TargetOutcome out;
  double sq = earliest_obs_time(f, f.a_hat, q, -1).s;
  Point xh = f.hat().point(sq);
  auto near = [&] {
    auto rec = earliest_light_obs_set(f, q);
    ConstructedSurface c;
    c.S.times = rec.times;
    c.S.boundary = rec.boundary;
    c.S.q = q;
    c.near_axis = true;
    out.add.push_back(c);
    out.own = 0;
    return out;
  };
  // f- carries the cone-snap bias of tau, so the hit tolerance is loosened as for direction sets
  NullConnectOptions no;
  no.tol_hit = 10 * kTolNull * std::max(1.0, q.t() - xh.t());
  auto hc = null_connect(m, xh, q, no);
  if (hc.empty()) return out;
  // y a short way up the null generator from the axis toward q
  double d = o.offset > 0 ? o.offset : 0.25 * P.theta1;
  double lam = hc.front().arrival;
  if (lam - d <= 1.05 * P.t0) return near();
  auto yv = exp_point(m, xh, hc.front().xi, d);
  if (!yv) return out;
  double nrm = gplus_norm(m, yv->first, yv->second);
  NullEntry yz{yv->first, yv->second / nrm};
  double tq = (lam - d) * nrm;
  GenuineOptions go = o.genuine;
  go.parallel = false;
  auto G = genuine_observations(f, P, yz, s1, witness_prior(f, s1), go, {tq});
  for (auto& S : G.sigma) {
    ConstructedSurface c;
    c.S = S;
    if (out.own < 0 && std::abs(S.r - tq) < 1e-12) out.own = int(out.add.size());
    out.add.push_back(c);
  }
  return out;
}

}  // namespace detail

// One level s1 -> s2: targets whose past observation time on the axis lies in
// [s2, s1) are resolved through genuine observations along a ray from near mu(f-).
inline void stepwise_level(const ObserverFamily& f, const ActiveParams& P, double s1, double s2,
                           const std::vector<Point>& targets, const StepwiseOptions& o, StepwiseResult& acc) {
  if (s1 - s2 >= P.kappa2) throw std::invalid_argument("stepwise_level: step must be smaller than kappa2");
  if (s2 > s1) throw std::invalid_argument("stepwise_level: s2 must not exceed s1");
  if (acc.target_surface.size() != targets.size()) acc.target_surface.assign(targets.size(), -1);
  StepLevel L{s1, s2, 0, 0};
  int level = int(acc.levels.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (acc.target_surface[i] >= 0) continue;
    double s = earliest_obs_time(f, f.a_hat, targets[i], -1).s;
    if (s >= s2 && s < s1) todo.push_back(i);
  }
  std::vector<detail::TargetOutcome> res(todo.size());
  parallel_for(todo.size(), [&](std::size_t k) { res[k] = detail::resolve_target(f, P, o, s1, targets[todo[k]]); });
  for (std::size_t k = 0; k < todo.size(); ++k) {
    for (std::size_t j = 0; j < res[k].add.size(); ++j) {
      ConstructedSurface c = res[k].add[j];
      c.level = level;
      if (int(j) == res[k].own) {
        c.target = int(todo[k]);
        acc.target_surface[todo[k]] = int(acc.surfaces.size());
        ++L.resolved;
      }
      acc.surfaces.push_back(c);
    }
  }
  L.total = acc.surfaces.size();
  acc.levels.push_back(L);
}

inline StepwiseResult stepwise_construct(const ObserverFamily& f, const ActiveParams& P, const std::vector<Point>& targets,
                                         const StepwiseOptions& o = {}) {
  double step = o.step > 0 ? o.step : 0.9 * P.kappa2;
  if (step >= P.kappa2) throw std::invalid_argument("stepwise_construct: step must be smaller than kappa2");
  StepwiseResult acc;
  acc.target_surface.assign(targets.size(), -1);
  double s1 = f.par.s_p;
  while (s1 > f.par.s_m) {
    double s2 = std::max(f.par.s_m, s1 - step);
    stepwise_level(f, P, s1, s2, targets, o, acc);
    s1 = s2;
  }
  acc.unresolved = int(std::count(acc.target_surface.begin(), acc.target_surface.end(), -1));
  return acc;
}

}  // namespace ll
