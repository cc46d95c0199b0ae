#pragma once

#include "ll/core.hpp"
#include "ll/ode.hpp"

#include <algorithm>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

namespace ll {

constexpr double kTolTau = 1e-7;
constexpr double kTolHit = 1e-9;
constexpr double kOdeTol = 1e-10;
constexpr double kClusterTol = 1e-3;

inline Vec4 tangent_to_chart(const Point& p, const Vec4& v, int chart) {
  if (p.chart == chart) return v;
  Vec4 w = v;
  w.tail<3>() = sphere::invert_jac(p.y()) * v.tail<3>();
  return w;
}

// Geodesic equation with M variational pairs (dx, dv) and E parallel-transported
// vectors appended to the state.
template <int M, int E>
struct GeoSystem {
  static constexpr int N = 8 + 8 * M + 4 * E;
  using State = Eigen::Matrix<double, N, 1>;

  const MetricSpec* m;
  int chart = 0;

  void operator()(double, const State& y, State& dy) const {
    Point p(y.template head<4>(), chart);
    Vec4 v = y.template segment<4>(4);
    Christoffel G = christoffel_at(*m, p);
    dy.template head<4>() = v;
    dy.template segment<4>(4) = -contract(G, v, v);
    if constexpr (M > 0) {
      auto dG = christoffel_grad(*m, p);
      for (int k = 0; k < M; ++k) {
        Vec4 dx = y.template segment<4>(8 + 8 * k), dv = y.template segment<4>(12 + 8 * k);
        Vec4 acc = -2.0 * contract(G, v, dv);
        for (int l = 0; l < 4; ++l)
          if (dx(l) != 0.0) acc -= dx(l) * contract(dG[l], v, v);
        dy.template segment<4>(8 + 8 * k) = dv;
        dy.template segment<4>(12 + 8 * k) = acc;
      }
    }
    for (int e = 0; e < E; ++e)
      dy.template segment<4>(8 + 8 * M + 4 * e) = -contract(G, v, y.template segment<4>(8 + 8 * M + 4 * e));
  }

  // Stereographic chart switch on the sphere once |y| leaves the switch radius.
  bool fixup(State& y) {
    if (m->kind != Kind::ProductSphere) return false;
    Vec3 ys = y.template segment<3>(1);
    if (ys.norm() <= sphere::kSwitchRadius) return false;
    Mat3 D = sphere::invert_jac(ys);
    Vec3 vs = y.template segment<3>(5);
    y.template segment<3>(1) = sphere::invert(ys);
    y.template segment<3>(5) = D * vs;
    for (int k = 0; k < M; ++k) {
      Vec3 dx = y.template segment<3>(9 + 8 * k), dv = y.template segment<3>(13 + 8 * k);
      y.template segment<3>(9 + 8 * k) = D * dx;
      y.template segment<3>(13 + 8 * k) = D * dv + sphere::invert_hess(ys, dx, vs);
    }
    for (int e = 0; e < E; ++e) {
      int i = 8 + 8 * M + 4 * e + 1;
      y.template segment<3>(i) = D * y.template segment<3>(i);
    }
    chart ^= 1;
    return true;
  }
};

template <int M, int E>
Dopri5<GeoSystem<M, E>::N> make_stepper(const MetricSpec& m) {
  Dopri5<GeoSystem<M, E>::N> d;
  d.atol = d.rtol = kOdeTol;
  d.hmax = m.max_step();
  return d;
}

enum class Termination { ReachedMaxParam, ExitedRegion, SolverFailure };

inline const char* termination_name(Termination t) {
  switch (t) {
    case Termination::ReachedMaxParam: return "reached_max_param";
    case Termination::ExitedRegion: return "exited_region";
    case Termination::SolverFailure: return "solver_failure";
  }
  return "?";
}

struct GeoSample {
  double s;
  Point p;
  Vec4 v, a;
};

inline GeoSample sample_to_chart(const GeoSample& g, int chart) {
  if (g.p.chart == chart) return g;
  Vec3 y = g.p.y();
  Mat3 D = sphere::invert_jac(y);
  GeoSample r = g;
  r.p = to_chart(g.p, chart);
  r.v.tail<3>() = D * g.v.tail<3>();
  r.a.tail<3>() = D * g.a.tail<3>() + sphere::invert_hess(y, g.v.tail<3>(), g.v.tail<3>());
  return r;
}

struct GeodesicPath {
  Point x0;
  Vec4 xi = Vec4::Zero();
  std::vector<GeoSample> samples;
  Termination term = Termination::ReachedMaxParam;
  double max_norm_drift = 0.0;  // |g(v,v) - g(v0,v0)| / g+(v,v)

  double end() const { return samples.back().s; }

  // Quintic Hermite interpolation of position from (x, v, a) at the bracketing samples.
  std::pair<Point, Vec4> at(double s) const {
    if (samples.empty() || s < samples.front().s - 1e-14 || s > samples.back().s + 1e-14)
      throw std::out_of_range("geodesic parameter outside integrated range");
    if (samples.size() == 1) return {samples[0].p, samples[0].v};
    auto it = std::upper_bound(samples.begin(), samples.end(), s, [](double v, const GeoSample& g) { return v < g.s; });
    std::size_t k = std::clamp<std::ptrdiff_t>(it - samples.begin() - 1, 0, samples.size() - 2);
    const GeoSample& a = samples[k];
    GeoSample b = sample_to_chart(samples[k + 1], a.p.chart);
    double h = b.s - a.s;
    double t = h > 0 ? (s - a.s) / h : 0.0;
    double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    double h0 = 1 - 10 * t3 + 15 * t4 - 6 * t5, h1 = t - 6 * t3 + 8 * t4 - 3 * t5;
    double h2 = 0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5, h3 = 0.5 * t3 - t4 + 0.5 * t5;
    double h4 = -4 * t3 + 7 * t4 - 3 * t5, h5 = 10 * t3 - 15 * t4 + 6 * t5;
    double d0 = -30 * t2 + 60 * t3 - 30 * t4, d1 = 1 - 18 * t2 + 32 * t3 - 15 * t4;
    double d2 = t - 4.5 * t2 + 6 * t3 - 2.5 * t4, d3 = 1.5 * t2 - 4 * t3 + 2.5 * t4;
    double d4 = -12 * t2 + 28 * t3 - 15 * t4, d5 = 30 * t2 - 60 * t3 + 30 * t4;
    Vec4 x = h0 * a.p.x + h1 * h * a.v + h2 * h * h * a.a + h3 * h * h * b.a + h4 * h * b.v + h5 * b.p.x;
    Vec4 v = (d0 * a.p.x + d5 * b.p.x) / h + d1 * a.v + d4 * b.v + (d2 * a.a + d3 * b.a) * h;
    return {Point(x, a.p.chart), v};
  }
};

namespace detail {

inline GeoSample make_sample(const MetricSpec& m, double s, const Point& p, const Vec4& v) {
  return {s, p, v, -contract(christoffel_at(m, p), v, v)};
}

}  // namespace detail

inline GeodesicPath integrate_geodesic(const MetricSpec& m, const Point& x, const Vec4& xi, double max_param,
                                       const Region& region = Region::everywhere()) {
  if (xi.isZero(0.0)) throw std::invalid_argument("integrate_geodesic: zero initial vector");
  GeodesicPath path;
  path.x0 = x;
  path.xi = xi;
  path.samples.push_back(detail::make_sample(m, 0.0, x, xi));
  if (!region.contains(m, x)) {
    path.term = Termination::ExitedRegion;
    return path;
  }
  using Sys = GeoSystem<0, 0>;
  Sys sys{&m, x.chart};
  auto st = make_stepper<0, 0>(m);
  Sys::State y;
  y << x.x, xi;
  double g0 = xi.dot(metric_at(m, x) * xi);
  bool exited = false;
  auto after = [&](double sp, const Sys::State& yp, double s, const Sys::State& yn) {
    Point p(yn.head<4>(), sys.chart);
    if (!region.contains(m, p)) {
      double lo = 0.0, hi = s - sp;
      Sys::State yh = yn;
      for (int it = 0; it < 80 && hi - lo > 1e-14; ++it) {
        double mid = 0.5 * (lo + hi);
        Sys::State ym = st.single(sys, sp, yp, mid);
        if (region.contains(m, Point(ym.head<4>(), sys.chart))) lo = mid;
        else {
          hi = mid;
          yh = ym;
        }
      }
      Point pe(yh.head<4>(), sys.chart);
      path.samples.push_back(detail::make_sample(m, sp + hi, pe, yh.segment<4>(4)));
      exited = true;
      return false;
    }
    Vec4 v = yn.segment<4>(4);
    double drift = std::abs(v.dot(metric_at(m, p) * v) - g0) / v.dot(gplus_at(m, p) * v);
    path.max_norm_drift = std::max(path.max_norm_drift, drift);
    path.samples.push_back(detail::make_sample(m, s, p, v));
    return true;
  };
  int rc;
  try {
    rc = st.drive(sys, 0.0, y, max_param, std::min(0.05, max_param), after, [&](Sys::State& s) { return sys.fixup(s); });
  } catch (const std::domain_error&) {
    rc = 2;
  }
  path.term = exited ? Termination::ExitedRegion : (rc == 2 ? Termination::SolverFailure : Termination::ReachedMaxParam);
  return path;
}

// Endpoint of exp_x(lambda xi) together with d(endpoint)/d(params), where the
// columns of dxi are d xi / d params.
template <int M>
struct ExpJac {
  Point p;
  Vec4 v = Vec4::Zero();
  Eigen::Matrix<double, 4, M> J;
  bool ok = false;
};

template <int M>
ExpJac<M> exp_jacobian(const MetricSpec& m, const Point& x, const Vec4& xi, double lambda,
                       const Eigen::Matrix<double, 4, M>& dxi, int target_chart = -1) {
  using Sys = GeoSystem<M, 0>;
  Sys sys{&m, x.chart};
  auto st = make_stepper<M, 0>(m);
  typename Sys::State y = Sys::State::Zero();
  y.template head<4>() = x.x;
  y.template segment<4>(4) = xi;
  if constexpr (M > 0)
    for (int k = 0; k < M; ++k) y.template segment<4>(12 + 8 * k) = dxi.col(k);
  ExpJac<M> r;
  int rc;
  try {
    rc = st.drive(sys, 0.0, y, lambda, std::min(0.05, lambda), [](double, const auto&, double, const auto&) { return true; },
                  [&](typename Sys::State& s) { return sys.fixup(s); });
  } catch (const std::domain_error&) {
    return r;
  }
  if (rc != 0 || !y.allFinite()) return r;
  r.p = Point(y.template head<4>(), sys.chart);
  r.v = y.template segment<4>(4);
  if constexpr (M > 0)
    for (int k = 0; k < M; ++k) r.J.col(k) = y.template segment<4>(8 + 8 * k);
  if (target_chart >= 0 && target_chart != r.p.chart) {
    Vec3 ys = r.p.y();
    Mat3 D = sphere::invert_jac(ys);
    r.v.template tail<3>() = D * r.v.template tail<3>();
    if constexpr (M > 0)
      for (int k = 0; k < M; ++k) r.J.col(k).template tail<3>() = D * r.J.col(k).template tail<3>();
    r.p = to_chart(r.p, target_chart);
  }
  r.ok = true;
  return r;
}

inline std::optional<std::pair<Point, Vec4>> exp_point(const MetricSpec& m, const Point& x, const Vec4& xi, double lambda,
                                                       int target_chart = -1) {
  if (lambda == 0.0) return std::make_pair(x, xi);
  auto r = exp_jacobian<0>(m, x, xi, lambda, Eigen::Matrix<double, 4, 0>(), target_chart);
  if (!r.ok) return std::nullopt;
  return std::make_pair(r.p, r.v);
}

// ---------------------------------------------------------------- directions

namespace detail {

inline std::vector<Vec3> lattice_directions() {
  std::vector<Vec3> d;
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k)
        if (i || j || k) d.push_back(Vec3(i, j, k).normalized());
  return d;
}

// Two unit vectors completing n to an orthonormal frame (Euclidean).
inline std::pair<Vec3, Vec3> frame(const Vec3& n) {
  Vec3 a = std::abs(n(0)) < 0.8 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 e1 = (a - a.dot(n) * n).normalized();
  return {e1, n.cross(e1)};
}

// d xi / d(spatial direction) for xi = null_complete(n); metric has no t-y cross terms.
inline Vec4 null_dir_derivative(const Mat4& g, const Vec4& xi, const Vec3& e, double time_sign) {
  Vec4 d;
  d(0) = (xi.tail<3>().dot(g.block<3, 3>(1, 1) * e)) / (-g(0, 0) * xi(0));
  (void)time_sign;
  d.tail<3>() = e;
  return d;
}

inline Vec4 gplus_unit(const MetricSpec& m, const Point& p, const Vec4& v) { return v / gplus_norm(m, p, v); }

// Coordinate difference of two points expressed in b's chart.
inline Vec4 chart_diff(const Point& a, const Point& b) { return to_chart(a, b.chart).x - b.x; }

}  // namespace detail

struct NullConnection {
  Vec4 xi;        // future null, g+-unit at x
  double arrival;  // affine parameter for that normalization
};

struct NullConnectOptions {
  double tol_hit = kTolHit;
  int max_iter = 40;
  double time_sign = 1.0;  // -1 connects along past-directed null geodesics
};

namespace detail {

// Gauss-Newton on (direction, lambda) so that exp_x(lambda xi(n)) = y.
inline std::optional<NullConnection> null_newton(const MetricSpec& m, const Point& x, const Point& y, Vec3 n,
                                                 double lambda, const NullConnectOptions& o) {
  Mat4 gx = metric_at(m, x);
  Mat4 gpy = gplus_at(m, y);
  double best = kInf;
  int stall = 0;
  for (int it = 0; it < o.max_iter; ++it) {
    n.normalize();
    Vec4 xi = null_complete(m, x, n, o.time_sign);
    auto [e1, e2] = frame(n);
    Eigen::Matrix<double, 4, 2> dxi;
    dxi.col(0) = null_dir_derivative(gx, xi, e1, o.time_sign);
    dxi.col(1) = null_dir_derivative(gx, xi, e2, o.time_sign);
    auto r = exp_jacobian<2>(m, x, xi, lambda, dxi, y.chart);
    if (!r.ok) return std::nullopt;
    Vec4 F = r.p.x - y.x;
    double res = std::sqrt(F.dot(gpy * F));
    if (res < o.tol_hit) {
      double s = gplus_norm(m, x, xi);
      return NullConnection{xi / s, lambda * s};
    }
    if (res < 0.999 * best) {
      best = res;
      stall = 0;
    } else if (++stall > 4) {
      return std::nullopt;
    }
    Eigen::Matrix<double, 4, 3> J;
    J.leftCols<2>() = r.J;
    J.col(2) = r.v;
    Vec3 d = J.colPivHouseholderQr().solve(-F);
    Eigen::Vector2d du = d.head<2>();
    if (du.norm() > 0.5) du *= 0.5 / du.norm();
    n += du(0) * e1 + du(1) * e2;
    lambda = std::max(lambda + d(2), 0.25 * lambda);
  }
  return std::nullopt;
}

inline void add_cluster(const MetricSpec& m, const Point& x, std::vector<NullConnection>& out, const NullConnection& c) {
  for (auto& o : out)
    if (gplus_norm(m, x, o.xi - c.xi) < kClusterTol) return;
  out.push_back(c);
}

}  // namespace detail

// All null directions from x whose geodesic passes through y, by multi-start
// Newton over the direction sphere, deduplicated by g+-distance.
inline std::vector<NullConnection> null_connect(const MetricSpec& m, const Point& x, const Point& y,
                                                const NullConnectOptions& o = {}) {
  std::vector<NullConnection> out;
  double dt = (y.t() - x.t()) * o.time_sign;
  if (dt <= 0.0) return out;
  Point yx = to_chart(y, x.chart);
  Vec3 chord = yx.y() - x.y();
  std::vector<Vec3> starts;
  if (m.kind != Kind::ProductSphere && chord.norm() > 0) starts.push_back(chord.normalized());
  for (auto& d : detail::lattice_directions()) starts.push_back(d);
  bool single = m.kind != Kind::ProductSphere;
  for (const Vec3& n : starts) {
    Vec4 xi = null_complete(m, x, n, o.time_sign);
    double lam = dt / std::abs(xi(0));
    if (auto c = detail::null_newton(m, x, y, n, lam, o)) {
      detail::add_cluster(m, x, out, *c);
      // flat-like metrics have a unique connection; the chord start already found it
      if (single && m.flat()) break;
    }
  }
  std::sort(out.begin(), out.end(), [](const NullConnection& a, const NullConnection& b) { return a.arrival < b.arrival; });
  return out;
}

// ------------------------------------------------------------ time separation

struct TauOptions {
  bool exhaustive = false;      // also try the 26 lattice starts
  bool force_shooting = false;  // bypass closed forms
  std::optional<Vec4> guess;    // initial shooting vector
};

struct ShootResult {
  Vec4 v;
  double residual;
};

namespace detail {

// Newton for exp_x(v) = y with the exact variational Jacobian.
inline std::optional<ShootResult> shoot(const MetricSpec& m, const Point& x, const Point& y, Vec4 v, int max_iter = 40) {
  Mat4 gpy = gplus_at(m, y);
  double res = kInf;
  for (int it = 0; it < max_iter; ++it) {
    auto r = exp_jacobian<4>(m, x, v, 1.0, Mat4::Identity(), y.chart);
    if (!r.ok) return std::nullopt;
    Vec4 F = r.p.x - y.x;
    double nr = std::sqrt(F.dot(gpy * F));
    if (nr < 1e-11 * std::max(1.0, y.x.norm())) return ShootResult{v, nr};
    if (it > 0 && nr > res) {
      // crude damping: back off along the previous direction
      return std::nullopt;
    }
    res = nr;
    Vec4 dv = r.J.fullPivLu().solve(-F);
    if (!dv.allFinite()) return std::nullopt;
    double lim = 0.5 * std::max(1.0, v.norm());
    if (dv.norm() > lim) dv *= lim / dv.norm();
    v += dv;
  }
  return std::nullopt;
}

// sqrt(dt^2 - d^2), snapped to zero within a relative band around the cone; the
// square root otherwise turns round-off in d into tau ~ 1e-5.
inline double cone_length(double dt, double d) {
  if (dt - d <= kTolNull * std::max(1.0, dt)) return 0.0;
  return std::sqrt((dt - d) * (dt + d));
}

inline double causal_length(const MetricSpec& m, const Point& x, const Vec4& v) {
  auto cc = causal_character(m, {x, v});
  if (cc.cls != Causal::Timelike || cc.orient != Orientation::Future) return 0.0;
  return std::sqrt(-v.dot(metric_at(m, x) * v));
}

}  // namespace detail

inline double time_separation(const MetricSpec& m, const Point& x, const Point& y, const TauOptions& o = {}) {
  double dt = y.t() - x.t();
  if (dt <= 0.0) return 0.0;
  if (!o.force_shooting) {
    if (m.kind == Kind::Minkowski || (m.kind == Kind::Bump && m.amp == 0.0)) {
      double r = (y.y() - x.y()).norm();
      return detail::cone_length(dt, r);
    }
    if (m.kind == Kind::ProductSphere) {
      double d = sphere::distance(sphere::to_embedding(x.y(), x.chart), sphere::to_embedding(y.y(), y.chart));
      return detail::cone_length(dt, d);
    }
  }
  std::vector<Vec4> starts;
  Vec4 chord;
  chord(0) = dt;
  chord.tail<3>() = to_chart(y, x.chart).y() - x.y();
  if (o.guess) starts.push_back(*o.guess);
  starts.push_back(chord);
  if (o.exhaustive)
    for (auto& d : detail::lattice_directions()) {
      Vec4 v;
      v(0) = dt;
      v.tail<3>() = chord.tail<3>().norm() * d;
      starts.push_back(v);
    }
  double best = -1.0;
  int converged = 0;
  for (auto& v0 : starts) {
    auto r = detail::shoot(m, x, y, v0);
    if (!r) continue;
    ++converged;
    best = std::max(best, detail::causal_length(m, x, r->v));
    if (!o.exhaustive) break;
  }
  if (!converged) {
    std::ostringstream os;
    os << "time_separation: shooting failed from " << starts.size() << " starts, x=" << x.x.transpose()
       << " y=" << y.x.transpose() << " metric=" << kind_name(m.kind);
    throw std::runtime_error(os.str());
  }
  return best;
}

enum class Relation { Chronological, CausalOnly, Unrelated };

inline const char* relation_name(Relation r) {
  switch (r) {
    case Relation::Chronological: return "chronological";
    case Relation::CausalOnly: return "causal_only";
    case Relation::Unrelated: return "unrelated";
  }
  return "?";
}

inline Relation chronological_relation(const MetricSpec& m, const Point& x, const Point& y, const TauOptions& o = {}) {
  double dt = y.t() - x.t();
  if (gplus_dist(m, x, y) < 1e-12) return Relation::CausalOnly;
  if (dt <= 0.0) return Relation::Unrelated;
  double tau = time_separation(m, x, y, o);
  if (tau > kTolTau) return Relation::Chronological;
  double tol = 1e-9 * std::max(1.0, std::abs(dt));
  if (m.kind == Kind::Minkowski || (m.kind == Kind::Bump && m.amp == 0.0)) {
    double r = (y.y() - x.y()).norm();
    return std::abs(dt - r) <= tol ? Relation::CausalOnly : Relation::Unrelated;
  }
  if (m.kind == Kind::ProductSphere) {
    double d = sphere::distance(sphere::to_embedding(x.y(), x.chart), sphere::to_embedding(y.y(), y.chart));
    return std::abs(dt - d) <= tol ? Relation::CausalOnly : Relation::Unrelated;
  }
  return null_connect(m, x, y).empty() ? Relation::Unrelated : Relation::CausalOnly;
}

// ------------------------------------------------------------- conjugate points

namespace detail {

// g-orthonormal screen vectors at x orthogonal to xi (and to d_t when xi is null).
inline std::vector<Vec4> screen_basis(const MetricSpec& m, const Point& x, const Vec4& xi, bool null) {
  Mat4 g = metric_at(m, x);
  std::vector<Vec4> cand, out;
  for (int i = 1; i < 4; ++i) cand.push_back(Vec4::Unit(i));
  if (!null) cand.insert(cand.begin(), Vec4::Unit(0));
  Vec4 gx = g * xi;
  double xx = xi.dot(gx);
  for (Vec4 w : cand) {
    if (null) {
      // stay in the spatial slice, orthogonal to the spatial part of xi
      Vec4 s = xi;
      s(0) = 0;
      w -= (w.dot(g * s) / s.dot(g * s)) * s;
    } else {
      w -= (w.dot(gx) / xx) * xi;
    }
    for (auto& e : out) w -= w.dot(g * e) * e;
    double n2 = w.dot(g * w);
    if (n2 > 1e-10) out.push_back(w / std::sqrt(n2));
  }
  out.resize(null ? 2 : 3);
  return out;
}

template <int K>
double min_real_eig(const Eigen::Matrix<double, K, K>& A) {
  Eigen::EigenSolver<Eigen::Matrix<double, K, K>> es(A, false);
  return es.eigenvalues().real().minCoeff();
}

template <int K>
std::optional<double> conjugate_search(const MetricSpec& m, const Point& x, const Vec4& xi, double max_param,
                                       const Region& region, const std::vector<Vec4>& E0) {
  using Sys = GeoSystem<K, K>;
  Sys sys{&m, x.chart};
  auto st = make_stepper<K, K>(m);
  typename Sys::State y = Sys::State::Zero();
  y.template head<4>() = x.x;
  y.template segment<4>(4) = xi;
  for (int k = 0; k < K; ++k) {
    y.template segment<4>(12 + 8 * k) = E0[k];
    y.template segment<4>(8 + 8 * K + 4 * k) = E0[k];
  }
  auto lam = [&](const typename Sys::State& s) {
    Point p(s.template head<4>(), sys.chart);
    Mat4 g = metric_at(m, p);
    Eigen::Matrix<double, K, K> A;
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j)
        A(i, j) = s.template segment<4>(8 + 8 * K + 4 * i).dot(g * s.template segment<4>(8 + 8 * j));
    return min_real_eig<K>(A);
  };
  std::optional<double> found;
  auto after = [&](double sp, const typename Sys::State& yp, double s, const typename Sys::State& yn) {
    if (!region.contains(m, Point(yn.template head<4>(), sys.chart))) return false;
    if (sp > 0.0 && lam(yp) > 0.0 && lam(yn) <= 0.0) {
      double lo = 0.0, hi = s - sp;
      while (hi - lo > 1e-10) {
        double mid = 0.5 * (lo + hi);
        if (lam(st.single(sys, sp, yp, mid)) > 0.0) lo = mid;
        else hi = mid;
      }
      found = sp + 0.5 * (lo + hi);
      return false;
    }
    return true;
  };
  try {
    st.drive(sys, 0.0, y, max_param, std::min(0.05, max_param), after, [&](typename Sys::State& s) { return sys.fixup(s); });
  } catch (const std::domain_error&) {
  }
  return found;
}

}  // namespace detail

// First zero of the screen Jacobi matrix A(s) = [g(E_i, J_j)] with J_j(0) = 0,
// J_j'(0) = E_j and E parallel transported. Detected by a sign change of its
// smallest eigenvalue (even-multiplicity zeros keep det(A) from changing sign).
inline std::optional<double> first_conjugate_time(const MetricSpec& m, const Point& x, const Vec4& xi, double max_param,
                                                  const Region& region = Region::everywhere()) {
  auto cc = causal_character(m, {x, xi});
  if (cc.orient != Orientation::Future || cc.cls == Causal::Spacelike)
    throw std::invalid_argument("first_conjugate_time: direction must be future null or timelike");
  if (m.flat()) return std::nullopt;
  bool null = cc.cls == Causal::Null;
  auto E0 = detail::screen_basis(m, x, xi, null);
  return null ? detail::conjugate_search<2>(m, x, xi, max_param, region, E0)
              : detail::conjugate_search<3>(m, x, xi, max_param, region, E0);
}

// ------------------------------------------------------------------- cut locus

struct CutRecord {
  std::optional<double> conjugate_time;
  std::optional<double> second_geodesic_time;
  double rho = kInf;          // from tau-bisection
  bool no_cut_in_region = false;  // rho is the region-exit parameter
  double exit_param = kInf;

  // min of the present cross-check entries, or the exit parameter
  double rho_check() const {
    double r = exit_param;
    if (conjugate_time) r = std::min(r, *conjugate_time);
    if (second_geodesic_time) r = std::min(r, *second_geodesic_time);
    return r;
  }
};

struct CutOptions {
  double max_param = 10.0;
  Region region = Region::everywhere();
  int scan = 40;
  bool cross_check = false;
};

namespace detail {

// Arrival times at the spatial point of `target` of null geodesics from x other
// than the one with direction xi_excl. Newton on (direction, lambda) in space only.
inline std::vector<double> other_arrivals(const MetricSpec& m, const Point& x, const Vec4& xi_excl, const Point& target,
                                          double stop_before = -kInf) {
  std::vector<double> times;
  std::vector<Vec4> dirs;
  Vec4 ex = gplus_unit(m, x, xi_excl);
  Mat4 gx = metric_at(m, x);
  Point tx = to_chart(target, x.chart);
  double d0 = m.kind == Kind::ProductSphere
                  ? sphere::distance(sphere::to_embedding(x.y(), x.chart), sphere::to_embedding(target.y(), target.chart))
                  : (tx.y() - x.y()).norm();
  for (const Vec3& start : lattice_directions()) {
    Vec3 n = start;
    double lambda = -1.0;
    for (int it = 0; it < 40; ++it) {
      n.normalize();
      Vec4 xi = null_complete(m, x, n);
      if (lambda < 0) {
        double sp = std::sqrt(xi.tail<3>().dot(gx.block<3, 3>(1, 1) * xi.tail<3>()));
        lambda = std::max(d0, 1e-3) / sp;
      }
      // heading into the excluded geodesic's basin
      if (it > 2 && gplus_norm(m, x, gplus_unit(m, x, xi) - ex) < 1e-2) break;
      auto [e1, e2] = frame(n);
      Eigen::Matrix<double, 4, 2> dxi;
      dxi.col(0) = null_dir_derivative(gx, xi, e1, 1.0);
      dxi.col(1) = null_dir_derivative(gx, xi, e2, 1.0);
      auto r = exp_jacobian<2>(m, x, xi, lambda, dxi, target.chart);
      if (!r.ok) break;
      Vec3 F = r.p.y() - target.y();
      if (F.norm() < 1e-11) {
        Vec4 u = gplus_unit(m, x, xi);
        if (gplus_norm(m, x, u - ex) > kClusterTol) {
          bool dup = false;
          for (auto& d : dirs) dup |= gplus_norm(m, x, d - u) < kClusterTol;
          if (!dup) {
            dirs.push_back(u);
            times.push_back(r.p.t());
            if (r.p.t() <= stop_before) return times;
          }
        }
        break;
      }
      Mat3 J;
      J.leftCols<2>() = r.J.bottomRows<3>();
      J.col(2) = r.v.tail<3>();
      Vec3 d = J.colPivHouseholderQr().solve(-F);
      if (!d.allFinite()) break;
      Eigen::Vector2d du = d.head<2>();
      if (du.norm() > 0.5) du *= 0.5 / du.norm();
      n += du(0) * e1 + du(1) * e2;
      lambda = std::max(lambda + d(2), 0.25 * lambda);
    }
  }
  return times;
}

}  // namespace detail

// rho(x, xi) = sup{s : tau(x, gamma(s)) = 0}, found by bisection on tau > tol_tau.
inline CutRecord cut_time(const MetricSpec& m, const Point& x, const Vec4& xi, const CutOptions& o = {}) {
  auto cc = causal_character(m, {x, xi});
  if (cc.cls != Causal::Null || cc.orient != Orientation::Future)
    throw std::invalid_argument("cut_time: direction must be future null");
  CutRecord rec;
  GeodesicPath path = integrate_geodesic(m, x, xi, o.max_param, o.region);
  if (path.term == Termination::SolverFailure) throw std::runtime_error("cut_time: geodesic integration failed");
  double send = path.end();
  rec.exit_param = send;
  auto tau_at = [&](double s) {
    auto [p, v] = path.at(s);
    TauOptions to;
    Vec4 g = xi * s;
    if (p.chart == x.chart) to.guess = g;
    return time_separation(m, x, p, to);
  };
  double lo = 0.0, hi = -1.0;
  for (int k = 1; k <= o.scan; ++k) {
    double s = send * k / o.scan;
    if (tau_at(s) > kTolTau) {
      hi = s;
      break;
    }
    lo = s;
  }
  if (hi < 0) {
    rec.rho = send;
    rec.no_cut_in_region = true;
  } else {
    for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
      double mid = 0.5 * (lo + hi);
      if (tau_at(mid) > kTolTau) hi = mid;
      else lo = mid;
    }
    rec.rho = 0.5 * (lo + hi);
  }
  if (o.cross_check) {
    rec.conjugate_time = first_conjugate_time(m, x, xi, send, o.region);
    auto earlier = [&](double s) {
      auto [p, v] = path.at(s);
      for (double t : detail::other_arrivals(m, x, xi, p, p.t() + 1e-10))
        if (t <= p.t() + 1e-10) return true;
      return false;
    };
    double a = 0.0, b = -1.0;
    for (int k = 1; k <= o.scan; ++k) {
      double s = send * k / o.scan;
      if (earlier(s)) {
        b = s;
        break;
      }
      a = s;
    }
    if (b > 0) {
      while (b - a > 1e-8) {
        double mid = 0.5 * (a + b);
        if (earlier(mid)) b = mid;
        else a = mid;
      }
      rec.second_geodesic_time = 0.5 * (a + b);
    }
  }
  return rec;
}

}  // namespace ll
