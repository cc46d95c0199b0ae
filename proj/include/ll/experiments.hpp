#pragma once

// Scenario-level experiments shared by the CLI and the acceptance runner.
// Reports carry numbers only; thresholds are applied by the callers.

#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ll/active.hpp"
#include "ll/fourwave.hpp"
#include "ll/nlwave.hpp"
#include "ll/passive.hpp"

namespace ll::exp {

using json = nlohmann::ordered_json;

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

inline std::vector<Vec3> fibonacci_ring(int n, double r) {
  std::vector<Vec3> out{Vec3::Zero()};
  for (auto& d : sphere_points(n - 1)) out.push_back(r * d);
  return out;
}

// ------------------------------------------------------ Minkowski closed forms

struct ClosedFormOptions {
  int n = 1000;
  std::uint64_t seed = 1;
  double T = 4.0;
  int observers = 6;
};

struct ClosedFormReport {
  int n = 0;
  double tau = 0, tau_shoot = 0, fplus = 0, fminus = 0, eu = 0, nc_dir = 0, nc_arrival = 0;
  int nc_missing = 0;
  double seconds = 0;

  double worst() const {
    return std::max({tau, tau_shoot, fplus, fminus, eu, nc_dir, nc_arrival}) + (nc_missing ? kInf : 0.0);
  }
  json to_json() const {
    return {{"n", n},           {"tau", tau},       {"tau_shooting", tau_shoot}, {"fplus", fplus},
            {"fminus", fminus}, {"earliest_set", eu}, {"null_dir", nc_dir},      {"null_arrival", nc_arrival},
            {"null_missing", nc_missing}};
  }
};

inline ClosedFormReport closed_form_suite(const ClosedFormOptions& o = {}) {
  Stopwatch sw;
  const MetricSpec m = MetricSpec::minkowski();
  auto pos = fibonacci_ring(o.observers, 1.0);
  auto f = static_family(m, o.T, pos);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-1, 1);
  struct Case {
    Point x, y, q, c;
    Vec3 n;
    double lam;
  };
  std::vector<Case> cases(o.n);
  for (auto& c : cases) {
    c.x = Point(u(rng), u(rng), u(rng), u(rng));
    double dt = 0.05 + (u(rng) + 1);
    Vec3 d = Vec3(u(rng), u(rng), u(rng)).normalized() * dt * (0.05 + 0.9 * (u(rng) + 1) / 2) * 1.3;
    c.y = Point(c.x.t() + dt, c.x.x(1) + d(0), c.x.x(2) + d(1), c.x.x(3) + d(2));
    c.q = Point(0.3 * u(rng), 0.4 * u(rng), 0.4 * u(rng), 0.4 * u(rng));
    c.n = Vec3(u(rng), u(rng), u(rng)).normalized();
    c.lam = 0.1 + (u(rng) + 1);
    c.c = Point(c.x.x + c.lam * Vec4(1, c.n(0), c.n(1), c.n(2)));
  }
  struct Err {
    double tau = 0, shoot = 0, fp = 0, fm = 0, eu = 0, dir = 0, arr = 0;
    bool missing = false;
  };
  std::vector<Err> err(o.n);
  TauOptions shoot;
  shoot.force_shooting = true;
  parallel_for(o.n, [&](std::size_t i) {
    const Case& c = cases[i];
    Err& e = err[i];
    double dt = c.y.t() - c.x.t(), r = (c.y.y() - c.x.y()).norm();
    double exact = dt > r ? std::sqrt(dt * dt - r * r) : 0.0;
    e.tau = std::abs(time_separation(m, c.x, c.y) - exact);
    if (dt > r) e.shoot = std::abs(time_separation(m, c.x, c.y, shoot) - exact);
    std::size_t a = i % pos.size();
    double d = (c.q.y() - pos[a]).norm();
    e.fp = std::abs(earliest_obs_time(f, a, c.q).s - (c.q.t() + d) / o.T);
    e.fm = std::abs(earliest_obs_time(f, a, c.q, -1).s - (c.q.t() - d) / o.T);
    auto rec = earliest_light_obs_set(f, c.q, {}, false);
    for (std::size_t b = 0; b < pos.size(); ++b)
      e.eu = std::max(e.eu, std::abs(rec.times[b] - (c.q.t() + (c.q.y() - pos[b]).norm()) / o.T));
    auto nc = null_connect(m, c.x, c.c);
    if (nc.size() != 1) {
      e.missing = true;
      return;
    }
    Vec4 xi = Vec4(1, c.n(0), c.n(1), c.n(2)) / std::sqrt(2.0);
    e.dir = (nc[0].xi - xi).norm();
    e.arr = std::abs(nc[0].arrival - c.lam * std::sqrt(2.0));
  });
  ClosedFormReport rep;
  rep.n = o.n;
  for (auto& e : err) {
    rep.tau = std::max(rep.tau, e.tau);
    rep.tau_shoot = std::max(rep.tau_shoot, e.shoot);
    rep.fplus = std::max(rep.fplus, e.fp);
    rep.fminus = std::max(rep.fminus, e.fm);
    rep.eu = std::max(rep.eu, e.eu);
    rep.nc_dir = std::max(rep.nc_dir, e.dir);
    rep.nc_arrival = std::max(rep.nc_arrival, e.arr);
    rep.nc_missing += e.missing;
  }
  rep.seconds = sw.seconds();
  return rep;
}

// --------------------------------------------------- sphere cut / conjugate

namespace detail {

// unit-speed spatial null vector on R x S^3 at p along the embedding tangent U
inline Vec4 sphere_null(const Point& p, const Vec4& U) {
  double h = 1e-7;
  Vec4 X = sphere::to_embedding(p.y(), p.chart);
  Vec3 y1 = sphere::from_embedding((X + h * U).normalized(), p.chart);
  Vec3 y0 = sphere::from_embedding((X - h * U).normalized(), p.chart);
  Vec3 dy = (y1 - y0) / (2 * h);
  double f = 2.0 / (1.0 + p.y().squaredNorm());
  dy /= f * dy.norm();
  return Vec4(1.0, dy(0), dy(1), dy(2));
}

}  // namespace detail

struct SphereOptions {
  int n = 100;
  std::uint64_t seed = 2;
};

struct SphereReport {
  int n = 0, conj_missing = 0;
  double conj = 0, cut = 0, antipodal = 0;
  double seconds = 0;
  json to_json() const {
    return {{"n", n}, {"conjugate_err", conj}, {"conjugate_missing", conj_missing}, {"cut_err", cut},
            {"antipodal_sup", antipodal}};
  }
};

inline SphereReport sphere_suite(const SphereOptions& o = {}) {
  Stopwatch sw;
  const MetricSpec m = MetricSpec::product_sphere();
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> g;
  std::vector<std::pair<Point, Vec4>> rays;
  for (int i = 0; i < o.n; ++i) {
    Point p(Vec4(u(rng), 1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng)), i % 2);
    Vec4 X = sphere::to_embedding(p.y(), p.chart);
    Vec4 U(g(rng), g(rng), g(rng), g(rng));
    U -= U.dot(X) * X;
    rays.push_back({p, detail::sphere_null(p, U.normalized())});
  }
  std::vector<double> ce(o.n, kInf), cu(o.n, kInf);
  parallel_for(o.n, [&](std::size_t i) {
    auto [p, xi] = rays[i];
    if (auto t = first_conjugate_time(m, p, xi, 4.0)) ce[i] = std::abs(*t - kPi);
    CutOptions co;
    co.max_param = 4.0;
    cu[i] = std::abs(cut_time(m, p, xi, co).rho - kPi);
  });
  SphereReport rep;
  rep.n = o.n;
  for (int i = 0; i < o.n; ++i) {
    if (std::isinf(ce[i])) ++rep.conj_missing;
    else rep.conj = std::max(rep.conj, ce[i]);
    rep.cut = std::max(rep.cut, cu[i]);
  }
  // antipodal sources before the family's range; their cones coincide inside it
  auto f = static_family(m, 1.0, {Vec3(0.1, 0.0, 0.0), Vec3(0.0, 0.3, 0.2), Vec3(-0.2, 0.1, 0.4)});
  Vec3 x1(0.5, -0.4, 0.3);
  Point q1(Vec4(-1.2, x1(0), x1(1), x1(2)));
  Vec3 anti = sphere::from_embedding(-sphere::to_embedding(x1, 0), 0);
  Point q2(Vec4(-1.2 - kPi, anti(0), anti(1), anti(2)));
  ObsOptions oo;
  oo.first_cone_hit = true;
  auto r1 = earliest_light_obs_set(f, q1, oo), r2 = earliest_light_obs_set(f, q2, oo);
  for (std::size_t a = 0; a < f.size(); ++a) {
    double d = r1.boundary[a] || r2.boundary[a] ? kInf : std::abs(r1.times[a] - r2.times[a]);
    rep.antipodal = std::max(rep.antipodal, d);
  }
  rep.seconds = sw.seconds();
  return rep;
}

// ------------------------------------------------ reverse triangle inequality

struct TriangleOptions {
  int n = 1000;
  std::uint64_t seed = 3;
};

struct TriangleRow {
  std::string kind;
  int n = 0, failures = 0;
  double min_slack = kInf;
};

struct TriangleReport {
  std::vector<TriangleRow> rows;
  double seconds = 0;
  double min_slack() const {
    double s = kInf;
    for (auto& r : rows) s = std::min(s, r.failures ? -kInf : r.min_slack);
    return s;
  }
  json to_json() const {
    json j = json::array();
    for (auto& r : rows) j.push_back({{"kind", r.kind}, {"n", r.n}, {"min_slack", r.min_slack}, {"failures", r.failures}});
    return j;
  }
};

inline std::vector<MetricSpec> catalog() {
  return {MetricSpec::minkowski(), MetricSpec::product_sphere(), MetricSpec::warped(0.1, 0.2),
          MetricSpec::bump(Vec4(0.6, 0, 0, 0), 0.4, 0.1)};
}

// slack = tau(x,z) - tau(x,y) - tau(y,z) on chronological triples x << y << z
inline TriangleReport triangle_suite(const TriangleOptions& o = {}) {
  Stopwatch sw;
  TriangleReport rep;
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-1, 1);
  for (const auto& m : catalog()) {
    // coordinate speed below the light cone of every catalog metric; the
    // stereographic factor reaches 2 on the sphere
    double v = m.kind == Kind::ProductSphere ? 0.2 : 0.4;
    std::vector<std::array<Point, 3>> tri(o.n);
    for (auto& t : tri) {
      auto step = [&](const Point& p) {
        double dt = 0.3 + 0.5 * (u(rng) + 1);
        return Point(p.t() + dt, p.x(1) + v * dt * u(rng), p.x(2) + v * dt * u(rng), p.x(3) + v * dt * u(rng));
      };
      t[0] = Point(0.0, 0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng));
      t[1] = step(t[0]);
      t[2] = step(t[1]);
    }
    std::vector<double> slack(o.n, -kInf);
    std::vector<char> causal(o.n, 1);
    parallel_for(o.n, [&](std::size_t i) {
      try {
        auto& t = tri[i];
        double a = time_separation(m, t[0], t[1]), b = time_separation(m, t[1], t[2]);
        if (!(a > 0 && b > 0)) {
          causal[i] = 0;
          return;
        }
        slack[i] = time_separation(m, t[0], t[2]) - a - b;
      } catch (const std::runtime_error&) {
      }
    });
    TriangleRow row;
    row.kind = kind_name(m.kind);
    for (int i = 0; i < o.n; ++i) {
      if (!causal[i]) continue;
      ++row.n;
      if (std::isinf(slack[i])) ++row.failures;
      else row.min_slack = std::min(row.min_slack, slack[i]);
    }
    rep.rows.push_back(row);
  }
  rep.seconds = sw.seconds();
  return rep;
}

// ----------------------------------------------------- passive reconstruction

struct PassiveRunOptions {
  std::string metric = "bump";  // bump or minkowski
  int records = 2000;
  double h = 5e-4;
  std::uint64_t seed = 4;
  bool quantized = true;
  PassiveOptions passive;
};

struct PassiveRunReport {
  EmbeddingReport embedding;
  int records = 0, interior = 0, charted = 0, fit_failures = 0, charts = 0;
  ConformalReport verify;
  ConformalReport verify_centers;  // cluster centres only: symmetric stencils
  double fit_residual = 0;
  double seconds = 0;
  std::vector<ConformalFit> fits;
  std::vector<int> fit_chart;

  double charted_frac() const { return interior ? double(charted) / interior : 0.0; }
  json to_json() const {
    return {{"records", records},
            {"embedding_pass", embedding.pass},
            {"min_sup_dist", embedding.min_sup_dist},
            {"interior", interior},
            {"charted", charted},
            {"charts", charts},
            {"fit_failures", fit_failures},
            {"fits", verify.n},
            {"max_rel_error", verify.max_rel_error},
            {"mean_rel_error", verify.mean_rel_error},
            {"centers", verify_centers.n},
            {"max_rel_error_centers", verify_centers.max_rel_error},
            {"orientation_failures", verify.orientation_failures},
            {"max_fit_residual", fit_residual}};
  }
};

// Blind pipeline: sources are dropped from the records; the labeled truth is
// consulted only for verification.
inline PassiveRunReport passive_run(const PassiveRunOptions& o = {}) {
  Stopwatch sw;
  MetricSpec m = o.metric == "bump" ? passive_bump() : MetricSpec::minkowski();
  auto sc = passive_scenario(m, o.records, o.h, o.seed);
  std::vector<ObservationRecord> blind(sc.sources.size());
  parallel_for(blind.size(), [&](std::size_t i) {
    blind[i] = earliest_light_obs_set(sc.family, sc.sources[i], {}, o.quantized);
    blind[i].truth.reset();
    blind[i].blind = true;
  });
  auto res = reconstruct(blind, o.passive);
  PassiveRunReport rep;
  rep.embedding = res.embedding;
  rep.records = o.records;
  rep.interior = res.interior;
  rep.charted = res.charted;
  rep.fit_failures = res.fit_failures;
  rep.charts = res.atlas.charts.size();
  std::vector<ConformalFit> fits, cfits;
  std::vector<FitTruth> truth, ctruth;
  for (std::size_t i = 0; i < res.fits.size(); ++i) {
    auto t = chart_truth(sc.family, res.atlas.charts[res.fit_chart[i]], sc.sources[res.fits[i].point]);
    if (!t) continue;
    fits.push_back(res.fits[i]);
    truth.push_back(*t);
    if (res.fits[i].point % 13 == 0) {
      cfits.push_back(res.fits[i]);
      ctruth.push_back(*t);
    }
    rep.fit_residual = std::max(rep.fit_residual, res.fits[i].residual);
  }
  rep.verify = verify_conformal(fits, truth);
  rep.verify_centers = verify_conformal(cfits, ctruth);
  rep.fits = std::move(res.fits);
  rep.fit_chart = std::move(res.fit_chart);
  rep.seconds = sw.seconds();
  return rep;
}

// ------------------------------------------------------------- gradient law

struct GradientOptions {
  int n = 200;
  std::uint64_t seed = 5;
};

struct GradientReport {
  int n = 0, missing = 0;
  double max_rel = 0, max_dir = 0;
  double seconds = 0;
  json to_json() const { return {{"n", n}, {"missing", missing}, {"max_rel_error", max_rel}, {"max_dir_error", max_dir}}; }
};

// d f_b at labeled Minkowski points against the closed form (1, u) / T.
inline GradientReport gradient_suite(const GradientOptions& o = {}) {
  Stopwatch sw;
  auto sc = passive_scenario(MetricSpec::minkowski(), o.n, 5e-4, o.seed);
  const auto& f = sc.family;
  std::vector<double> rel(o.n, kInf), dir(o.n, kInf);
  parallel_for(o.n, [&](std::size_t i) {
    std::size_t b = i % f.size();
    const Point& x = sc.sources[i];
    auto w = observation_gradient(f, b, x);
    if (!w) return;
    Vec3 d = x.y() - f[b].init.z.y();
    double T = f[b].init.eta(0);
    Vec4 ref = Vec4(1, 0, 0, 0);
    ref.tail<3>() = d.normalized();
    ref /= T;
    rel[i] = (*w - ref).norm() / ref.norm();
    dir[i] = (w->normalized() - ref.normalized()).norm();
  });
  GradientReport rep;
  rep.n = o.n;
  for (int i = 0; i < o.n; ++i) {
    if (std::isinf(rel[i])) {
      ++rep.missing;
      continue;
    }
    rep.max_rel = std::max(rep.max_rel, rel[i]);
    rep.max_dir = std::max(rep.max_dir, dir[i]);
  }
  rep.seconds = sw.seconds();
  return rep;
}

// ------------------------------------------------------ active construction

struct ActiveRunOptions {
  std::string metric = "minkowski";  // minkowski or bump
  double T = 4.0;
  double box_half = 0.5;
  double theta1 = 0.2;
  int targets = 100;
  int triples = 25;
  std::uint64_t seed = 6;
  KappaOptions kappa;
};

struct ActiveRunReport {
  Kappas kappas;
  ActiveParams params;
  StepwiseResult stepwise;
  std::vector<Point> targets;
  std::vector<double> target_err;  // max over observers, inf when unresolved
  double max_err = 0;
  int triples = 0, triples_finite = 0;
  double max_triple_err = 0;
  double seconds = 0;

  json to_json() const {
    return {{"kappa1", kappas.kappa1},
            {"kappa2", params.kappa2},
            {"t0", params.t0},
            {"targets", targets.size()},
            {"unresolved", stepwise.unresolved},
            {"levels", stepwise.levels.size()},
            {"surfaces", stepwise.surfaces.size()},
            {"max_err", max_err},
            {"triples", triples},
            {"triples_below_s_plus", triples_finite},
            {"max_triple_err", max_triple_err}};
  }

  // per level: the surfaces first added there, with their witness points
  json construction_log() const {
    json levels = json::array();
    for (std::size_t l = 0; l < stepwise.levels.size(); ++l) {
      json surf = json::array();
      for (const auto& s : stepwise.surfaces) {
        if (s.level != int(l)) continue;
        json q = nullptr;
        if (s.S.q) q = std::vector<double>(s.S.q->x.data(), s.S.q->x.data() + 4);
        surf.push_back({{"times", s.S.times}, {"q_witness", q}, {"target", s.target}, {"near_axis", s.near_axis}});
      }
      levels.push_back({{"s1", stepwise.levels[l].s1}, {"s2", stepwise.levels[l].s2}, {"surfaces", surf}});
    }
    return {{"kappa2", params.kappa2}, {"t0", params.t0}, {"theta1", params.theta1}, {"levels", levels}};
  }
};

inline ObserverFamily active_family(const ActiveRunOptions& o) {
  std::vector<Vec3> pos{Vec3::Zero(), Vec3(0.3, 0, 0), Vec3(-0.1, 0.28, 0), Vec3(-0.1, -0.14, 0.24),
                        Vec3(-0.1, -0.14, -0.24)};
  MetricSpec m = o.metric == "bump" ? MetricSpec::bump(Vec4(0.0, 0.9, 0.3, 0.0), 0.5, 0.1) : MetricSpec::minkowski();
  return static_family(m, o.T, pos);
}

inline std::vector<Point> diamond_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<Point> out;
  while ((int)out.size() < n) {
    Point q(u(rng), u(rng), u(rng), u(rng));
    if (std::abs(q.t()) + q.y().norm() < 2.0) out.push_back(q);
  }
  return out;
}

struct ProbeTriple {
  NullEntry yz;
  double s1;
};

// Rays from just off the axis; every other one grazes the axis so it enters
// J+(mu(s1)) past t0. Triples entering before 1.2 t0 are skipped.
inline std::vector<ProbeTriple> probe_triples(const ObserverFamily& f, const ActiveParams& P, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> g;
  std::vector<ProbeTriple> out;
  while ((int)out.size() < n) {
    double s1 = -0.35 + 0.8 * u(rng);
    double t1 = f.hat().point(s1).t();
    Vec3 e = Vec3(g(rng), g(rng), g(rng)).normalized();
    auto [p1, p2] = ll::detail::frame(e);
    double d = 0.1 + 0.08 * u(rng), b = 0.01 + 0.05 * u(rng), eps = 0.002 + 0.03 * u(rng);
    bool graze = out.size() % 2 == 0;
    Point y(graze ? t1 - (d - eps) : t1 - 0.3 * u(rng), 0, 0, 0);
    y.x.tail<3>() = f.hat().point(s1).y() - d * e + b * p1;
    Vec3 dir = graze ? e : Vec3(e + 0.5 * g(rng) * p2);
    NullEntry yz = make_entry(f.spec, y, dir);
    if (S_function(f, P, yz, s1).r1 < 1.2 * P.t0) continue;
    out.push_back({yz, s1});
  }
  return out;
}

inline ActiveRunReport active_run(const ActiveRunOptions& o = {}) {
  Stopwatch sw;
  auto f = active_family(o);
  Region U = Region::box(-o.T, o.T, o.box_half);
  ActiveRunReport rep;
  rep.kappas = estimate_kappas(f, U, o.kappa);
  rep.params = make_params(f, U, o.theta1, o.kappa);
  const ActiveParams& P = rep.params;
  rep.targets = diamond_points(o.targets, o.seed);
  rep.stepwise = stepwise_construct(f, P, rep.targets);
  rep.target_err.assign(rep.targets.size(), kInf);
  for (std::size_t i = 0; i < rep.targets.size(); ++i) {
    int k = rep.stepwise.target_surface[i];
    if (k < 0) continue;
    auto d = earliest_light_obs_set(f, rep.targets[i]);
    double e = 0;
    for (std::size_t a = 0; a < f.size(); ++a) e = std::max(e, std::abs(d.times[a] - rep.stepwise.surfaces[k].S.times[a]));
    rep.target_err[i] = e;
  }
  for (double e : rep.target_err) rep.max_err = std::max(rep.max_err, e);
  auto trip = probe_triples(f, P, o.triples, o.seed + 1000);
  rep.triples = trip.size();
  std::vector<double> te(trip.size());
  std::vector<char> fin(trip.size());
  for (std::size_t i = 0; i < trip.size(); ++i) {
    auto S = S_function(f, P, trip[i].yz, trip[i].s1);
    auto G = genuine_observations(f, P, trip[i].yz, trip[i].s1, witness_prior(f, trip[i].s1));
    te[i] = std::abs(G.S_obs - S.value);
    fin[i] = S.value < f.par.s_p;
  }
  for (std::size_t i = 0; i < trip.size(); ++i) {
    rep.max_triple_err = std::max(rep.max_triple_err, te[i]);
    rep.triples_finite += fin[i];
  }
  rep.seconds = sw.seconds();
  return rep;
}

// ---------------------------------------------------------- fourwave tables

struct FourwaveOptions {
  std::vector<std::array<double, 4>> configs{{0.859, 0.277, 0.069, 0.933},
                                             {0.835, 0.935, 0.322, 0.108},
                                             {0.832, 0.057, 0.349, 0.93},
                                             {0.935, 0.879, 0.225, 0.082},
                                             {0.878, 0.095, 0.934, 0.266}};
  int oracle_ell = 3;
  std::vector<double> taus{1e3, 1e4, 1e5};
  double tau_ref = 1e4;
  std::vector<double> rho3s{0.3, 0.2, 0.1};
  int table_ell = 16;
  int polarizations = 20;
  std::uint64_t seed = 7;
};

struct FourwaveReport {
  std::vector<OracleReport> oracle;
  DominanceReport dominance;
  std::vector<TermValue> terms;  // catalog at the last rho3 of the table
  double table_rho3 = 0;
  int table_ell = 0;
  std::vector<double> g_log10;
  int g_zero = 0;
  double seconds = 0;

  double worst_slope() const {
    double w = 0;
    for (auto& r : oracle) w = std::max(w, std::abs(r.slope - r.predicted_power));
    return w;
  }
  double worst_coeff() const {
    double w = 0;
    for (auto& r : oracle) w = std::max(w, r.rel_err);
    return w;
  }
  json to_json() const {
    json o = json::array();
    for (auto& r : oracle)
      o.push_back({{"slope", r.slope}, {"predicted_power", r.predicted_power}, {"coeff_numeric", r.coeff_numeric},
                   {"coeff_closed", r.coeff_closed}, {"rel_err", r.rel_err}});
    json d = json::array();
    for (auto& r : dominance.rows)
      d.push_back({{"rho3", r.rho3}, {"log10_id", r.log10_id}, {"id_equals_sigma1", r.id_equals_sigma1},
                   {"id_dominant", r.id_dominant}, {"gap", r.gap}, {"tilde_gap", r.tilde_gap},
                   {"top", perm_name(r.top)}, {"top_kind", r.top_kind == TermKind::T ? "T" : "Ttilde"}});
    return {{"oracle", o},
            {"dominance", d},
            {"all_equal", dominance.all_equal},
            {"all_dominant", dominance.all_dominant},
            {"gaps_grow", dominance.gaps_grow},
            {"G_log10", g_log10},
            {"G_zero", g_zero}};
  }
};

inline FourwaveReport fourwave_run(const FourwaveOptions& o = {}) {
  Stopwatch sw;
  FourwaveReport rep;
  for (auto& rho : o.configs) rep.oracle.push_back(numeric_oracle(build_null_config(rho, o.oracle_ell), o.taus, o.tau_ref));
  rep.dominance = dominance_check(o.rho3s, o.table_ell);
  rep.table_rho3 = o.rho3s.back();
  rep.table_ell = o.table_ell;
  auto cf = hierarchy_config(rep.table_rho3, o.table_ell);
  rep.terms = all_terms(cf);
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int i = 0; i < o.polarizations; ++i) {
    auto c = cf;
    for (auto& x : c.v) x = u(rng);
    LogReal G = indicator_G(c);
    rep.g_zero += G.zero();
    rep.g_log10.push_back(G.zero() ? -kInf : G.log10abs());
  }
  rep.seconds = sw.seconds();
  return rep;
}

// ----------------------------------------------------------- PDE experiments

struct SimOptions {
  int dims = 3;
  int n = 512;
  double half = 4.0;
  double cfl = 0.0;  // 0: T / (1024 h), i.e. 1024 steps to the last slice
  int steps = 1024;
  double t_q = 2.5;
  double width_cells = 10;
  double window = 0.5;
  std::vector<double> slices{4.0, 4.5, 5.0};
  double theta = 0.25;
  double mask_cells = 6;
  bool negative = true;
  int translate = 2;
  double translate_by = 1.5;
  bool remainder = true;
  int rem_n = 96;
  std::vector<double> rem_eps{0.2, 0.1};
  double rem_T = 0.8;
  bool keep_snapshots = false;
};

struct SimReport {
  InteractionResult positive;
  std::optional<InteractionResult> negative;
  std::optional<RemainderReport> remainder;
  GridSpec grid;
  std::vector<Snapshot> snapshots;
  double seconds = 0;

  double max_cone_dist() const {
    double d = 0;
    for (auto& s : positive.slices) d = std::max(d, s.max_cone_dist);
    return d;
  }
  json to_json() const {
    auto one = [](const InteractionResult& r) {
      json sl = json::array();
      for (auto& s : r.slices)
        sl.push_back({{"t", s.t}, {"ridges", s.ridges.points.size()}, {"threshold", s.ridges.threshold},
                      {"frac_on_cone", s.frac_on_cone}, {"max_cone_dist", s.max_cone_dist}, {"coverage", s.coverage}});
      return json{{"front_detected", r.front_detected}, {"agreement", r.agreement}, {"tested", r.tested},
                  {"untested", r.untested}, {"h", r.h}, {"slices", sl}};
    };
    json j{{"dims", grid.dims}, {"n", grid.n}, {"half", grid.half}, {"cfl", grid.cfl}, {"dt", grid.dt()},
           {"positive", one(positive)}};
    if (negative) j["negative"] = one(*negative);
    if (remainder) j["remainder"] = {{"eps", remainder->eps}, {"sup", remainder->remainder}, {"exponent", remainder->exponent}};
    return j;
  }
};

inline InteractionConfig sim_config(const SimOptions& o) {
  InteractionConfig c;
  c.grid.dims = o.dims;
  c.grid.n = o.n;
  c.grid.half = o.half;
  double T = *std::max_element(o.slices.begin(), o.slices.end());
  c.grid.cfl = o.cfl > 0 ? o.cfl : T / (o.steps * c.grid.h());
  c.grid.validate();
  c.t_q = o.t_q;
  c.theta = o.theta;
  c.mask_cells = o.mask_cells;
  c.slices = o.slices;
  c.beams = beams_through(o.dims - 1, o.dims, Vec3::Zero(), o.t_q, o.width_cells * c.grid.h(), o.window);
  return c;
}

inline SimReport sim_run(const SimOptions& o) {
  Stopwatch sw;
  SimReport rep;
  InteractionConfig c = sim_config(o);
  c.keep_snapshots = o.keep_snapshots;
  rep.grid = c.grid;
  rep.positive = interaction_experiment(c);
  rep.snapshots = std::move(rep.positive.snapshots);
  if (o.negative) rep.negative = negative_control(c, rep.positive, o.translate, o.translate_by);
  if (o.remainder) {
    GridSpec g;
    g.dims = 3;
    g.n = o.rem_n;
    g.cfl = 0.4;
    Lattice L(g);
    BeamSpec b;
    b.t_hit = 0.5;
    b.width = 8 * g.h();
    b.window = 0.5;
    Field u0, v0;
    beam_data(L, b, u0, v0);
    rep.remainder = remainder_scaling(g, u0, v0, o.rem_eps, o.rem_T);
  }
  rep.seconds = sw.seconds();
  return rep;
}

}  // namespace ll::exp
