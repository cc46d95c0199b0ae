#pragma once

#include "ll/geodesic.hpp"
#include "ll/parallel.hpp"

#include "json.hpp"

#include <cmath>
#include <map>

namespace ll {

// Effective resolution of observation times: the tau predicate snaps to zero
// within ~1e-9 of the cone, and records are quantized to the same step.
constexpr double kTimeQuantum = 1e-9;

struct ObserverInit {
  Point z;
  Vec4 eta = Vec4::Zero();
};

struct Observer {
  int a = 0;
  ObserverInit init;
  GeodesicPath path;  // affine parameter s + 1

  std::pair<Point, Vec4> at(double s) const { return path.at(std::clamp(s, -1.0, 1.0) + 1.0); }
  Point point(double s) const { return at(s).first; }

  // parameter at which the worldline reaches coordinate time t
  std::optional<double> param_at_time(double t) const {
    double lo = -1.0, hi = 1.0;
    if (point(lo).t() > t || point(hi).t() < t) return std::nullopt;
    for (int it = 0; it < 60 && hi - lo > 1e-15; ++it) {
      double mid = 0.5 * (lo + hi);
      if (point(mid).t() < t) lo = mid;
      else hi = mid;
    }
    return 0.5 * (lo + hi);
  }
};

struct FamilyParams {
  double s_m2 = -0.8, s_m = -0.5, s_p = 0.5, s_p2 = 0.8;
};

struct ObserverFamily {
  MetricSpec spec;
  FamilyParams par;
  std::vector<Observer> observers;
  int a_hat = 0;

  std::size_t size() const { return observers.size(); }
  const Observer& operator[](std::size_t a) const { return observers[a]; }
  const Observer& hat() const { return observers[a_hat]; }
  Point p_minus() const { return hat().point(par.s_m); }
  Point p_plus() const { return hat().point(par.s_p); }
};

// Observers are geodesics of g with mu(-1) = z, mu'(-1) = eta.
inline ObserverFamily make_family(const MetricSpec& m, const std::vector<ObserverInit>& inits, const FamilyParams& par = {},
                                  int a_hat = 0) {
  if (!(-1 < par.s_m2 && par.s_m2 < par.s_m && par.s_m < par.s_p && par.s_p < par.s_p2 && par.s_p2 < 1))
    throw std::invalid_argument("family parameters must satisfy -1 < s-2 < s- < s+ < s+2 < 1");
  if (a_hat < 0 || a_hat >= (int)inits.size()) throw std::invalid_argument("distinguished observer out of range");
  ObserverFamily f;
  f.spec = m;
  f.par = par;
  f.a_hat = a_hat;
  for (std::size_t a = 0; a < inits.size(); ++a) {
    auto cc = causal_character(m, {inits[a].z, inits[a].eta});
    if (cc.cls != Causal::Timelike || cc.orient != Orientation::Future)
      throw std::invalid_argument("observer " + std::to_string(a) + " is not future timelike");
    Observer o;
    o.a = a;
    o.init = inits[a];
    o.path = integrate_geodesic(m, inits[a].z, inits[a].eta, 2.0);
    if (o.path.term != Termination::ReachedMaxParam || std::abs(o.path.end() - 2.0) > 1e-12)
      throw std::runtime_error("observer " + std::to_string(a) + " could not be integrated over [-1,1]");
    f.observers.push_back(std::move(o));
  }
  return f;
}

// Observers launched at time -T with velocity (T, T v) from the given
// spatial positions; the first one is the distinguished observer.
inline ObserverFamily static_family(const MetricSpec& m, double T, const std::vector<Vec3>& positions,
                                    const std::vector<Vec3>& velocities = {}, const FamilyParams& par = {}) {
  std::vector<ObserverInit> in;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    ObserverInit o;
    o.z = Point(Vec4(-T, positions[i](0), positions[i](1), positions[i](2)));
    o.eta = Vec4(T, 0, 0, 0);
    if (i < velocities.size()) o.eta.tail<3>() = T * velocities[i];
    if (m.kind == Kind::Warped) o.eta(0) /= std::sqrt(metric_at(m, o.z)(0, 0) * -1.0);
    in.push_back(o);
  }
  return make_family(m, in, par, 0);
}

// Condition on the family: mu_a(s-2) in I+(mu_hat(-1)) n I-(p-), mu_a(s+2) in I-(mu_hat(1)) n I+(p+).
inline bool check_family(const ObserverFamily& f) {
  const MetricSpec& m = f.spec;
  Point h0 = f.hat().point(-1.0), h1 = f.hat().point(1.0), pm = f.p_minus(), pp = f.p_plus();
  for (auto& o : f.observers) {
    Point a = o.point(f.par.s_m2), b = o.point(f.par.s_p2);
    if (chronological_relation(m, h0, a) != Relation::Chronological) return false;
    if (chronological_relation(m, a, pm) != Relation::Chronological) return false;
    if (chronological_relation(m, b, h1) != Relation::Chronological) return false;
    if (chronological_relation(m, pp, b) != Relation::Chronological) return false;
  }
  return true;
}

// ------------------------------------------------------- observation times

struct ObsTime {
  double s = 1.0;
  bool boundary = false;  // predicate never switched inside [-1, 1]
};

struct ObsOptions {
  int depth = 60;
  bool bisection_only = false;  // skip the worldline-hit solve on curved metrics
  // earliest cone hit inside the sampled worldline instead of the tau criterion;
  // differs only for sources whose cone refocuses before the family's time range
  bool first_cone_hit = false;
};

inline bool closed_form_tau(const MetricSpec& m) { return m.flat() || m.kind == Kind::ProductSphere; }

struct WorldlineHit {
  double s;
  Vec4 xi;  // at q, g+-unit
  double arrival;
};

namespace detail {

// Null geodesic from q hitting mu at some parameter: Newton on
// (direction, lambda, s) with exp_q(lambda xi(n)) = mu(s).
inline std::optional<WorldlineHit> hit_worldline(const MetricSpec& m, const Observer& ob, const Point& q, Vec3 n,
                                                 double lambda, double s, double time_sign) {
  Mat4 gq = metric_at(m, q);
  double best = kInf;
  int stall = 0;
  for (int it = 0; it < 40; ++it) {
    n.normalize();
    Vec4 xi = null_complete(m, q, n, time_sign);
    auto [e1, e2] = frame(n);
    Eigen::Matrix<double, 4, 2> dxi;
    dxi.col(0) = null_dir_derivative(gq, xi, e1, time_sign);
    dxi.col(1) = null_dir_derivative(gq, xi, e2, time_sign);
    auto [mp, mv] = ob.at(s);
    auto r = exp_jacobian<2>(m, q, xi, lambda, dxi, mp.chart);
    if (!r.ok) return std::nullopt;
    Vec4 F = r.p.x - mp.x;
    double res = std::sqrt(F.dot(gplus_at(m, mp) * F));
    if (res < 1e-11) {
      if (s < -1.0 - 1e-12 || s > 1.0 + 1e-12) return std::nullopt;
      double sc = gplus_norm(m, q, xi);
      return WorldlineHit{s, xi / sc, lambda * sc};
    }
    if (res < 0.999 * best) {
      best = res;
      stall = 0;
    } else if (++stall > 4) {
      return std::nullopt;
    }
    Mat4 J;
    J.leftCols<2>() = r.J;
    J.col(2) = r.v;
    J.col(3) = -mv;
    Vec4 d = J.fullPivLu().solve(-F);
    if (!d.allFinite()) return std::nullopt;
    Eigen::Vector2d du = d.head<2>();
    if (du.norm() > 0.5) du *= 0.5 / du.norm();
    n += du(0) * e1 + du(1) * e2;
    lambda = std::max(lambda + d(2), 0.25 * lambda);
    s = std::clamp(s + std::clamp(d(3), -0.25, 0.25), -1.05, 1.05);
  }
  return std::nullopt;
}

// Flat-space guess for the hit: parameter where mu crosses the Euclidean cone of q.
inline std::pair<Vec3, double> flat_hit_guess(const MetricSpec& m, const Observer& ob, const Point& q, double time_sign,
                                              double& s_out) {
  auto gap = [&](double s) {
    Point p = to_chart(ob.point(s), q.chart);
    return time_sign * (p.t() - q.t()) - (p.y() - q.y()).norm();
  };
  double lo = -1.0, hi = 1.0, glo = gap(lo), ghi = gap(hi);
  if ((glo > 0) == (ghi > 0)) {
    s_out = std::abs(glo) < std::abs(ghi) ? lo : hi;
  } else {
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      if ((gap(mid) > 0) == (glo > 0)) lo = mid;
      else hi = mid;
    }
    s_out = 0.5 * (lo + hi);
  }
  Point p = to_chart(ob.point(s_out), q.chart);
  Vec3 d = p.y() - q.y();
  Vec3 n = d.norm() > 1e-12 ? Vec3(d.normalized()) : Vec3::UnitX();
  Vec4 xi = null_complete(m, q, n, time_sign);
  return {n, std::max(std::abs(p.t() - q.t()) / std::abs(xi(0)), 1e-6)};
}

}  // namespace detail

// f+_a(q) = inf{s : tau(q, mu_a(s)) > 0}; f-_a(q) = sup{s : tau(mu_a(s), q) > 0}.
inline ObsTime earliest_obs_time(const ObserverFamily& f, std::size_t a, const Point& q, int sign = +1,
                                 const ObsOptions& o = {}) {
  const MetricSpec& m = f.spec;
  const Observer& ob = f[a];
  auto pred = [&](double s) {
    Point p = ob.point(s);
    // tau is already snapped to zero on the cone, so any positive value counts
    return sign > 0 ? time_separation(m, q, p) > 0.0 : time_separation(m, p, q) > 0.0;
  };
  // past case: predicate is true early, false late
  auto inside = [&](double s) { return sign > 0 ? pred(s) : !pred(s); };
  if (!closed_form_tau(m) && !o.bisection_only) {
    // the weak curved metrics have a unique null connection to each worldline point
    double s0;
    auto [n, lam] = detail::flat_hit_guess(m, ob, q, sign, s0);
    if (auto h = detail::hit_worldline(m, ob, q, n, lam, s0, sign))
      if (h->s > -1.0 && h->s < 1.0) return {h->s, false};
  }
  if (inside(-1.0)) return {-1.0, true};
  if (!inside(1.0)) return {1.0, true};
  double lo = -1.0, hi = 1.0;
  for (int it = 0; it < o.depth && hi - lo > 1e-15; ++it) {
    double mid = 0.5 * (lo + hi);
    if (inside(mid)) hi = mid;
    else lo = mid;
  }
  return {0.5 * (lo + hi), false};
}

// Gradient of f+_b at x from the arrival geometry: along a null geodesic
// g(gamma', J) is constant, so df(v) = g(xi, v) / g(eta, mu'(s)) with eta the
// arrival tangent. Returns nothing if no regular hit is found.
inline std::optional<Vec4> observation_gradient(const ObserverFamily& f, std::size_t b, const Point& x) {
  const MetricSpec& m = f.spec;
  const Observer& ob = f[b];
  double s0;
  auto [n, lam] = detail::flat_hit_guess(m, ob, x, 1.0, s0);
  auto h = detail::hit_worldline(m, ob, x, n, lam, s0, 1.0);
  if (!h) return std::nullopt;
  auto [mp, mv] = ob.at(h->s);
  auto e = exp_point(m, x, h->xi, h->arrival, mp.chart);
  if (!e) return std::nullopt;
  double den = e->second.dot(metric_at(m, mp) * mv);
  return Vec4(metric_at(m, x) * h->xi / den);
}

// Parameters s with mu_a(s) on the future light cone of q (including beyond
// cut points). Null geodesics from q in the chord and 26 lattice directions are
// scanned with step ~ds (in observer parameter) for near passes of the
// worldline; each near pass seeds the worldline-hit Newton.
inline std::vector<double> light_obs_set(const ObserverFamily& f, std::size_t a, const Point& q, double ds = 0.05) {
  const MetricSpec& m = f.spec;
  const Observer& ob = f[a];
  std::vector<double> out;
  auto add = [&](double s) {
    for (double t : out)
      if (std::abs(t - s) < 1e-7) return;
    out.push_back(s);
  };
  double t_end = ob.point(1.0).t();
  if (t_end <= q.t()) return out;
  std::vector<Vec3> starts;
  Point pe = to_chart(ob.point(0.0), q.chart);
  Vec3 d = pe.y() - q.y();
  if (m.kind != Kind::ProductSphere && d.norm() > 1e-12) starts.push_back(d.normalized());
  if (!m.flat() || starts.empty())
    for (auto& v : detail::lattice_directions()) starts.push_back(v);
  Region slab;
  slab.tmax = t_end + 0.1 * (t_end - q.t());
  for (const Vec3& n : starts) {
    Vec4 xi = null_complete(m, q, n);
    double lmax = 2.0 * (slab.tmax - q.t()) / xi(0);
    GeodesicPath path = integrate_geodesic(m, q, xi, lmax, slab);
    double h = ds * ob.at(0.0).second(0) / xi(0);
    int K = std::max(4, (int)std::ceil(path.end() / h));
    std::vector<double> D(K + 1, kInf), S(K + 1, 0.0), L(K + 1);
    for (int k = 0; k <= K; ++k) {
      L[k] = path.end() * k / K;
      Point p = path.at(L[k]).first;
      if (auto sp = ob.param_at_time(p.t())) {
        S[k] = *sp;
        D[k] = gplus_dist(m, p, ob.point(*sp));
      }
    }
    for (int k = 0; k <= K; ++k) {
      if (D[k] == kInf) continue;
      if ((k > 0 && D[k] > D[k - 1]) || (k < K && D[k] > D[k + 1])) continue;
      if (auto hit = detail::hit_worldline(m, ob, q, n, std::max(L[k], 1e-3), S[k], 1.0)) add(hit->s);
    }
    if (m.flat() && !out.empty()) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct ObservationRecord {
  std::optional<Point> truth;  // the source, absent in blind mode
  bool blind = false;
  std::vector<double> times;
  std::vector<char> boundary;

  const Point& source() const {
    if (blind || !truth) throw std::logic_error("record source is not accessible in blind mode");
    return *truth;
  }
  // E_U(q) as points, recovered from the family via mu_a(f_a)
  Point earliest_point(const ObserverFamily& f, std::size_t a) const { return f[a].point(times[a]); }
};

inline double quantize(double t) { return std::round(t / kTimeQuantum) * kTimeQuantum; }

inline ObservationRecord earliest_light_obs_set(const ObserverFamily& f, const Point& q, const ObsOptions& o = {},
                                                bool quantized = true) {
  ObservationRecord r;
  r.truth = q;
  for (std::size_t a = 0; a < f.size(); ++a) {
    ObsTime t;
    if (o.first_cone_hit) {
      auto hits = light_obs_set(f, a, q);
      t = hits.empty() ? ObsTime{1.0, true} : ObsTime{hits.front(), false};
    } else {
      t = earliest_obs_time(f, a, q, +1, o);
    }
    r.times.push_back(quantized ? quantize(t.s) : t.s);
    r.boundary.push_back(t.boundary);
  }
  return r;
}

inline std::vector<ObservationRecord> make_records(const ObserverFamily& f, const std::vector<Point>& sources,
                                                   bool blind = false, const ObsOptions& o = {}) {
  std::vector<ObservationRecord> out(sources.size());
  parallel_for(sources.size(), [&](std::size_t i) {
    out[i] = earliest_light_obs_set(f, sources[i], o);
    if (blind) {
      out[i].truth.reset();
      out[i].blind = true;
    }
  });
  return out;
}

// ----------------------------------------------------------- direction sets

struct DirectionEntry {
  std::size_t a;
  Point y;
  Vec4 eta;      // at y, future null
  Vec4 xi;       // at q, g+-unit
  double arrival;
  bool regular;  // strictly before the cut point
};

inline std::vector<DirectionEntry> direction_set(const ObserverFamily& f, const Point& q, double tol = 1e-6) {
  const MetricSpec& m = f.spec;
  std::vector<DirectionEntry> out;
  for (std::size_t a = 0; a < f.size(); ++a) {
    ObsTime t = earliest_obs_time(f, a, q);
    if (t.boundary) continue;
    Point y = f[a].point(t.s);
    // f+ is only resolved to the cone snap band, so the hit tolerance follows it
    NullConnectOptions no;
    no.tol_hit = 10 * kTolNull * std::max(1.0, y.t() - q.t());
    auto conns = null_connect(m, q, y, no);
    if (conns.empty()) throw std::runtime_error("direction_set: no null geodesic to observer " + std::to_string(a));
    for (auto& c : conns) {
      auto e = exp_point(m, q, c.xi, c.arrival, y.chart);
      if (!e) throw std::runtime_error("direction_set: integration failed");
      CutOptions co;
      co.max_param = 1.2 * c.arrival + 0.1;
      CutRecord cr = cut_time(m, q, c.xi, co);
      out.push_back({a, y, e->second, c.xi, c.arrival, c.arrival < cr.rho - tol});
    }
  }
  return out;
}

inline std::optional<Point> earliest_points(const ObserverFamily& f, std::size_t a, const std::vector<double>& params) {
  if (params.empty()) return std::nullopt;
  return f[a].point(*std::min_element(params.begin(), params.end()));
}

// ---------------------------------------------------------------- membership

struct MembershipOptions {
  double tol_member = 2 * kTimeQuantum;
  double tol_cross = 1e-6;  // g+-distance counted as passing through a worldline
  int samples = 200;
};

struct MembershipResult {
  bool member = false;
  bool exited = false;  // arc left the time slab of U; judged on the inside part
  int crossings = 0;
};

// Does the null arc through (y, eta) of parameter length `arc` stay on the
// earliest observation set of one of the records? Only the arc's crossings with
// sampled worldlines can be compared against record times.
inline MembershipResult geodesic_membership(const ObserverFamily& f, const std::vector<ObservationRecord>& records,
                                            const Point& y, const Vec4& eta, double arc, const MembershipOptions& o = {}) {
  const MetricSpec& m = f.spec;
  MembershipResult res;
  struct Crossing {
    std::size_t b;
    double s, dist;
  };
  std::vector<Crossing> cross;
  double tmin = f.hat().point(-1.0).t(), tmax = f.hat().point(1.0).t();
  Region slab;
  slab.tmin = tmin;
  slab.tmax = tmax;
  std::vector<std::pair<Point, double>> pts;
  if (arc > 0.0) {
    GeodesicPath path = integrate_geodesic(m, y, eta, arc, slab);
    res.exited = path.term == Termination::ExitedRegion;
    double send = path.end();
    for (int k = 0; k <= o.samples; ++k) pts.push_back({path.at(send * k / o.samples).first, send * k / o.samples});
  } else {
    pts.push_back({y, 0.0});
  }
  for (std::size_t b = 0; b < f.size(); ++b) {
    std::vector<double> D(pts.size(), kInf);
    std::vector<double> S(pts.size(), 0.0);
    for (std::size_t k = 0; k < pts.size(); ++k)
      if (auto s = f[b].param_at_time(pts[k].first.t())) {
        S[k] = *s;
        D[k] = gplus_dist(m, pts[k].first, f[b].point(*s));
      }
    for (std::size_t k = 0; k < pts.size(); ++k) {
      bool lmin = (k == 0 || D[k] <= D[k - 1]) && (k + 1 == pts.size() || D[k] <= D[k + 1]);
      if (!lmin || !(D[k] < 4.0 * arc / o.samples + o.tol_cross)) continue;
      double sk = S[k], dk = D[k];
      if (pts.size() > 1 && arc > 0.0) {
        // golden-section refinement of the closest pass on the neighbouring interval
        double a0 = pts[k == 0 ? 0 : k - 1].second, a1 = pts[std::min(k + 1, pts.size() - 1)].second;
        auto dist = [&](double s) {
          auto e = exp_point(m, y, eta, s);
          if (!e) return std::make_pair(kInf, 0.0);
          auto sb = f[b].param_at_time(e->first.t());
          if (!sb) return std::make_pair(kInf, 0.0);
          return std::make_pair(gplus_dist(m, e->first, f[b].point(*sb)), *sb);
        };
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        for (int it = 0; it < 60 && a1 - a0 > 1e-13; ++it) {
          double c = a1 - g * (a1 - a0), d = a0 + g * (a1 - a0);
          if (dist(c).first < dist(d).first) a1 = d;
          else a0 = c;
        }
        auto [dd, ss] = dist(0.5 * (a0 + a1));
        if (dd < dk) {
          dk = dd;
          sk = ss;
        }
      }
      if (dk < o.tol_cross) cross.push_back({b, sk, dk});
    }
  }
  res.crossings = cross.size();
  for (auto& r : records) {
    bool ok = true;
    for (auto& c : cross)
      if (std::abs(c.s - r.times[c.b]) > o.tol_member + c.dist) ok = false;
    if (ok) {
      res.member = true;
      break;
    }
  }
  return res;
}

// ------------------------------------------------------------------- JSON

inline nlohmann::ordered_json metric_to_json(const MetricSpec& m) {
  nlohmann::ordered_json j;
  j["kind"] = kind_name(m.kind);
  if (m.kind == Kind::Warped) {
    j["hubble"] = m.hubble;
    j["beta1"] = m.beta1;
  }
  if (m.kind == Kind::Bump) {
    j["center"] = std::vector<double>(m.center.data(), m.center.data() + 4);
    j["rb"] = m.rb;
    j["amp"] = m.amp;
  }
  return j;
}

inline MetricSpec metric_from_json(const nlohmann::json& j) {
  Kind k = kind_from_name(j.at("kind").get<std::string>());
  switch (k) {
    case Kind::Minkowski: return MetricSpec::minkowski();
    case Kind::ProductSphere: return MetricSpec::product_sphere();
    case Kind::Warped: return MetricSpec::warped(j.at("hubble").get<double>(), j.at("beta1").get<double>());
    case Kind::Bump: {
      auto c = j.at("center").get<std::vector<double>>();
      if (c.size() != 4) throw std::invalid_argument("bump center needs 4 components");
      return MetricSpec::bump(Vec4(c[0], c[1], c[2], c[3]), j.at("rb").get<double>(), j.at("amp").get<double>());
    }
  }
  throw std::invalid_argument("bad metric");
}

inline nlohmann::ordered_json records_to_json(const ObserverFamily& f, const std::vector<ObservationRecord>& recs) {
  nlohmann::ordered_json j;
  j["metric"] = metric_to_json(f.spec);
  j["params"] = {{"s_m2", f.par.s_m2}, {"s_m", f.par.s_m}, {"s_p", f.par.s_p}, {"s_p2", f.par.s_p2}, {"a_hat", f.a_hat}};
  j["observers"] = nlohmann::ordered_json::array();
  for (auto& o : f.observers) {
    nlohmann::ordered_json oj;
    oj["a"] = o.a;
    oj["init"] = {{"z", std::vector<double>(o.init.z.x.data(), o.init.z.x.data() + 4)},
                  {"chart", o.init.z.chart},
                  {"eta", std::vector<double>(o.init.eta.data(), o.init.eta.data() + 4)}};
    j["observers"].push_back(oj);
  }
  j["records"] = nlohmann::ordered_json::array();
  for (auto& r : recs) {
    nlohmann::ordered_json rj;
    std::vector<double> t;
    for (double v : r.times) t.push_back(quantize(v));
    rj["times"] = t;
    if (!r.blind && r.truth) {
      rj["source"] = std::vector<double>(r.truth->x.data(), r.truth->x.data() + 4);
      rj["source_chart"] = r.truth->chart;
    }
    j["records"].push_back(rj);
  }
  return j;
}

struct RecordSet {
  ObserverFamily family;
  std::vector<ObservationRecord> records;
};

// blind = true drops any stored sources.
inline RecordSet records_from_json(const nlohmann::json& j, bool blind = true) {
  MetricSpec m = metric_from_json(j.at("metric"));
  FamilyParams par;
  auto& p = j.at("params");
  par.s_m2 = p.at("s_m2");
  par.s_m = p.at("s_m");
  par.s_p = p.at("s_p");
  par.s_p2 = p.at("s_p2");
  std::vector<ObserverInit> in;
  for (auto& oj : j.at("observers")) {
    auto z = oj.at("init").at("z").get<std::vector<double>>();
    auto e = oj.at("init").at("eta").get<std::vector<double>>();
    ObserverInit o;
    o.z = Point(Vec4(z[0], z[1], z[2], z[3]), oj.at("init").at("chart").get<int>());
    o.eta = Vec4(e[0], e[1], e[2], e[3]);
    in.push_back(o);
  }
  RecordSet rs{make_family(m, in, par, p.at("a_hat").get<int>()), {}};
  for (auto& rj : j.at("records")) {
    ObservationRecord r;
    r.times = rj.at("times").get<std::vector<double>>();
    if (r.times.size() != in.size()) throw std::invalid_argument("record length does not match the family");
    r.boundary.assign(r.times.size(), 0);
    r.blind = blind;
    if (!blind && rj.contains("source")) {
      auto s = rj["source"].get<std::vector<double>>();
      r.truth = Point(Vec4(s[0], s[1], s[2], s[3]), rj.value("source_chart", 0));
    }
    rs.records.push_back(std::move(r));
  }
  return rs;
}

}  // namespace ll
