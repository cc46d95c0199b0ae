#pragma once

#include "ll/observation.hpp"

#include <Eigen/SVD>

#include <numeric>
#include <random>

namespace ll {

struct DegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PassiveOptions {
  int k = 12;                           // neighbours for stencils
  double cond_min = 1e-3;
  double embed_tol = 10 * kTimeQuantum;
  double fit_tol = 1e-6;                // on unit covectors; exact data only
};

// ---------------------------------------------------------------- sampling

// Clustered source sample for labeled scenarios: centers uniform in the box
// center +- half, each with 12 neighbours at +-h along six directions.
inline std::vector<Point> clustered_sources(const Vec4& center, const Vec4& half, int n_records, double h,
                                            std::mt19937_64& rng) {
  static const std::array<Vec4, 6> dirs = {Vec4(1, 0, 0, 0), Vec4(0, 1, 0, 0), Vec4(0, 0, 1, 0), Vec4(0, 0, 0, 1),
                                           Vec4(0.5, 0.5, 0.5, 0.5), Vec4(0.5, -0.5, 0.5, -0.5)};
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Point> out;
  while ((int)out.size() < n_records) {
    Vec4 c = center;
    for (int i = 0; i < 4; ++i) c(i) += half(i) * u(rng);
    out.push_back(Point(c));
    for (auto& d : dirs)
      for (double sg : {1.0, -1.0})
        if ((int)out.size() < n_records) out.push_back(Point(Vec4(c + sg * h * d)));
  }
  return out;
}

// ----------------------------------------------------------------- context

// Blind records plus the derived neighbour structure. Only times are read.
struct PassiveData {
  std::vector<Eigen::VectorXd> rec;  // record time vectors
  std::size_t A = 0;
  std::vector<std::vector<int>> knn;  // in record space
  double nn_scale = 0.0;              // median nearest-neighbour distance
  PassiveOptions opt;

  std::size_t size() const { return rec.size(); }
  // observer b has a usable (non-boundary) time at record r
  bool usable(int r, std::size_t b) const { return std::abs(rec[r](b)) < 1.0 - 1e-9; }
};

namespace detail {

inline std::vector<int> nearest(const std::vector<Eigen::VectorXd>& pts, int i, int k) {
  std::vector<std::pair<double, int>> d;
  d.reserve(pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j)
    if ((int)j != i) d.push_back({(pts[j] - pts[i]).squaredNorm(), (int)j});
  k = std::min<int>(k, d.size());
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<int> out;
  for (int j = 0; j < k; ++j) out.push_back(d[j].second);
  return out;
}

}  // namespace detail

inline PassiveData prepare(const std::vector<ObservationRecord>& records, const PassiveOptions& opt = {}) {
  if (records.size() < 2) throw std::invalid_argument("passive reconstruction needs at least 2 records");
  PassiveData d;
  d.opt = opt;
  d.A = records[0].times.size();
  for (auto& r : records) {
    if (r.times.size() != d.A) throw std::invalid_argument("records of different lengths");
    d.rec.push_back(Eigen::Map<const Eigen::VectorXd>(r.times.data(), d.A));
  }
  d.knn.resize(d.size());
  parallel_for(d.size(), [&](std::size_t i) { d.knn[i] = detail::nearest(d.rec, i, opt.k); });
  std::vector<double> nn;
  for (std::size_t i = 0; i < d.size(); ++i) nn.push_back((d.rec[d.knn[i][0]] - d.rec[i]).norm());
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  d.nn_scale = nn[nn.size() / 2];
  return d;
}

// ------------------------------------------------------------- embedding

struct EmbeddingReport {
  double min_sup_dist = kInf;
  bool pass = false;
  double ratio_lo = kInf, ratio_hi = 0.0;  // record sup-distance / source g+-distance, labeled pairs
};

inline EmbeddingReport check_embedding(const std::vector<ObservationRecord>& records, const PassiveOptions& opt = {},
                                       const MetricSpec* labeled = nullptr) {
  if (records.size() < 2) throw std::invalid_argument("check_embedding needs at least 2 records");
  EmbeddingReport rep;
  std::size_t n = records.size(), A = records[0].times.size();
  std::vector<double> best(n, kInf);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < A; ++a) s = std::max(s, std::abs(records[i].times[a] - records[j].times[a]));
      best[i] = std::min(best[i], s);
    }
  });
  rep.min_sup_dist = *std::min_element(best.begin(), best.end());
  rep.pass = rep.min_sup_dist > opt.embed_tol;
  if (labeled) {
    // calibration on consecutive pairs (clusters give small separations, across clusters large)
    for (std::size_t i = 0; i + 1 < n && i < 400; ++i) {
      double s = 0.0;
      for (std::size_t a = 0; a < A; ++a) s = std::max(s, std::abs(records[i].times[a] - records[i + 1].times[a]));
      double g = gplus_dist(*labeled, records[i].source(), records[i + 1].source());
      if (g > 0) {
        rep.ratio_lo = std::min(rep.ratio_lo, s / g);
        rep.ratio_hi = std::max(rep.ratio_hi, s / g);
      }
    }
  }
  return rep;
}

// ----------------------------------------------------------------- charts

struct ChartAssignment {
  std::array<int, 4> obs{};
  int seed = -1;
  std::vector<int> domain;
  double conditioning = 0.0;

  Vec4 map(const Eigen::VectorXd& r) const { return Vec4(r(obs[0]), r(obs[1]), r(obs[2]), r(obs[3])); }
};

namespace detail {

// Tangent directions of the record manifold at r by local PCA; row b is the
// differential of f_b in PCA coordinates. Unusable observers get a zero row.
inline Eigen::MatrixXd local_differentials(const PassiveData& d, int r, const std::vector<double>& weights = {}) {
  const auto& nb = d.knn[r];
  if (nb.size() < 4) throw DegenerateError("rank-deficient neighbourhood");
  Eigen::MatrixXd D(nb.size(), d.A);
  for (std::size_t i = 0; i < nb.size(); ++i) {
    double w = i < weights.size() ? weights[i] : 1.0;
    D.row(i) = w * (d.rec[nb[i]] - d.rec[r]).transpose();
  }
  for (std::size_t b = 0; b < d.A; ++b)
    if (!d.usable(r, b)) D.col(b).setZero();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(D, Eigen::ComputeThinV);
  auto sv = svd.singularValues();
  // curvature alone lifts sv(3) to O(spread) relative to sv(0)
  if (sv.size() < 4 || sv(3) < 1e-2 * sv(0)) throw DegenerateError("record manifold has rank < 4 at the seed");
  return svd.matrixV().leftCols(4);
}

inline double quad_conditioning(const Eigen::MatrixXd& rows, const std::array<int, 4>& q) {
  Mat4 M;
  for (int j = 0; j < 4; ++j) {
    Eigen::RowVectorXd v = rows.row(q[j]);
    double nv = v.norm();
    if (nv == 0.0) return 0.0;
    M.row(j) = v / nv;
  }
  return Eigen::JacobiSVD<Mat4>(M).singularValues()(3);
}

struct QuadChoice {
  std::array<int, 4> q{};
  double best = 0.0, second = 0.0;
};

inline QuadChoice best_quadruple(const Eigen::MatrixXd& rows) {
  QuadChoice c;
  int A = rows.rows();
  for (int i = 0; i < A; ++i)
    for (int j = i + 1; j < A; ++j)
      for (int k = j + 1; k < A; ++k)
        for (int l = k + 1; l < A; ++l) {
          double v = quad_conditioning(rows, {i, j, k, l});
          if (v > c.best) {
            c.second = c.best;
            c.best = v;
            c.q = {i, j, k, l};
          } else if (v > c.second) {
            c.second = v;
          }
        }
  return c;
}

}  // namespace detail

// Chart from four observers whose differentials are best conditioned at the
// seed; the domain takes every record where the quadruple stays conditioned and
// the chart images stay distinct.
inline ChartAssignment build_chart(const PassiveData& d, int seed, const std::vector<double>& weights = {}) {
  int usable = 0;
  for (std::size_t b = 0; b < d.A; ++b) usable += d.usable(seed, b);
  if (usable < 4) throw DegenerateError("fewer than four observers see the seed record");
  Eigen::MatrixXd rows = detail::local_differentials(d, seed, weights);
  auto qc = detail::best_quadruple(rows);
  if (qc.best <= d.opt.cond_min) throw DegenerateError("no independent observer quadruple at the seed");
  ChartAssignment c;
  c.obs = qc.q;
  c.seed = seed;
  c.conditioning = qc.best;
  // grow outward from the seed in record distance; clustered samples leave the
  // knn graph disconnected, so every record is a candidate
  std::vector<std::pair<double, int>> order;
  for (std::size_t r = 0; r < d.size(); ++r) order.push_back({(d.rec[r] - d.rec[seed]).squaredNorm(), (int)r});
  std::sort(order.begin(), order.end());
  std::vector<Vec4> images;
  for (auto [dist, r] : order) {
    bool ok = true;
    for (int b : c.obs) ok &= d.usable(r, b);
    if (ok && r != seed) {
      try {
        ok = detail::quad_conditioning(detail::local_differentials(d, r), c.obs) > d.opt.cond_min;
      } catch (const std::runtime_error&) {
        ok = false;
      }
    }
    if (!ok) continue;
    Vec4 img = c.map(d.rec[r]);
    for (auto& o : images)
      if ((o - img).lpNorm<Eigen::Infinity>() <= d.opt.embed_tol) ok = false;
    if (!ok) continue;
    images.push_back(img);
    c.domain.push_back(r);
  }
  std::sort(c.domain.begin(), c.domain.end());
  return c;
}

// Interior records: full neighbourhoods at the local sampling scale.
inline std::vector<char> interior_records(const PassiveData& d) {
  std::vector<char> in(d.size(), 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    int cnt = 0;
    for (int nb : d.knn[i]) cnt += (d.rec[nb] - d.rec[i]).norm() < 4.0 * d.nn_scale;
    in[i] = cnt >= 10;
  }
  return in;
}

struct Atlas {
  std::vector<ChartAssignment> charts;
  std::vector<int> chart_of;  // -1 when uncovered
};

inline Atlas build_atlas(const PassiveData& d) {
  Atlas at;
  at.chart_of.assign(d.size(), -1);
  auto interior = interior_records(d);
  std::vector<char> tried(d.size(), 0);
  for (std::size_t s = 0; s < d.size(); ++s) {
    if (at.chart_of[s] >= 0 || tried[s] || !interior[s]) continue;
    tried[s] = 1;
    ChartAssignment c;
    try {
      c = build_chart(d, s);
    } catch (const std::runtime_error&) {
      continue;
    }
    int id = at.charts.size();
    for (int r : c.domain)
      if (at.chart_of[r] < 0) at.chart_of[r] = id;
    at.charts.push_back(std::move(c));
  }
  return at;
}

// ------------------------------------------------------------- covectors

struct Covector {
  int b;
  Vec4 w;
};

// d f_b at record r in the chart's coordinates, by weighted least squares over
// the k nearest records in chart coordinates.
inline std::vector<Covector> null_covectors_at(const PassiveData& d, const ChartAssignment& c, int r) {
  if (!std::binary_search(c.domain.begin(), c.domain.end(), r)) throw std::invalid_argument("record outside the chart domain");
  // chart-space neighbours among the chart's domain
  std::vector<std::pair<double, int>> cand;
  Vec4 x0 = c.map(d.rec[r]);
  for (int j : c.domain)
    if (j != r) cand.push_back({(c.map(d.rec[j]) - x0).squaredNorm(), j});
  int k = std::min<int>(d.opt.k, cand.size());
  if (k < 4) throw std::runtime_error("rank-deficient neighbourhood: " + std::to_string(k) + " neighbours");
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
  Eigen::MatrixXd X(k, 4);
  Eigen::VectorXd W(k);
  for (int i = 0; i < k; ++i) {
    X.row(i) = (c.map(d.rec[cand[i].second]) - x0).transpose();
    W(i) = 1.0 / std::sqrt(cand[i].first);
  }
  Eigen::MatrixXd WX = W.asDiagonal() * X;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(WX, Eigen::ComputeThinU | Eigen::ComputeThinV);
  auto sv = svd.singularValues();
  if (sv(3) < 1e-8 * sv(0)) throw std::runtime_error("rank-deficient neighbourhood");
  std::vector<Covector> out;
  for (std::size_t b = 0; b < d.A; ++b) {
    if (!d.usable(r, b)) continue;
    bool ok = true;
    Eigen::VectorXd y(k);
    for (int i = 0; i < k; ++i) {
      ok &= d.usable(cand[i].second, b);
      y(i) = d.rec[cand[i].second](b) - d.rec[r](b);
    }
    if (!ok) continue;
    out.push_back({(int)b, svd.solve(W.asDiagonal() * y)});
  }
  return out;
}

// ---------------------------------------------------------- conformal fit

struct ConformalFit {
  int point = -1;
  Mat4 G = Mat4::Zero();      // metric representative, G*(theta, theta) = -1
  Mat4 Gstar = Mat4::Zero();  // dual quadric annihilating the covectors
  double residual = 0.0;      // max |G*(w, w)| over unit covectors
  Vec4 orientation = Vec4::Zero();
};

// Dual-quadric fit: G* symmetric, |G*|_F = 1, w^T G* w = 0 for all covectors.
// orientation = -(df_a1 + df_a2), declared future.
inline ConformalFit fit_conformal_metric(const std::vector<Vec4>& covectors, const Vec4& orientation) {
  int n = covectors.size();
  if (n < 9) throw std::invalid_argument("ambiguous fit: " + std::to_string(n) + " covectors, need 9");
  Eigen::MatrixXd Q(n, 10);
  std::vector<Vec4> u;
  for (int r = 0; r < n; ++r) {
    Vec4 w = covectors[r].normalized();
    u.push_back(w);
    int c = 0;
    for (int i = 0; i < 4; ++i)
      for (int j = i; j < 4; ++j) Q(r, c++) = (i == j ? 1.0 : 2.0) * w(i) * w(j);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Q, Eigen::ComputeFullV);
  auto sv = svd.singularValues();
  if (sv(8) <= std::max(1e-8 * sv(0), 10.0 * sv(9))) throw std::runtime_error("ambiguous fit: null space is not one-dimensional");
  Eigen::Matrix<double, 10, 1> g = svd.matrixV().col(9);
  Mat4 S;
  int c = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i; j < 4; ++j) S(i, j) = S(j, i) = g(c++);
  Eigen::SelfAdjointEigenSolver<Mat4> es(S);
  int neg = (es.eigenvalues().array() < 0).count();
  if (neg == 3) {
    S = -S;
    neg = 1;
  }
  if (neg != 1) throw std::runtime_error("fitted quadric is not Lorentzian");
  double th = orientation.dot(S * orientation);
  if (!(th < 0)) throw std::runtime_error("orientation covector is not timelike for the fit");
  S /= -th;
  ConformalFit f;
  f.Gstar = S;
  f.G = S.inverse();
  f.orientation = orientation;
  for (auto& w : u) f.residual = std::max(f.residual, std::abs(w.dot(S * w)) / S.norm());
  return f;
}

inline ConformalFit fit_at(const PassiveData& d, const ChartAssignment& c, int r) {
  auto cv = null_covectors_at(d, c, r);
  std::vector<Vec4> w;
  for (auto& x : cv) w.push_back(x.w);
  ConformalFit f = fit_conformal_metric(w, -(Vec4::Unit(0) + Vec4::Unit(1)));
  f.point = r;
  return f;
}

// ------------------------------------------------------------- pipeline

struct PassiveResult {
  PassiveData data;
  EmbeddingReport embedding;
  Atlas atlas;
  std::vector<ConformalFit> fits;
  std::vector<int> fit_chart;
  int interior = 0, charted = 0, fit_failures = 0;
};

inline PassiveResult reconstruct(const std::vector<ObservationRecord>& records, const PassiveOptions& opt = {}) {
  PassiveResult res;
  res.embedding = check_embedding(records, opt);
  res.data = prepare(records, opt);
  res.atlas = build_atlas(res.data);
  auto interior = interior_records(res.data);
  std::vector<int> todo;
  for (std::size_t r = 0; r < res.data.size(); ++r) {
    if (!interior[r]) continue;
    ++res.interior;
    if (res.atlas.chart_of[r] >= 0) {
      ++res.charted;
      todo.push_back(r);
    }
  }
  std::vector<std::optional<ConformalFit>> out(todo.size());
  parallel_for(todo.size(), [&](std::size_t i) {
    int r = todo[i];
    try {
      out[i] = fit_at(res.data, res.atlas.charts[res.atlas.chart_of[r]], r);
    } catch (const std::runtime_error&) {
    } catch (const std::invalid_argument&) {
    }
  });
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (!out[i]) {
      ++res.fit_failures;
      continue;
    }
    res.fits.push_back(*out[i]);
    res.fit_chart.push_back(res.atlas.chart_of[todo[i]]);
  }
  return res;
}

// Labeled scenario: distinguished observer on the axis, fifteen more on a
// sphere of radius 1.2 about (0.5, 0, 0); sources clustered around the bump.
struct PassiveScenario {
  ObserverFamily family;
  std::vector<Point> sources;
};

inline MetricSpec passive_bump() { return MetricSpec::bump(Vec4(0, 0.5, 0, 0), 0.25, 0.1); }

inline PassiveScenario passive_scenario(const MetricSpec& m, int n_records, double h, std::uint64_t seed) {
  std::vector<Vec3> pos{Vec3::Zero()};
  const double ga = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < 15; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / 15.0, r = std::sqrt(1.0 - z * z);
    pos.push_back(Vec3(0.5, 0, 0) + 1.2 * Vec3(r * std::cos(ga * i), r * std::sin(ga * i), z));
  }
  FamilyParams par;
  par.s_m2 = -0.75;
  par.s_p2 = 0.75;
  PassiveScenario sc{static_family(m, 8.0, pos, {}, par), {}};
  std::mt19937_64 rng(seed);
  sc.sources = clustered_sources(Vec4(0, 0.5, 0, 0), Vec4(0.15, 0.2, 0.2, 0.2), n_records, h, rng);
  return sc;
}

// ----------------------------------------------------------- verification

struct FitTruth {
  Mat4 g_chart;     // true metric pulled into chart coordinates
  Mat4 chart_jac;   // d(chart)/dx at the source
  Mat4 g;           // true metric at the source
};

// Labeled side: the chart Jacobian from the gradient law of the four chart observers.
inline std::optional<FitTruth> chart_truth(const ObserverFamily& f, const ChartAssignment& c, const Point& x) {
  FitTruth t;
  for (int j = 0; j < 4; ++j) {
    auto w = observation_gradient(f, c.obs[j], x);
    if (!w) return std::nullopt;
    t.chart_jac.row(j) = w->transpose();
  }
  t.g = metric_at(f.spec, x);
  Mat4 Di = t.chart_jac.inverse();
  t.g_chart = Di.transpose() * t.g * Di;
  return t;
}

// relative Frobenius error of G against the best multiple of g, and that multiple
inline std::pair<double, double> conformal_error(const Mat4& G, const Mat4& g) {
  double c = (G.array() * g.array()).sum() / g.squaredNorm();
  return {(G - c * g).norm() / (c * g).norm(), c};
}

struct ConformalReport {
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::vector<double> scale;
  bool orientation_ok = true;
  int orientation_failures = 0;
  double scale_jump = 0.0;  // max relative change of c between consecutive fits
  int n = 0;
};

inline ConformalReport verify_conformal(const std::vector<ConformalFit>& fits, const std::vector<FitTruth>& truth) {
  ConformalReport rep;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    auto [e, c] = conformal_error(fits[i].G, truth[i].g_chart);
    rep.max_rel_error = std::max(rep.max_rel_error, e);
    rep.mean_rel_error += e;
    rep.scale.push_back(c);
    // orientation: raise the pulled-back covector with the true metric
    Vec4 th = truth[i].chart_jac.transpose() * fits[i].orientation;
    Vec4 v = truth[i].g.inverse() * th;
    bool fut = th.dot(v) < 0 && v(0) > 0;
    if (!fut) {
      rep.orientation_ok = false;
      ++rep.orientation_failures;
    }
    if (i > 0) rep.scale_jump = std::max(rep.scale_jump, std::abs(c - rep.scale[i - 1]) / std::abs(c));
  }
  rep.n = fits.size();
  if (rep.n) rep.mean_rel_error /= rep.n;
  return rep;
}

// -------------------------------------------------- Ricci-flat conformal factor

struct FactorReport {
  double sup_abs_f = 0.0;
  double final_f = 0.0;
  int steps = 0;
};

// Integrates grad_j grad_k f = (grad_j f)(grad_k f) - g^pq (grad_p f)(grad_q f) g_jk
// for Y = df along a polyline of records in chart coordinates, with G and its
// derivatives taken from least-squares fits over neighbouring ConformalFits.
inline FactorReport ricci_flat_factor(const PassiveData& d, const ChartAssignment& c, const std::vector<ConformalFit>& fits,
                                      const std::vector<int>& path, const Vec4& Y0 = Vec4::Zero(), int substeps = 20) {
  FactorReport rep;
  if (path.size() < 2) return rep;
  std::vector<Vec4> pos;
  for (auto& f : fits) pos.push_back(c.map(d.rec[f.point]));
  auto nearest_fit = [&](const Vec4& x) {
    int best = -1;
    double bd = kInf;
    for (std::size_t i = 0; i < pos.size(); ++i)
      if ((pos[i] - x).squaredNorm() < bd) {
        bd = (pos[i] - x).squaredNorm();
        best = i;
      }
    return std::make_pair(best, std::sqrt(bd));
  };
  // chart-space scale of the sample
  double scale = 0.0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i)
    scale = std::max(scale, (c.map(d.rec[path[i + 1]]) - c.map(d.rec[path[i]])).norm());
  // G(x) and dG(x) by a linear fit over fits near x
  auto field = [&](const Vec4& x, Mat4& G, std::array<Mat4, 4>& dG) {
    auto [i0, dist] = nearest_fit(x);
    if (i0 < 0 || dist > 4.0 * std::max(scale, 1e-12)) throw std::runtime_error("path exits the fitted domain");
    std::vector<std::pair<double, int>> nb;
    for (std::size_t i = 0; i < pos.size(); ++i) nb.push_back({(pos[i] - pos[i0]).squaredNorm(), (int)i});
    int k = std::min<int>(13, nb.size());
    std::partial_sort(nb.begin(), nb.begin() + k, nb.end());
    Eigen::MatrixXd X(k, 5);
    for (int i = 0; i < k; ++i) {
      X(i, 0) = 1.0;
      X.block<1, 4>(i, 1) = (pos[nb[i].second] - pos[i0]).transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    G.setZero();
    for (auto& m : dG) m.setZero();
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        Eigen::VectorXd y(k);
        for (int i = 0; i < k; ++i) y(i) = fits[nb[i].second].G(a, b);
        Eigen::VectorXd cf = svd.solve(y);
        Vec4 dx = x - pos[i0];
        G(a, b) = G(b, a) = cf(0) + cf.tail<4>().dot(dx);
        for (int j = 0; j < 4; ++j) dG[j](a, b) = dG[j](b, a) = cf(1 + j);
      }
  };
  auto rhs = [&](const Vec4& x, const Vec4& xdot, const Eigen::Matrix<double, 5, 1>& s) {
    Mat4 G;
    std::array<Mat4, 4> dG;
    field(x, G, dG);
    Mat4 Gi = G.inverse();
    Vec4 Y = s.tail<4>();
    double YY = Y.dot(Gi * Y);
    Eigen::Matrix<double, 5, 1> ds;
    ds(0) = xdot.dot(Y);
    for (int k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (int j = 0; j < 4; ++j) {
        if (xdot(j) == 0.0) continue;
        // Gamma^l_jk Y_l
        double gam = 0.0;
        for (int l = 0; l < 4; ++l) {
          double G_ljk = 0.0;
          for (int m = 0; m < 4; ++m) G_ljk += 0.5 * Gi(l, m) * (dG[j](m, k) + dG[k](m, j) - dG[m](j, k));
          gam += G_ljk * Y(l);
        }
        acc += xdot(j) * (gam + Y(j) * Y(k) - YY * G(j, k));
      }
      ds(1 + k) = acc;
    }
    return ds;
  };
  Eigen::Matrix<double, 5, 1> s;
  s << 0.0, Y0;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    Vec4 a = c.map(d.rec[path[i]]), b = c.map(d.rec[path[i + 1]]);
    Vec4 xd = b - a;
    double h = 1.0 / substeps;
    for (int k = 0; k < substeps; ++k) {
      Vec4 x = a + (k * h) * xd;
      auto k1 = rhs(x, xd, s);
      auto k2 = rhs(x + 0.5 * h * xd, xd, s + 0.5 * h * k1);
      auto k3 = rhs(x + 0.5 * h * xd, xd, s + 0.5 * h * k2);
      auto k4 = rhs(x + h * xd, xd, s + h * k3);
      s += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      rep.sup_abs_f = std::max(rep.sup_abs_f, std::abs(s(0)));
      ++rep.steps;
    }
  }
  rep.final_f = s(0);
  return rep;
}

}  // namespace ll
