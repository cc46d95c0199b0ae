#include <gtest/gtest.h>

#include <random>

#include "ll/passive.hpp"

using namespace ll;

namespace {

// records of a small labeled scenario, without quantization when exact is set
std::vector<ObservationRecord> records_for(const ObserverFamily& f, const std::vector<Point>& src, bool exact = false) {
  std::vector<ObservationRecord> out(src.size());
  parallel_for(src.size(), [&](std::size_t i) { out[i] = earliest_light_obs_set(f, src[i], {}, !exact); });
  return out;
}

Vec4 flat_grad(const Point& q, const Observer& ob) {
  Vec3 xa = ob.init.z.y();
  Vec3 u = (q.y() - xa).normalized();
  double T = ob.init.eta(0);
  return Vec4(1, u(0), u(1), u(2)) / T;
}

std::vector<Vec3> tetra() {
  return {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
}

}  // namespace

TEST(Embedding, SeparatedAndIdentical) {
  const double T = 4.0;
  auto f = static_family(MetricSpec::minkowski(), T, {Vec3::Zero(), Vec3(1, 0, 0)});
  auto recs = make_records(f, {Point(0, 0, 0, 0), Point(0.1, 0, 0, 0)}, true);
  auto rep = check_embedding(recs);
  EXPECT_TRUE(rep.pass);
  EXPECT_GE(rep.min_sup_dist, 0.1 / T - 1e-9);
  auto same = make_records(f, {Point(0, 0.2, 0, 0), Point(0, 0.2, 0, 0)}, true);
  EXPECT_FALSE(check_embedding(same).pass);
  EXPECT_THROW(check_embedding({recs[0]}), std::invalid_argument);
}

TEST(Embedding, SphereAntipodalPairFails) {
  auto m = MetricSpec::product_sphere();
  auto f = static_family(m, 1.0, {Vec3(0.1, 0.0, 0.0), Vec3(0.0, 0.3, 0.2), Vec3(-0.2, 0.1, 0.4)});
  Vec3 x1(0.5, -0.4, 0.3);
  Vec3 anti = sphere::from_embedding(-sphere::to_embedding(x1, 0), 0);
  ObsOptions o;
  o.first_cone_hit = true;
  std::vector<ObservationRecord> recs{earliest_light_obs_set(f, Point(Vec4(-1.2, x1(0), x1(1), x1(2))), o),
                                      earliest_light_obs_set(f, Point(Vec4(-1.2 - kPi, anti(0), anti(1), anti(2))), o)};
  auto rep = check_embedding(recs);
  EXPECT_FALSE(rep.pass);
  EXPECT_LT(rep.min_sup_dist, 1e-8);
}

TEST(Embedding, CalibrationRatioBounded) {
  auto sc = passive_scenario(MetricSpec::minkowski(), 39, 5e-4, 3);
  auto recs = records_for(sc.family, sc.sources);
  auto rep = check_embedding(recs, {}, &sc.family.spec);
  EXPECT_TRUE(rep.pass);
  EXPECT_GT(rep.ratio_lo, 0.01);
  EXPECT_LT(rep.ratio_hi, 1.0);
}

TEST(Chart, TetrahedralObserversWellConditioned) {
  auto f = static_family(MetricSpec::minkowski(), 4.0, tetra());
  std::mt19937_64 rng(1);
  auto src = clustered_sources(Vec4(0, 0.1, 0, -0.1), Vec4(0.05, 0.1, 0.1, 0.1), 26, 1e-3, rng);
  auto d = prepare(records_for(f, src));
  auto c = build_chart(d, 0);
  EXPECT_GT(c.conditioning, 0.1);
  // same conditioning measure on the closed-form gradients (rows normalized, in any basis
  // the smallest singular value of the normalized 4x4 is what we compare loosely)
  Mat4 G;
  for (int j = 0; j < 4; ++j) G.row(j) = flat_grad(src[0], f[c.obs[j]]).normalized().transpose();
  EXPECT_GT(Eigen::JacobiSVD<Mat4>(G).singularValues()(3), 0.1);
  // the seed maps to its own times
  for (int j = 0; j < 4; ++j) EXPECT_EQ(c.map(d.rec[0])(j), d.rec[0](c.obs[j]));
  EXPECT_EQ(c.domain.size(), src.size());
}

TEST(Chart, CollinearObserversAreDegenerate) {
  auto f = static_family(MetricSpec::minkowski(), 4.0,
                         {Vec3(-1, 0, 0), Vec3(-0.4, 0, 0), Vec3(0.5, 0, 0), Vec3(1.1, 0, 0)});
  std::mt19937_64 rng(2);
  auto src = clustered_sources(Vec4(0, 0, 0.3, 0.2), Vec4(0.05, 0.1, 0.1, 0.1), 13, 1e-3, rng);
  auto d = prepare(records_for(f, src, true));
  EXPECT_THROW(build_chart(d, 0), DegenerateError);
}

TEST(Covectors, ChartObserversAreUnitAndFlatGradientsMatch) {
  auto sc = passive_scenario(MetricSpec::minkowski(), 13 * 6, 5e-4, 4);
  auto recs = records_for(sc.family, sc.sources);
  auto d = prepare(recs);
  auto c = build_chart(d, 0);
  double worst = 0.0;
  int checked = 0;
  for (int r = 0; r < (int)d.size(); r += 13) {
    if (!std::binary_search(c.domain.begin(), c.domain.end(), r)) continue;
    ++checked;
    auto cv = null_covectors_at(d, c, r);
    ASSERT_EQ(cv.size(), d.A);
    Mat4 D;
    for (int j = 0; j < 4; ++j) D.row(j) = flat_grad(sc.sources[r], sc.family[c.obs[j]]).transpose();
    for (auto& x : cv) {
      auto pos = std::find(c.obs.begin(), c.obs.end(), x.b);
      if (pos != c.obs.end()) {
        EXPECT_LT((x.w - Vec4::Unit(pos - c.obs.begin())).norm(), 1e-9);
      }
      Vec4 truth = flat_grad(sc.sources[r], sc.family[x.b]);
      Vec4 got = D.transpose() * x.w;  // pulled back to (t, y)
      worst = std::max(worst, (got - truth).norm() / truth.norm());
    }
  }
  EXPECT_GE(checked, 4);
  EXPECT_LT(worst, 1e-3);
}

TEST(Covectors, TinyNeighbourhoodIsRankError) {
  auto f = static_family(MetricSpec::minkowski(), 4.0, tetra());
  auto d = prepare(records_for(f, {Point(0, 0, 0, 0), Point(0.01, 0, 0, 0), Point(0, 0.01, 0, 0), Point(0, 0, 0.01, 0)}));
  ChartAssignment c;
  c.obs = {0, 1, 2, 3};
  c.domain = {0, 1, 2, 3};
  EXPECT_THROW(null_covectors_at(d, c, 0), std::runtime_error);
}

TEST(Fit, ExactMinkowskiCone) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<Vec4> w;
  for (int i = 0; i < 12; ++i) {
    Vec3 u = Vec3(n(rng), n(rng), n(rng)).normalized();
    w.push_back(Vec4(1, u(0), u(1), u(2)));
  }
  auto fit = fit_conformal_metric(w, -(w[0] + w[1]));
  EXPECT_LT(fit.residual, 1e-10);
  Mat4 eta = Vec4(-1, 1, 1, 1).asDiagonal();
  EXPECT_LT(conformal_error(fit.G, eta).first, 1e-10);
  EXPECT_GT(conformal_error(fit.G, eta).second, 0.0);
  EXPECT_LT(fit.orientation.dot(fit.Gstar * fit.orientation), 0.0);
  w.resize(8);
  EXPECT_THROW(fit_conformal_metric(w, -(w[0] + w[1])), std::invalid_argument);
}

TEST(Fit, DegenerateCovectorsAmbiguous) {
  // all covectors on one 2-plane cone section: many quadrics vanish on them
  std::vector<Vec4> w;
  for (int i = 0; i < 12; ++i) w.push_back(Vec4(1, std::cos(0.5 * i), std::sin(0.5 * i), 0));
  EXPECT_THROW(fit_conformal_metric(w, -(w[0] + w[1])), std::runtime_error);
}

TEST(Verify, MinkowskiExactAndMismatchedTruth) {
  auto sc = passive_scenario(MetricSpec::minkowski(), 13 * 5, 1e-4, 6);
  auto recs = records_for(sc.family, sc.sources, true);
  auto d = prepare(recs);
  auto c = build_chart(d, 0);
  std::vector<ConformalFit> fits;
  std::vector<FitTruth> truth, wrong;
  auto sph = static_family(MetricSpec::product_sphere(), 8.0, [&] {
    std::vector<Vec3> p;
    for (auto& o : sc.family.observers) p.push_back(o.init.z.y());
    return p;
  }());
  for (int r = 0; r < (int)d.size(); r += 13) {
    if (!std::binary_search(c.domain.begin(), c.domain.end(), r)) continue;
    fits.push_back(fit_at(d, c, r));
    truth.push_back(*chart_truth(sc.family, c, sc.sources[r]));
    auto t = *chart_truth(sc.family, c, sc.sources[r]);
    t.g = metric_at(sph.spec, sc.sources[r]);
    Mat4 Di = t.chart_jac.inverse();
    t.g_chart = Di.transpose() * t.g * Di;
    wrong.push_back(t);
  }
  ASSERT_GE(fits.size(), 3u);
  auto rep = verify_conformal(fits, truth);
  EXPECT_LT(rep.max_rel_error, 1e-6);
  EXPECT_TRUE(rep.orientation_ok);
  // with G normalized on theta, c is fixed by the true dual metric on theta
  for (std::size_t i = 0; i < fits.size(); ++i) {
    Vec4 th = truth[i].chart_jac.transpose() * fits[i].orientation;
    double pred = -th.dot(truth[i].g.inverse() * th);
    EXPECT_NEAR(rep.scale[i] / pred, 1.0, 1e-6);
  }
  EXPECT_GT(verify_conformal(fits, wrong).max_rel_error, 0.1);
}

TEST(Verify, BumpLabeledFitMatchesPullback) {
  auto sc = passive_scenario(passive_bump(), 13 * 4, 5e-4, 7);
  auto recs = records_for(sc.family, sc.sources);
  auto d = prepare(recs);
  auto c = build_chart(d, 0);
  std::vector<ConformalFit> fits;
  std::vector<FitTruth> truth;
  for (int r = 0; r < (int)d.size(); ++r) {
    fits.push_back(fit_at(d, c, r));
    truth.push_back(*chart_truth(sc.family, c, sc.sources[r]));
  }
  auto rep = verify_conformal(fits, truth);
  EXPECT_LT(rep.max_rel_error, 1e-2);
  EXPECT_TRUE(rep.orientation_ok);
  for (auto& f : fits) {
    EXPECT_LT(f.orientation.dot(f.Gstar * f.orientation), 0.0);
    for (auto& cv : null_covectors_at(d, c, f.point)) {
      Vec4 u = cv.w.normalized();
      EXPECT_LE(std::abs(u.dot(f.Gstar * u)) / f.Gstar.norm(), 3 * f.residual + 1e-15);
    }
  }
  std::printf("bump labeled: max rel error %.3e, mean %.3e\n", rep.max_rel_error, rep.mean_rel_error);
}

TEST(Properties, ChartInjectiveAndArgmaxStable) {
  auto sc = passive_scenario(passive_bump(), 13 * 4, 5e-4, 8);
  auto d = prepare(records_for(sc.family, sc.sources));
  auto c = build_chart(d, 0);
  for (std::size_t i = 0; i < c.domain.size(); ++i)
    for (std::size_t j = i + 1; j < c.domain.size(); ++j)
      EXPECT_GT((c.map(d.rec[c.domain[i]]) - c.map(d.rec[c.domain[j]])).norm(), 0.0);
  auto qc = detail::best_quadruple(detail::local_differentials(d, 0));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  for (int it = 0; it < 5; ++it) {
    std::vector<double> w(d.opt.k);
    for (auto& x : w) x = u(rng);
    auto c2 = build_chart(d, 0, w);
    if (qc.best - qc.second > 2 * d.opt.cond_min) {
      EXPECT_EQ(c2.obs, c.obs);
    }
  }
}

TEST(Properties, BlindPipelineMatchesLabeled) {
  auto sc = passive_scenario(passive_bump(), 13 * 3, 5e-4, 10);
  auto recs = records_for(sc.family, sc.sources);
  auto blind = records_from_json(records_to_json(sc.family, recs), true);
  auto a = reconstruct(recs), b = reconstruct(blind.records);
  ASSERT_EQ(a.fits.size(), b.fits.size());
  EXPECT_EQ(a.charted, a.interior);
  for (std::size_t i = 0; i < a.fits.size(); ++i) EXPECT_LT((a.fits[i].G - b.fits[i].G).norm(), 1e-12);
}

TEST(RicciFlat, ZeroDataStaysZeroAndInjectedGrows) {
  auto sc = passive_scenario(MetricSpec::minkowski(), 13 * 8, 5e-4, 11);
  auto d = prepare(records_for(sc.family, sc.sources));
  auto c = build_chart(d, 0);
  std::vector<ConformalFit> fits;
  for (int r : c.domain) fits.push_back(fit_at(d, c, r));
  std::vector<int> path;
  for (int r : c.domain)
    if (r % 13 == 0 && path.size() < 4) path.push_back(r);
  ASSERT_EQ(path.size(), 4u);
  auto z = ricci_flat_factor(d, c, fits, path);
  EXPECT_LT(z.sup_abs_f, 1e-8);
  auto g = ricci_flat_factor(d, c, fits, path, Vec4(1e-2, 0, 0, 0));
  EXPECT_GT(g.sup_abs_f, 1e-6);
  EXPECT_EQ(ricci_flat_factor(d, c, fits, {5}).sup_abs_f, 0.0);
}
