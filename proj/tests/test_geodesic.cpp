#include <gtest/gtest.h>

#include <random>

#include "ll/geodesic.hpp"

using namespace ll;

namespace {

// great circle on S^3 through X with unit tangent U, at arc length s
Vec4 great_circle(const Vec4& X, const Vec4& U, double s) { return std::cos(s) * X + std::sin(s) * U; }

// unit-speed spatial null vector on R x S^3 in the chart of p, along embedding tangent U
Vec4 sphere_null(const Point& p, const Vec4& U) {
  double h = 1e-7;
  Vec4 X = sphere::to_embedding(p.y(), p.chart);
  Vec3 y1 = sphere::from_embedding((X + h * U).normalized(), p.chart);
  Vec3 y0 = sphere::from_embedding((X - h * U).normalized(), p.chart);
  Vec3 dy = (y1 - y0) / (2 * h);
  double f = 2.0 / (1.0 + p.y().squaredNorm());
  dy /= f * dy.norm();
  return Vec4(1.0, dy(0), dy(1), dy(2));
}

Vec4 random_tangent(const Vec4& X, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec4 U(n(rng), n(rng), n(rng), n(rng));
  U -= U.dot(X) * X;
  return U.normalized();
}

}  // namespace

TEST(Geodesic, MinkowskiStraightLine) {
  auto path = integrate_geodesic(MetricSpec::minkowski(), Point(), Vec4(1, 1, 0, 0), 2.0);
  EXPECT_EQ(path.term, Termination::ReachedMaxParam);
  EXPECT_LT((path.samples.back().p.x - Vec4(2, 2, 0, 0)).norm(), 1e-12);
  EXPECT_LT((path.at(0.7).first.x - Vec4(0.7, 0.7, 0, 0)).norm(), 1e-12);
}

TEST(Geodesic, SphereGreatCircleAndAntipode) {
  auto m = MetricSpec::product_sphere();
  std::mt19937_64 rng(1);
  for (int it = 0; it < 10; ++it) {
    Point p(Vec4(0.0, 0.3 * it - 1.0, 0.2, -0.4), it % 2);
    Vec4 X = sphere::to_embedding(p.y(), p.chart);
    Vec4 U = random_tangent(X, rng);
    Vec4 xi = sphere_null(p, U);
    auto path = integrate_geodesic(m, p, xi, 4.0);
    ASSERT_EQ(path.term, Termination::ReachedMaxParam);
    EXPECT_LT(path.max_norm_drift, 1e-8);
    for (double s : {0.5, 1.7, kPi, 3.9}) {
      auto [q, v] = path.at(s);
      EXPECT_NEAR(q.t(), s, 1e-9);
      Vec4 Y = sphere::to_embedding(q.y(), q.chart);
      EXPECT_LT((Y - great_circle(X, U, s)).norm(), 1e-8) << s;
    }
    Vec4 A = sphere::to_embedding(path.at(kPi).first.y(), path.at(kPi).first.chart);
    EXPECT_LT((A + X).norm(), 1e-8);
  }
}

TEST(Geodesic, BumpMissedIsStraight) {
  auto m = MetricSpec::bump(Vec4(0, 0, 0, 0), 0.3, 0.1);
  Point x(-1.0, -1.0, 0.8, 0.0);
  Vec4 xi(1, 1, 0, 0);
  auto path = integrate_geodesic(m, x, xi, 2.0);
  for (double s : {0.3, 1.0, 2.0}) EXPECT_LT((path.at(s).first.x - (x.x + s * xi)).norm(), 1e-9);
}

TEST(Geodesic, RegionExitLocated) {
  auto path = integrate_geodesic(MetricSpec::minkowski(), Point(), Vec4(1, 0.5, 0, 0), 10.0, Region::box(-1, 3, 5));
  EXPECT_EQ(path.term, Termination::ExitedRegion);
  EXPECT_NEAR(path.end(), 3.0, 1e-12);
}

TEST(Geodesic, NormConservationThroughBump) {
  auto m = MetricSpec::bump(Vec4(0.5, 0.4, 0.1, 0), 0.4, 0.1);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int i = 0; i < 40; ++i) {
    Vec3 d(n(rng), n(rng), n(rng));
    Point x(0.0, 0.1 * n(rng), 0.1 * n(rng), 0.1 * n(rng));
    Vec4 xi = null_complete(m, x, d.normalized());
    if (i % 2) xi(0) *= 1.5;  // timelike
    auto path = integrate_geodesic(m, x, xi, 2.5);
    EXPECT_LT(path.max_norm_drift, 1e-8);
  }
}

TEST(Conjugate, MinkowskiNone) {
  EXPECT_FALSE(first_conjugate_time(MetricSpec::minkowski(), Point(), Vec4(1, 0, 1, 0), 20.0));
}

TEST(Conjugate, BumpZeroAmplitudeNone) {
  auto m = MetricSpec::bump(Vec4::Zero(), 0.3, 0.0);
  EXPECT_FALSE(first_conjugate_time(m, Point(-0.5, -0.5, 0, 0), Vec4(1, 1, 0, 0), 3.0));
}

TEST(Conjugate, SphereAtPi) {
  auto m = MetricSpec::product_sphere();
  std::mt19937_64 rng(8);
  for (int it = 0; it < 8; ++it) {
    Point p(Vec4(0.2, 0.4 * it - 1.5, -0.3, 0.6), it % 2);
    Vec4 xi = sphere_null(p, random_tangent(sphere::to_embedding(p.y(), p.chart), rng));
    auto t = first_conjugate_time(m, p, xi, 5.0);
    ASSERT_TRUE(t.has_value());
    EXPECT_NEAR(*t, kPi, 1e-6);
  }
  // timelike geodesics focus at arc length pi as well
  Point p(0.0, 0.1, 0.2, 0.3);
  Vec4 u = sphere_null(p, random_tangent(sphere::to_embedding(p.y(), 0), rng));
  Vec4 v(2.0, u(1), u(2), u(3));
  auto t = first_conjugate_time(m, p, v, 5.0);
  ASSERT_TRUE(t.has_value());
  EXPECT_NEAR(*t, kPi, 1e-6);
}

TEST(Cut, MinkowskiNoCut) {
  CutOptions o;
  o.max_param = 5.0;
  auto c = cut_time(MetricSpec::minkowski(), Point(), Vec4(1, 0, 0, 1), o);
  EXPECT_TRUE(c.no_cut_in_region);
  EXPECT_NEAR(c.rho, 5.0, 1e-12);
}

TEST(Cut, SphereAntipodalCutAndCrossCheck) {
  auto m = MetricSpec::product_sphere();
  std::mt19937_64 rng(12);
  CutOptions o;
  o.max_param = 4.0;
  o.cross_check = true;
  for (int it = 0; it < 3; ++it) {
    Point p(Vec4(0.0, 0.5 * it - 0.5, 0.3, 0.1), it % 2);
    Vec4 xi = sphere_null(p, random_tangent(sphere::to_embedding(p.y(), p.chart), rng));
    auto c = cut_time(m, p, xi, o);
    EXPECT_NEAR(c.rho, kPi, 1e-6);
    ASSERT_TRUE(c.conjugate_time && c.second_geodesic_time);
    EXPECT_NEAR(*c.conjugate_time, kPi, 1e-6);
    EXPECT_NEAR(*c.second_geodesic_time, kPi, 1e-4);
    EXPECT_NEAR(c.rho, c.rho_check(), 1e-4);
    // tau vanishes at the cut point and is positive just beyond
    auto path = integrate_geodesic(m, p, xi, 4.0);
    EXPECT_LT(time_separation(m, p, path.at(kPi - 1e-3).first), kTolTau);
    EXPECT_GT(time_separation(m, p, path.at(kPi + 1e-3).first), 0.0);
  }
}

TEST(Cut, BumpRayThroughBumpHasNoCutInBox) {
  auto m = MetricSpec::bump(Vec4(0, 0, 0, 0), 0.3, 0.05);
  CutOptions o;
  o.max_param = 10.0;
  o.region = Region::box(-2, 1.5, 2);
  o.scan = 10;
  o.cross_check = true;
  Point x(-1.0, -1.0, 0.05, 0.0);
  auto c = cut_time(m, x, null_complete(m, x, Vec3(1, 0, 0)), o);
  EXPECT_TRUE(c.no_cut_in_region);
  EXPECT_FALSE(c.conjugate_time);
  EXPECT_FALSE(c.second_geodesic_time);
  EXPECT_NEAR(c.rho, c.rho_check(), 1e-4);
  EXPECT_NEAR(c.rho, c.exit_param, 1e-12);
}

TEST(Tau, MinkowskiExamples) {
  auto m = MetricSpec::minkowski();
  EXPECT_NEAR(time_separation(m, Point(), Point(2, 1, 0, 0)), std::sqrt(3.0), 1e-15);
  EXPECT_EQ(time_separation(m, Point(), Point(1, 2, 0, 0)), 0.0);
  TauOptions so;
  so.force_shooting = true;
  EXPECT_NEAR(time_separation(m, Point(), Point(2, 1, 0.3, 0), so), std::sqrt(4 - 1.09), 1e-10);
}

TEST(Tau, SphereAntipodeOnLightCone) {
  auto m = MetricSpec::product_sphere();
  Point x(0.0, 0.0, 0.0, 0.0, 0);
  Point y(kPi, 0.0, 0.0, 0.0, 1);  // antipode of the chart-0 origin
  EXPECT_NEAR(time_separation(m, x, y), 0.0, 1e-7);
  EXPECT_EQ(chronological_relation(m, x, y), Relation::CausalOnly);
  EXPECT_GT(time_separation(m, x, Point(kPi + 0.01, 0, 0, 0, 1)), 0.0);
}

TEST(Tau, SphereShootingAgreesWithClosedForm) {
  auto m = MetricSpec::product_sphere();
  TauOptions so;
  so.force_shooting = true;
  Point x(0.0, 0.2, -0.1, 0.3);
  for (Point y : {Point(2.0, 0.5, 0.1, 0.0), Point(1.5, -0.3, 0.4, 0.2)}) {
    EXPECT_NEAR(time_separation(m, x, y, so), time_separation(m, x, y), 1e-9);
  }
}

TEST(Tau, ShootingFailureIsReported) {
  auto m = MetricSpec::warped(0.1, 0.2);
  // absurdly far target; Newton from the chord start cannot hold 1e-11
  EXPECT_NO_THROW(time_separation(m, Point(), Point(1.0, 0.2, 0, 0)));
}

TEST(Tau, BumpStartsAgree) {
  auto m = MetricSpec::bump(Vec4(0.5, 0.0, 0.0, 0.0), 0.4, 0.1);
  TauOptions ex;
  ex.exhaustive = true;
  Point x(0.0, -0.2, 0.1, 0.0), y(1.2, 0.3, -0.1, 0.2);
  EXPECT_NEAR(time_separation(m, x, y), time_separation(m, x, y, ex), 1e-10);
}

TEST(Relation, MinkowskiExamples) {
  auto m = MetricSpec::minkowski();
  EXPECT_EQ(chronological_relation(m, Point(), Point(1, 1, 0, 0)), Relation::CausalOnly);
  EXPECT_EQ(chronological_relation(m, Point(), Point(2, 0, 0, 0)), Relation::Chronological);
  EXPECT_EQ(chronological_relation(m, Point(), Point(0, 1, 0, 0)), Relation::Unrelated);
  EXPECT_EQ(chronological_relation(m, Point(2, 0, 0, 0), Point()), Relation::Unrelated);
}

TEST(Relation, BumpNullBranch) {
  auto m = MetricSpec::bump(Vec4(0.3, 0.3, 0.0, 0.0), 0.3, 0.1);
  Point x(0, 0, 0, 0);
  Vec4 xi = null_complete(m, x, Vec3(1, 0.1, 0));
  auto path = integrate_geodesic(m, x, xi, 1.0);
  Point y = path.at(1.0).first;
  EXPECT_EQ(chronological_relation(m, x, y), Relation::CausalOnly);
  Point z = y;
  z.x(0) += 0.01;
  EXPECT_EQ(chronological_relation(m, x, z), Relation::Chronological);
  z.x(0) -= 0.02;
  EXPECT_EQ(chronological_relation(m, x, z), Relation::Unrelated);
}

TEST(NullConnect, MinkowskiExamples) {
  auto m = MetricSpec::minkowski();
  auto r = null_connect(m, Point(), Point(1, 1, 0, 0));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_LT((r[0].xi - Vec4(1, 1, 0, 0) / std::sqrt(2.0)).norm(), 1e-9);
  EXPECT_NEAR(r[0].arrival, std::sqrt(2.0), 1e-9);
  EXPECT_TRUE(null_connect(m, Point(), Point(1, 2, 0, 0)).empty());
}

TEST(NullConnect, SphereAntipodeGivesManyDirections) {
  auto m = MetricSpec::product_sphere();
  auto r = null_connect(m, Point(0, 0, 0, 0, 0), Point(kPi, 0, 0, 0, 1));
  EXPECT_GE(r.size(), 20u);
  for (auto& c : r) {
    EXPECT_NEAR(c.arrival, kPi * std::sqrt(2.0), 1e-8);
    auto cc = causal_character(m, {Point(), c.xi});
    EXPECT_EQ(cc.cls, Causal::Null);
  }
}

TEST(NullConnect, BumpMatchesIntegration) {
  auto m = MetricSpec::bump(Vec4(0.3, 0.3, 0.0, 0.0), 0.3, 0.1);
  Point x(0, 0, 0, 0);
  Vec4 xi = null_complete(m, x, Vec3(1, 0.1, 0.05));
  Point y = integrate_geodesic(m, x, xi, 1.2).at(1.2).first;
  auto r = null_connect(m, x, y);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_LT((r[0].xi - xi / gplus_norm(m, x, xi)).norm(), 1e-8);
}

TEST(Properties, ReverseTriangleSmall) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto m : {MetricSpec::minkowski(), MetricSpec::product_sphere(), MetricSpec::warped(0.1, 0.2),
                 MetricSpec::bump(Vec4(0.6, 0, 0, 0), 0.4, 0.1)}) {
    for (int i = 0; i < 30; ++i) {
      Point x(0.0, 0.3 * u(rng), 0.3 * u(rng), 0.3 * u(rng));
      auto step = [&](const Point& p) {
        double dt = 0.3 + 0.5 * (u(rng) + 1);
        return Point(p.t() + dt, p.x(1) + 0.4 * dt * u(rng), p.x(2) + 0.4 * dt * u(rng), p.x(3) + 0.4 * dt * u(rng));
      };
      Point y = step(x), z = step(y);
      double a = time_separation(m, x, y), b = time_separation(m, y, z), c = time_separation(m, x, z);
      EXPECT_LE(a + b, c + 1e-6) << kind_name(m.kind);
    }
  }
}
