#include "ll/nlwave.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

using namespace ll;

namespace {

GridSpec grid2(int n, double half = 1.0, double cfl = 0.4) {
  GridSpec g;
  g.dims = 3;
  g.n = n;
  g.half = half;
  g.cfl = cfl;
  return g;
}

Field gaussian(const Lattice& L, double s, const Vec3& c = Vec3::Zero()) {
  return L.sample([&](const Vec3& x) { return std::exp(-(x - c).squaredNorm() / (2 * s * s)); });
}

double max_diff(const Field& a, const Field& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

BeamSpec beam_x(const GridSpec& g, double window = 0.5) {
  BeamSpec b;
  b.dir = Vec3::UnitX();
  b.t_hit = 0.5;
  b.width = 8 * g.h();
  b.window = window;
  return b;
}

}  // namespace

TEST(Grid, CflAndDims) {
  GridSpec g = grid2(32);
  g.cfl = 0.62;  // above the fourth-order leapfrog bound in 2-d
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g.cfl = 0.6;
  EXPECT_NO_THROW(g.validate());
  g.dims = 4;
  EXPECT_THROW(g.validate(), std::invalid_argument);  // 0.6 > 0.5 in 3-d
  g.dims = 5;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(Linear, ZeroSourceStaysZero) {
  GridSpec g = grid2(40);
  RunOptions o;
  o.T = 0.5;
  auto r = linear_solve(g, {}, o);
  EXPECT_EQ(max_abs(r.final_cur[0]), 0.0);
}

TEST(Linear, PointImpulseShell3d) {
  GridSpec g;
  g.dims = 4;
  g.n = 64;
  g.cfl = 0.4;
  Lattice L(g);
  double h = g.h(), w = 2.5 * h, t0 = 3 * h;
  SourceTerm f;
  f.space = L.sample([&](const Vec3& x) { return bump(x.norm() / w); });
  f.time = [&](double t) { return bump((t - t0) / (2 * h)); };
  RunOptions o;
  o.T = 0.6;
  o.snap_times = {0.45, 0.6};
  auto r = linear_solve(g, f, o);
  for (const auto& s : r.snaps) {
    auto rr = wavefront_detect(g, s.data);
    ASSERT_GT(rr.points.size(), 100u);
    double worst = 0;
    for (const auto& p : rr.points) worst = std::max(worst, std::abs(p.x.norm() - (s.t - t0)));
    EXPECT_LT(worst, 2 * h) << "t = " << s.t;
  }
}

TEST(Linear, DiscreteEnergyConserved) {
  GridSpec g = grid2(64);
  Lattice L(g);
  WaveSystem sys(1);
  sys.u0[0] = gaussian(L, 0.1);
  sys.v0[0] = gaussian(L, 0.15, Vec3(0.2, 0, 0));
  std::vector<double> e;
  RunOptions o;
  o.T = 0.8;
  o.hook = [&](double, const std::vector<Field>& a, const std::vector<Field>& b) {
    e.push_back(discrete_energy(g, a[0], b[0]));
  };
  GridSpec lin = g;
  lin.a = 0;
  run_system(lin, sys, o);
  ASSERT_GT(e.size(), 10u);
  for (double v : e) EXPECT_NEAR(v / e.front(), 1.0, 1e-10);
}

TEST(Linear, SelfConvergenceOrder) {
  // h, h/2, h/4 share the coarse points; compare there at a common time.
  std::vector<Field> at;
  std::vector<int> ns = {121, 241, 481};
  double T = 0.5;  // data stays clear of the walls
  for (int n : ns) {
    GridSpec g = grid2(n, 1.5, 0.25);
    g.a = 0;
    Lattice L(g);
    WaveSystem sys(1);
    sys.u0[0] = gaussian(L, 0.15);
    RunOptions o;
    o.T = T;
    auto r = run_system(g, sys, o);
    ASSERT_NEAR(r.steps * r.dt, T, 1e-12);
    int stride = (n - 1) / (ns[0] - 1);
    Field c;
    for (int j = 0; j < ns[0]; ++j)
      for (int i = 0; i < ns[0]; ++i) c.push_back(r.final_cur[0][L.at(i * stride, j * stride)]);
    at.push_back(c);
  }
  double e1 = max_diff(at[0], at[1]), e2 = max_diff(at[1], at[2]);
  EXPECT_GT(std::log2(e1 / e2), 1.8);
}

TEST(Linear, CausalSupport) {
  // Leapfrog precursors run ahead of the cone at the 1e-6 level for a few
  // cells; the 1e-12 level is reached 16 cells out.
  GridSpec g = grid2(128, 1.0, 0.4);
  g.a = 0;
  Lattice L(g);
  double r0 = 0.3;
  WaveSystem sys(1);
  sys.v0[0] = L.sample([&](const Vec3& x) { return bump(x.norm() / r0); });
  RunOptions o;
  o.T = 0.5;
  auto r = run_system(g, sys, o);
  const Field& u = r.final_cur[0];
  double m = max_abs(u);
  auto outside = [&](double cells) {
    double out = 0;
    for (int j = 0; j < g.n; ++j)
      for (int i = 0; i < g.n; ++i)
        if (L.coord(i, j).norm() > r0 + o.T + cells * L.h) out = std::max(out, std::abs(u[L.at(i, j)]));
    return out;
  };
  EXPECT_LT(outside(2), 1e-5 * m);
  EXPECT_LT(outside(16), 1e-12 * m);
}

TEST(Linear, ParallelSlabsDeterministic) {
  GridSpec g = grid2(64);
  Lattice L(g);
  Field u0, v0;
  beam_data(L, beam_x(g), u0, v0);
  RunOptions o;
  o.T = 0.3;
  setenv("LL_THREADS", "1", 1);
  auto a = born_terms(g, u0, v0, o);
  setenv("LL_THREADS", "3", 1);
  auto b = born_terms(g, u0, v0, o);
  unsetenv("LL_THREADS");
  for (int k = 0; k < 4; ++k) EXPECT_EQ(a.final_cur[k], b.final_cur[k]);
}

TEST(Born, ZeroCoefficientKillsHigherTerms) {
  GridSpec g = grid2(48);
  g.a = 0;
  Lattice L(g);
  Field u0, v0;
  beam_data(L, beam_x(g), u0, v0);
  RunOptions o;
  o.T = 0.4;
  auto r = born_terms(g, u0, v0, o);
  EXPECT_GT(max_abs(r.final_cur[0]), 0.1);
  for (int k = 1; k < 4; ++k) EXPECT_EQ(max_abs(r.final_cur[k]), 0.0);
  auto nl = nonlinear_solve(g, u0, v0, 0.3, o);
  for (std::size_t p = 0; p < u0.size(); ++p) ASSERT_NEAR(nl.final_cur[0][p], 0.3 * r.final_cur[0][p], 1e-14);
}

TEST(Born, RemainderScalesAsFifthPower) {
  GridSpec g = grid2(96);
  Lattice L(g);
  Field u0, v0;
  beam_data(L, beam_x(g), u0, v0);
  auto rep = remainder_scaling(g, u0, v0, {0.2, 0.1}, 0.8);
  EXPECT_GE(rep.exponent, 4.5);
  EXPECT_LE(rep.exponent, 5.5);
}

TEST(Born, FirstTermIsEpsDerivative) {
  GridSpec g = grid2(64);
  g.a = 3;
  Lattice L(g);
  Field u0, v0;
  beam_data(L, beam_x(g), u0, v0);
  RunOptions o;
  o.T = 0.6;
  auto w = born_terms(g, u0, v0, o);
  double scale = max_abs(w.final_cur[0]);
  for (double eps : {0.1, 0.05, 0.02}) {
    auto up = nonlinear_solve(g, u0, v0, eps, o), um = nonlinear_solve(g, u0, v0, -eps, o);
    double err = 0;
    for (std::size_t p = 0; p < u0.size(); ++p)
      err = std::max(err, std::abs((up.final_cur[0][p] - um.final_cur[0][p]) / (2 * eps) - w.final_cur[0][p]));
    EXPECT_LT(err / scale, 5 * eps) << "eps = " << eps;
  }
}

TEST(Nonlinear, ZeroEpsIsZero) {
  GridSpec g = grid2(40);
  Lattice L(g);
  Field u0, v0;
  beam_data(L, beam_x(g), u0, v0);
  RunOptions o;
  o.T = 0.3;
  EXPECT_EQ(max_abs(nonlinear_solve(g, u0, v0, 0.0, o).final_cur[0]), 0.0);
}

TEST(Nonlinear, DivergenceReported) {
  GridSpec g = grid2(40);
  g.a = 50;
  Lattice L(g);
  Field u0 = L.sample([](const Vec3& x) { return 5 * bump(x.norm() / 0.5); }), v0;
  RunOptions o;
  o.T = 2.0;
  EXPECT_THROW(nonlinear_solve(g, u0, v0, 1.0, o), std::runtime_error);
}

TEST(Ridges, GaussianIsEmpty) {
  GridSpec g = grid2(96);
  Lattice L(g);
  EXPECT_TRUE(wavefront_detect(g, gaussian(L, 0.2)).points.empty());
}

TEST(Ridges, PlaneWaveFronts) {
  // d'Alembert: data d_t u = psi(x) splits into two steps at x = +-t
  GridSpec g = grid2(128);
  g.a = 0;
  Lattice L(g);
  double w = 5 * L.h;
  WaveSystem sys(1);
  sys.v0[0] = L.sample([&](const Vec3& x) { return bump(x(0) / w); });
  RunOptions o;
  o.T = 0.5;
  auto r = run_system(g, sys, o);
  double t = r.steps * r.dt;
  auto rr = wavefront_detect(g, r.final_cur[0]);
  ASSERT_GT(rr.points.size(), 50u);
  for (const auto& p : rr.points) EXPECT_LT(std::abs(std::abs(p.x(0)) - t), 2 * L.h);
}

TEST(Born, SingleBeamNoNewFront) {
  GridSpec g = grid2(128);
  Lattice L(g);
  BeamSpec b = beam_x(g);
  Field u0, v0;
  beam_data(L, b, u0, v0);
  RunOptions o;
  o.T = 0.9;
  o.snap_times = {0.9};
  auto r = born_terms(g, u0, v0, o);
  double t = r.snaps.front().t;
  auto rr = wavefront_detect(g, r.snap(t, 1));
  ASSERT_FALSE(rr.points.empty());
  for (const auto& p : rr.points) EXPECT_TRUE(in_strips({b}, t, p.x, L.h, 3)) << p.x.transpose();
}

TEST(Born, TwoBeamsFrontsStayInFutureOfCrossing) {
  GridSpec g = grid2(256, 2.0, 0.4);
  Lattice L(g);
  auto beams = beams_through(2, 2, Vec3::Zero(), 1.0, 8 * L.h, 0.5);
  beams[1].dir = Vec3(std::cos(2.0), std::sin(2.0), 0);
  std::vector<Field> u0(2), v0(2);
  for (int j = 0; j < 2; ++j) beam_data(L, beams[j], u0[j], v0[j]);
  RunOptions o;
  o.T = 1.8;
  o.snap_times = {1.8};
  o.snap_fields = {2};
  auto r = run_system(g, subset_system(u0, v0), o);
  double t = r.snaps.front().t;
  auto rr = wavefront_detect(g, r.snap(t, 2));
  ASSERT_FALSE(rr.points.empty());
  // crossing point c(t') of the two pulse centres while both beams are on;
  // reach allows for diffraction past the window edge
  double reach = 1.25 * beams[0].window;
  Eigen::Matrix2d A;
  A << beams[0].dir(0), beams[0].dir(1), beams[1].dir(0), beams[1].dir(1);
  auto crossing = [&](double tp) {
    Eigen::Vector2d rhs(tp - beams[0].t_hit + beams[0].dir.dot(beams[0].center()),
                        tp - beams[1].t_hit + beams[1].dir.dot(beams[1].center()));
    Eigen::Vector2d c = A.partialPivLu().solve(rhs);
    return Vec3(c(0), c(1), 0);
  };
  for (const auto& p : rr.points) {
    bool ok = in_strips(beams, t, p.x, L.h, 3);
    for (double tp = 0; tp <= t && !ok; tp += 0.25 * L.h) {
      Vec3 c = crossing(tp);
      if (beams[0].transverse(c) < reach && beams[1].transverse(c) < reach && (p.x - c).norm() <= t - tp + 2 * L.h)
        ok = true;
    }
    EXPECT_TRUE(ok) << p.x.transpose();
  }
}

TEST(Interaction, ThreeBeams2dConeAndControl) {
  InteractionConfig c;
  c.grid = grid2(256, 4.0, 0.3);
  c.t_q = 2.5;
  c.beams = beams_through(2, 3, Vec3::Zero(), 2.5, 10 * c.grid.h(), 0.5);
  c.slices = {4.0, 4.5, 5.0};
  auto r = interaction_experiment(c);
  EXPECT_TRUE(r.front_detected);
  for (const auto& s : r.slices) EXPECT_LT(s.max_cone_dist, 2 * r.h);
  EXPECT_GT(r.tested, 100);
  EXPECT_EQ(r.agreement, 1.0);

  auto n = negative_control(c, r, 2, 1.5);
  EXPECT_FALSE(n.front_detected);
  for (const auto& s : n.slices) EXPECT_EQ(s.coverage, 0.0);
  EXPECT_EQ(n.agreement, 1.0);
  for (const auto& p : n.probes) EXPECT_NE(p.I, Verdict::True);
}

TEST(Interaction, FourBeams3dSphere) {
  InteractionConfig c;
  c.grid.dims = 4;
  c.grid.n = 64;
  c.grid.cfl = 0.45;
  c.t_q = 0.7;
  c.mask_cells = 3;
  c.beams = beams_through(3, 4, Vec3::Zero(), 0.7, 5 * c.grid.h(), 0.45);
  c.slices = {1.2, 1.35};
  auto r = interaction_experiment(c);
  EXPECT_TRUE(r.front_detected);
  for (const auto& s : r.slices) EXPECT_LT(s.max_cone_dist, 2 * r.h);
  EXPECT_EQ(r.agreement, 1.0);
}

TEST(Interaction, ConditionIFlat) {
  auto beams = beams_through(2, 3, Vec3(0.1, 0, 0), 1.0, 0.1, 0.5);
  auto q = rays_common_point(beams);
  ASSERT_TRUE(q.has_value());
  EXPECT_NEAR(q->first, 1.0, 1e-12);
  EXPECT_NEAR((q->second - Vec3(0.1, 0, 0)).norm(), 0.0, 1e-12);
  EXPECT_TRUE(condition_I_flat(beams, 1.5, Vec3(0.1, 0.5, 0), 1e-9));
  EXPECT_FALSE(condition_I_flat(beams, 1.5, Vec3(0.1, 0.3, 0), 1e-9));
  EXPECT_FALSE(condition_I_flat(beams, 0.5, Vec3(0.1, 0.5, 0), 1e-9));
  translate_beam(beams, 2, 0.3);
  EXPECT_FALSE(rays_common_point(beams).has_value());
}
