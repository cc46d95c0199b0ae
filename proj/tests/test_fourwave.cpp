#include <gtest/gtest.h>

#include <random>

#include "ll/fourwave.hpp"

using namespace ll;

namespace {

// reference values from an independent 60-digit evaluation
const std::array<double, 4> kRho1{0.859, 0.277, 0.069, 0.933};

const std::vector<std::array<double, 4>> kOracleConfigs{
    {0.859, 0.277, 0.069, 0.933}, {0.835, 0.935, 0.322, 0.108}, {0.832, 0.057, 0.349, 0.93},
    {0.935, 0.879, 0.225, 0.082}, {0.878, 0.095, 0.934, 0.266}};

}  // namespace

TEST(NullConfig, ExactNullAndPairing) {
  auto cf = build_null_config({0.1, 0.3, 0.5, 0.7});
  EXPECT_DOUBLE_EQ(cf.omega[0][4].value(), -0.005);
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(minkowski_pair(cf.b[j], cf.b[j]), 0.0, 1e-15);
    double r = cf.rho[j].value();
    EXPECT_NEAR(minkowski_pair(cf.b[j], cf.b[4]), -r * r / 2, 1e-15);
    EXPECT_NEAR(cf.omega[j][4].value(), -r * r / 2, 1e-16);
    for (int k = 0; k < 4; ++k)
      if (k != j) {
        EXPECT_NEAR(cf.omega[j][k].value(), minkowski_pair(cf.b[j], cf.b[k]), 1e-14);
      }
  }
  EXPECT_NEAR(minkowski_pair(cf.b[4], cf.b[4]), 0.0, 0.0);
}

TEST(NullConfig, IndependentAndErrors) {
  auto cf = build_null_config({0.05, 0.02, 0.3, 0.4});
  double minor = cf.b[0](1) * cf.b[1](2) - cf.b[0](2) * cf.b[1](1);
  EXPECT_GT(std::abs(minor), 1e-3);
  EXPECT_THROW(build_null_config({0.1, 0.2, 0.3, 1.2}), std::invalid_argument);
  EXPECT_THROW(build_null_config({0.1, 0.2, 0.3, 0.0}), std::invalid_argument);
  EXPECT_THROW(build_null_config({0.1, 0.2, 0.3, 0.3}), std::runtime_error);
  // radicand 1 - rho^2/4 - rho^4 vanishes near rho = 0.9396
  EXPECT_NO_THROW(build_null_config({0.93, 0.2, 0.3, 0.4}));
  EXPECT_THROW(build_null_config({0.95, 0.2, 0.3, 0.4}), std::invalid_argument);
}

TEST(NullConfig, FrozenReferenceValues) {
  auto cf = build_null_config(kRho1);
  const double p[4] = {-0.61338503345232357, 0.62217580937384308, 0.52900043901486854, 0.46220878506361195};
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(cf.p[j].value(), p[j], 1e-12);
  EXPECT_NEAR(cf.detB.abs().value(), 0.0016736585274858431, 1e-15);
  EXPECT_NEAR(cf.omega[0][1].value(), -0.25736029480954098, 1e-14);
  // b^(5) = sum p_j b^(j)
  Vec4 s = Vec4::Zero();
  for (int j = 0; j < 4; ++j) s += cf.p[j].value() * cf.b[j];
  EXPECT_LT((s - cf.b[4]).norm(), 1e-12);
}

TEST(Q0, PairComposition) {
  auto cf = build_null_config({0.2, 0.4, 0.3, 0.5});
  auto r = q0_compose(plane_wave(1.0, cf.b[0], 0), plane_wave(1.0, cf.b[1], 0));
  double w = minkowski_pair(cf.b[0], cf.b[1]);
  EXPECT_NEAR(r.coeff.real(), 1.0 / (2 * w), 1e-12);
  EXPECT_EQ(r.factors[0].second, 1);
  EXPECT_EQ(r.factors[1].second, 1);
  EXPECT_EQ(r.tau_power, 0);
}

TEST(Q0, BoxInvertsParametrix) {
  auto cf = build_null_config({0.2, 0.4, 0.3, 0.5});
  for (auto [l1, l2] : {std::pair{0, 0}, {2, 3}, {4, 1}}) {
    auto u = multiply(plane_wave(1.5, cf.b[0], l1), plane_wave(-0.5, cf.b[2], l2));
    auto q = q0_compose(plane_wave(1.5, cf.b[0], l1), plane_wave(-0.5, cf.b[2], l2));
    auto back = box(q);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_NEAR(std::abs(back[0].coeff - u.coeff), 0.0, 1e-12);
    EXPECT_EQ(back[0].factors.size(), (std::size_t)(l1 > 0) + (l2 > 0));
  }
  for (int l : {0, 3}) {
    auto u = multiply(plane_wave(2.0, cf.b[3], l), tau_wave(1.0, cf.b[4]));
    auto q = q0_compose(plane_wave(2.0, cf.b[3], l), tau_wave(1.0, cf.b[4]));
    EXPECT_EQ(q.tau_power, -1);
    auto back = box(q);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].tau_power, 0);
    EXPECT_NEAR(std::abs(back[0].coeff - u.coeff), 0.0, 1e-12);
  }
  EXPECT_THROW(q0_compose(plane_wave(1, cf.b[0], 1), plane_wave(1, cf.b[0], 1)), std::domain_error);
}

TEST(Terms, CatalogAndPowers) {
  auto cf = build_null_config(kRho1, 3);
  auto t = all_terms(cf);
  EXPECT_EQ(t.size(), 48u);
  for (auto& x : t) {
    EXPECT_EQ(x.tau_power, -(4 * 3 + 8));  // m = -4n + 4
    int sum = 0;
    for (int e : x.exps) sum += e;
    EXPECT_EQ(sum, x.kind == TermKind::T ? 4 * 3 + 3 : 4 * 3 + 4);
  }
  auto id = term_value(cf, {1, 2, 3, 4}, TermKind::T);
  EXPECT_NEAR(id.coeff.value() / -516912124526.53593, 1.0, 1e-11);
  EXPECT_NEAR(term_value(cf, {1, 2, 3, 4}, TermKind::Ttilde).coeff.value() / 249456277041.85874, 1.0, 1e-11);
  // swapping the inner pair leaves every term unchanged
  for (auto& s : all_perms()) {
    Perm s2{s[1], s[0], s[2], s[3]};
    EXPECT_DOUBLE_EQ(term_value(cf, s, TermKind::T).coeff.value(), term_value(cf, s2, TermKind::T).coeff.value());
  }
}

TEST(Terms, OneDimensionalFactor) {
  double tau = 1e4, p = -0.6;
  auto I = oscillatory_factors({2}, {p}, tau, 5.0);
  std::complex<double> closed = 2.0 / std::pow(std::complex<double>(0.0, -tau * p), 3);
  EXPECT_LT(std::abs(I[0] - closed) / std::abs(closed), 1e-2);
  EXPECT_LT(std::abs(I[0] - closed) / std::abs(closed), 1e-8);
}

TEST(Indicator, MultilinearAndNonzero) {
  auto cf = hierarchy_config(0.1, 16);
  EXPECT_FALSE(indicator_G(cf).zero());
  EXPECT_NEAR(indicator_G(cf).log10abs(), 55198405.486598358, 1e-5);
  auto c0 = cf;
  c0.v[0] = 0.0;
  EXPECT_TRUE(indicator_G(c0).zero());
  auto c2 = cf;
  c2.v[2] = 2.0;
  EXPECT_NEAR(indicator_G(c2).l - indicator_G(cf).l, std::log(2.0), 1e-6);  // log-space resolution at |l| ~ 1e8
  EXPECT_EQ(indicator_G(c2).s, indicator_G(cf).s);
  auto ca = cf;
  ca.a = 3.0;
  EXPECT_NEAR(indicator_G(ca).l - indicator_G(cf).l, 3 * std::log(3.0), 1e-6);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int it = 0; it < 20; ++it) {
    auto c = cf;
    for (auto& x : c.v) x = u(rng);
    EXPECT_FALSE(indicator_G(c).zero());
  }
}

TEST(Dominance, HierarchyTable) {
  // reference log10 magnitudes at rho3 = 0.1, ell = 16
  auto cf = hierarchy_config(0.1, 16);
  EXPECT_NEAR(term_value(cf, {1, 2, 3, 4}, TermKind::T).coeff.log10abs(), 55178506.185568362, 1e-5);
  EXPECT_NEAR(term_value(cf, {1, 2, 3, 4}, TermKind::Ttilde).coeff.log10abs(), 54188604.583508371, 1e-5);
  EXPECT_NEAR(term_value(cf, {1, 3, 2, 4}, TermKind::T).coeff.log10abs(), 55198405.185568362, 1e-5);
  EXPECT_NEAR(term_value(cf, {3, 2, 1, 4}, TermKind::T).coeff.log10abs(), 55178605.185568362, 1e-5);

  auto rep = dominance_check({0.5, 0.4, 0.3, 0.2, 0.1}, 16);
  ASSERT_EQ(rep.rows.size(), 5u);
  EXPECT_TRUE(rep.all_equal);
  EXPECT_TRUE(rep.tilde_gaps_grow);
  // with p solved from b5 = sum p_j b^(j) the largest pair is (1,3,2,4)/(3,1,2,4)
  EXPECT_FALSE(rep.all_dominant);
  for (auto& r : rep.rows) {
    EXPECT_TRUE((r.top == Perm{1, 3, 2, 4} || r.top == Perm{3, 1, 2, 4}));
    EXPECT_EQ(r.top_kind, TermKind::T);
    EXPECT_GT(r.tilde_gap, 0.0);
  }
}

TEST(Oracle, SlopeAndCoefficient) {
  auto cf = build_null_config(kOracleConfigs[0], 3);
  auto r = numeric_oracle(cf, {1e3, 1e4, 1e5});
  EXPECT_NEAR(r.slope, -20.0, 0.1);
  EXPECT_LT(r.rel_err, 0.05);
  EXPECT_LT(r.rel_err, 1e-6);
}

TEST(Oracle, CutoffRadiusIrrelevant) {
  auto cf = build_null_config(kOracleConfigs[1], 3);
  auto a = numeric_oracle(cf, {3e3}, 3e3);
  cf.cutoff = 10.0;
  auto b = numeric_oracle(cf, {3e3}, 3e3);
  EXPECT_NEAR(a.coeff_numeric / b.coeff_numeric, 1.0, 1e-6);
}
