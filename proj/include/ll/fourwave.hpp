#pragma once

// Minkowski four-wave indicator: null covectors, the formal parametrix on
// plane-wave monomials, closed-form tau asymptotics of the 48 permutation
// terms, and a quadrature oracle. Coefficients go through LogReal because the
// rho hierarchy drives magnitudes far outside double range.

#include "ll/core.hpp"
#include "ll/parallel.hpp"

#include <quadmath.h>

#include <algorithm>
#include <complex>
#include <string>
#include <vector>

namespace ll {

// sign * exp(l); zero is sign 0
struct LogReal {
  int s = 0;
  double l = -kInf;

  LogReal() = default;
  LogReal(double x) : s(x > 0 ? 1 : (x < 0 ? -1 : 0)), l(x == 0 ? -kInf : std::log(std::abs(x))) {}
  static LogReal from_log(double lg, int sign = 1) {
    LogReal r;
    r.s = sign;
    r.l = lg;
    return r;
  }
  bool zero() const { return s == 0; }
  double log10abs() const { return l / std::log(10.0); }
  double value() const { return s == 0 ? 0.0 : s * std::exp(l); }
  LogReal operator-() const {
    LogReal r = *this;
    r.s = -r.s;
    return r;
  }
  LogReal abs() const {
    LogReal r = *this;
    r.s = r.s != 0;
    return r;
  }
};

inline LogReal operator*(const LogReal& a, const LogReal& b) {
  if (a.zero() || b.zero()) return {};
  return LogReal::from_log(a.l + b.l, a.s * b.s);
}
inline LogReal operator/(const LogReal& a, const LogReal& b) {
  if (b.zero()) throw std::domain_error("LogReal division by zero");
  if (a.zero()) return {};
  return LogReal::from_log(a.l - b.l, a.s * b.s);
}
inline LogReal operator+(const LogReal& a, const LogReal& b) {
  if (a.zero()) return b;
  if (b.zero()) return a;
  const LogReal& big = a.l >= b.l ? a : b;
  const LogReal& small = a.l >= b.l ? b : a;
  double r = std::exp(small.l - big.l);
  if (big.s == small.s) return LogReal::from_log(big.l + std::log1p(r), big.s);
  if (r == 1.0) return {};
  return LogReal::from_log(big.l + std::log1p(-r), big.s);
}
inline LogReal operator-(const LogReal& a, const LogReal& b) { return a + (-b); }
inline LogReal lpow(const LogReal& a, int k) {
  if (k == 0) return LogReal(1.0);
  if (a.zero()) {
    if (k < 0) throw std::domain_error("LogReal 0^negative");
    return {};
  }
  return LogReal::from_log(k * a.l, (k % 2 == 0) ? 1 : a.s);
}
inline LogReal lfactorial(int m) { return LogReal::from_log(std::lgamma(m + 1.0)); }

// --------------------------------------------------------------- configs

struct IndicatorConfig {
  std::array<LogReal, 4> rho;
  int ell = 3;
  std::array<double, 5> v{1, 1, 1, 1, 1};
  double a = 1.0;
  double cutoff = 5.0;

  // derived
  std::array<LogReal, 4> c;                 // third component of b^(j)
  std::array<std::array<LogReal, 5>, 5> omega;  // g(b^(k), b^(j)), index 4 is b^(5)
  std::array<LogReal, 4> p;                 // b^(5).x = p.y
  LogReal detB;
  std::array<Vec4, 5> b;                    // double-precision copies, lossy in the hierarchy

  int n() const { return -ell - 1; }
  int tau_power() const { return -(4 * ell + 8); }
  LogReal P() const {
    LogReal r = lpow(LogReal(a), 3);
    for (double x : v) r = r * LogReal(x);
    return r;
  }
};

namespace detail {

// 4x4 determinant by the Leibniz sum; LogReal keeps the leading product exact
// when entries differ by astronomically many orders. cond reports the ratio
// of |det| to the largest product.
inline LogReal leibniz_det(const std::array<std::array<LogReal, 4>, 4>& A, double* cond = nullptr) {
  std::array<int, 4> perm{0, 1, 2, 3};
  LogReal tot;
  double big = -kInf;
  do {
    int sg = 1;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (perm[i] > perm[j]) sg = -sg;
    LogReal pr(sg);
    for (int i = 0; i < 4; ++i) pr = pr * A[i][perm[i]];
    if (!pr.zero()) big = std::max(big, pr.l);
    tot = tot + pr;
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (cond) *cond = tot.zero() ? 0.0 : std::exp(tot.l - big);
  return tot;
}

}  // namespace detail

// b^(5) = (1,1,0,0); b^(j) = (1, 1 - rho^2/2, c(rho), rho^3) with
// c = sqrt(rho^2 - rho^4/4 - rho^6), built from log(rho).
inline IndicatorConfig build_null_config_log(const std::array<double, 4>& log_rho, int ell = 3) {
  if (ell < 1) throw std::invalid_argument("ell must be a positive integer");
  IndicatorConfig cf;
  cf.ell = ell;
  for (int j = 0; j < 4; ++j) {
    if (!(log_rho[j] < 0.0)) throw std::invalid_argument("rho_" + std::to_string(j + 1) + " must lie in (0,1)");
    double r2 = std::exp(2 * log_rho[j]);
    double rad = 1.0 - r2 / 4 - r2 * r2;
    if (!(rad > 0.0)) throw std::invalid_argument("radicand of c(rho_" + std::to_string(j + 1) + ") is not positive");
    cf.rho[j] = LogReal::from_log(log_rho[j]);
    cf.c[j] = LogReal::from_log(log_rho[j] + 0.5 * std::log(rad));
  }
  auto half_sq = [&](int j) { return LogReal::from_log(2 * cf.rho[j].l - std::log(2.0)); };
  for (int k = 0; k < 4; ++k) {
    cf.omega[k][4] = cf.omega[4][k] = -half_sq(k);
    cf.omega[k][k] = LogReal();
    for (int j = 0; j < 4; ++j) {
      if (j == k) continue;
      LogReal w = -half_sq(k) - half_sq(j);
      w = w + LogReal::from_log(2 * cf.rho[k].l + 2 * cf.rho[j].l - std::log(4.0));
      w = w + cf.c[k] * cf.c[j];
      w = w + LogReal::from_log(3 * cf.rho[k].l + 3 * cf.rho[j].l);
      cf.omega[k][j] = w;
    }
  }
  cf.omega[4][4] = LogReal();
  // sum p_j = 1 and sum p_j (rho_j^2/2, c_j, rho_j^3) = 0
  std::array<std::array<LogReal, 4>, 4> N;
  for (int j = 0; j < 4; ++j) {
    N[0][j] = LogReal(1.0);
    N[1][j] = half_sq(j);
    N[2][j] = cf.c[j];
    N[3][j] = lpow(cf.rho[j], 3);
  }
  double cond = 0.0;
  LogReal det = detail::leibniz_det(N, &cond);
  if (det.zero() || cond < 1e-14) throw std::runtime_error("ill-conditioned configuration: det(A) not resolved");
  cf.detB = -det;  // det of rows b^(j) after subtracting the first column
  for (int i = 0; i < 4; ++i) {
    auto Ni = N;
    for (int r = 0; r < 4; ++r) Ni[r][i] = LogReal(r == 0 ? 1.0 : 0.0);
    cf.p[i] = detail::leibniz_det(Ni) / det;
  }
  cf.b[4] = Vec4(1, 1, 0, 0);
  for (int j = 0; j < 4; ++j) {
    double r = cf.rho[j].value();
    cf.b[j] = Vec4(1, 1 - r * r / 2, cf.c[j].value(), r * r * r);
  }
  return cf;
}

inline IndicatorConfig build_null_config(const std::array<double, 4>& rho, int ell = 3) {
  std::array<double, 4> lr;
  for (int j = 0; j < 4; ++j) {
    if (!(rho[j] > 0.0 && rho[j] < 1.0)) throw std::invalid_argument("rho_" + std::to_string(j + 1) + " must lie in (0,1)");
    lr[j] = std::log(rho[j]);
  }
  return build_null_config_log(lr, ell);
}

// rho_4 = rho_2^100, rho_2 = rho_1^100, rho_1 = rho_3^100
inline IndicatorConfig hierarchy_config(double rho3, int ell) {
  double l3 = std::log(rho3), l1 = 100 * l3, l2 = 100 * l1, l4 = 100 * l2;
  return build_null_config_log({l1, l2, l3, l4}, ell);
}

inline double minkowski_pair(const Vec4& a, const Vec4& b) { return -a(0) * b(0) + a.tail<3>().dot(b.tail<3>()); }

// -------------------------------------------------------- monomial algebra

// coeff * prod_k (b_k . x)_+^{e_k} * tau^{tau_power} * [exp(i tau b5 . x)]
struct MonomialTerm {
  std::complex<double> coeff{1.0, 0.0};
  std::vector<std::pair<Vec4, int>> factors;
  int tau_power = 0;
  bool phase = false;
  Vec4 phase_b = Vec4(1, 1, 0, 0);
};

inline MonomialTerm plane_wave(double v, const Vec4& b, int ell) { return {v, {{b, ell}}, 0, false, Vec4(1, 1, 0, 0)}; }
inline MonomialTerm tau_wave(double v, const Vec4& b5) { return {v, {}, 0, true, b5}; }

inline MonomialTerm multiply(const MonomialTerm& x, const MonomialTerm& y) {
  if (x.phase && y.phase) throw std::invalid_argument("product of two phase factors is outside the catalog");
  MonomialTerm r = x;
  r.coeff *= y.coeff;
  r.tau_power += y.tau_power;
  for (auto& f : y.factors) r.factors.push_back(f);
  if (y.phase) {
    r.phase = true;
    r.phase_b = y.phase_b;
  }
  return r;
}

// Formal parametrix on the product of two terms: two plane-wave factors, or one
// plane-wave factor against the phase.
inline MonomialTerm q0_compose(const MonomialTerm& x, const MonomialTerm& y) {
  MonomialTerm r = multiply(x, y);
  if (!r.phase) {
    if (r.factors.size() != 2) throw std::invalid_argument("q0 needs exactly two plane-wave factors");
    auto& [b1, l1] = r.factors[0];
    auto& [b2, l2] = r.factors[1];
    double w = minkowski_pair(b1, b2);
    if (std::abs(w) < 1e-13 * b1.squaredNorm() * b2.squaredNorm()) throw std::domain_error("q0: orthogonal directions (omega = 0)");
    r.coeff /= 2.0 * (l1 + 1) * (l2 + 1) * w;
    ++l1;
    ++l2;
  } else {
    if (r.factors.size() != 1) throw std::invalid_argument("q0 on the phase branch needs one plane-wave factor");
    auto& [b4, l] = r.factors[0];
    double w = minkowski_pair(b4, r.phase_b);
    if (std::abs(w) < 1e-13 * b4.squaredNorm() * r.phase_b.squaredNorm()) throw std::domain_error("q0: orthogonal directions (omega = 0)");
    r.coeff /= std::complex<double>(0.0, 2.0 * (l + 1) * w);
    r.tau_power -= 1;
    ++l;
  }
  return r;
}

// Wave operator g^{ij} d_i d_j (signature -+++) applied symbolically.
inline std::vector<MonomialTerm> box(const MonomialTerm& t) {
  std::vector<MonomialTerm> out;
  auto push = [&](MonomialTerm r) {
    if (std::abs(r.coeff) > 1e-14 * std::abs(t.coeff)) out.push_back(std::move(r));
  };
  int n = t.factors.size();
  for (int k = 0; k < n; ++k) {
    auto [b, e] = t.factors[k];
    if (e >= 2) {
      MonomialTerm r = t;
      r.coeff *= double(e) * (e - 1) * minkowski_pair(b, b);
      r.factors[k].second -= 2;
      push(r);
    }
    for (int l = k + 1; l < n; ++l) {
      auto [b2, e2] = t.factors[l];
      if (e == 0 || e2 == 0) continue;
      MonomialTerm r = t;
      r.coeff *= 2.0 * e * e2 * minkowski_pair(b, b2);
      r.factors[k].second -= 1;
      r.factors[l].second -= 1;
      push(r);
    }
    if (t.phase && e >= 1) {
      MonomialTerm r = t;
      r.coeff *= std::complex<double>(0.0, 2.0 * e * minkowski_pair(b, t.phase_b));
      r.factors[k].second -= 1;
      r.tau_power += 1;
      push(r);
    }
  }
  if (t.phase) {
    MonomialTerm r = t;
    r.coeff *= -minkowski_pair(t.phase_b, t.phase_b);
    r.tau_power += 2;
    push(r);
  }
  // drop exhausted factors
  for (auto& r : out)
    r.factors.erase(std::remove_if(r.factors.begin(), r.factors.end(), [](auto& f) { return f.second == 0; }), r.factors.end());
  return out;
}

// ------------------------------------------------------- permutation terms

using Perm = std::array<int, 4>;  // sigma(1..4), one-based values
enum class TermKind { T, Ttilde };

inline std::vector<Perm> all_perms() {
  std::vector<Perm> out;
  Perm s{1, 2, 3, 4};
  do out.push_back(s);
  while (std::next_permutation(s.begin(), s.end()));
  return out;
}

inline std::string perm_name(const Perm& s) {
  std::string r;
  for (int x : s) r += char('0' + x);
  return r;
}

struct TermValue {
  Perm sigma{};
  TermKind kind = TermKind::T;
  int tau_power = 0;
  LogReal coeff;                // real: the phases combine to +-1
  std::array<int, 4> exps{};    // powers of y_j in the integrand
  LogReal at(double tau) const { return coeff * LogReal::from_log(tau_power * std::log(tau)); }
};

// Leading coefficient of T or T~ for sigma: each 1-D factor contributes
// m! (-i tau p_j)^{-m-1} exactly up to O(tau^-inf) from the cutoff.
inline TermValue term_value(const IndicatorConfig& cf, const Perm& sg, TermKind kind) {
  int s[4];
  for (int i = 0; i < 4; ++i) {
    s[i] = sg[i] - 1;
    if (s[i] < 0 || s[i] > 3) throw std::invalid_argument("permutation entries must be 1..4");
  }
  TermValue tv;
  tv.sigma = sg;
  tv.kind = kind;
  tv.tau_power = cf.tau_power();
  int L = cf.ell;
  LogReal pref;
  int ipow = 0;  // power of i
  if (kind == TermKind::T) {
    tv.exps[s[3]] = L + 1;
    tv.exps[s[1]] = L + 1;
    tv.exps[s[0]] = L + 1;
    tv.exps[s[2]] = L;
    pref = -cf.P() / (lpow(LogReal(L + 1.0), 3) * cf.omega[s[3]][4] * cf.omega[s[0]][s[1]]);
    ipow = -1;
  } else {
    for (auto& e : tv.exps) e = L + 1;
    pref = -cf.P() / (LogReal(4.0) * lpow(LogReal(L + 1.0), 4) * cf.omega[s[2]][s[3]] * cf.omega[s[0]][s[1]]);
  }
  LogReal v = pref / cf.detB.abs();
  for (int j = 0; j < 4; ++j) {
    int m = tv.exps[j];
    // (-i p)^{-m-1} = i^{m+1} p^{-m-1}
    v = v * lfactorial(m) * lpow(cf.p[j], -m - 1);
    ipow += m + 1;
  }
  ipow = ((ipow % 4) + 4) % 4;
  if (ipow % 2) throw std::logic_error("term coefficient is not real");
  tv.coeff = ipow == 2 ? -v : v;
  return tv;
}

inline std::vector<TermValue> all_terms(const IndicatorConfig& cf) {
  std::vector<TermValue> out;
  for (auto& s : all_perms())
    for (auto k : {TermKind::T, TermKind::Ttilde}) out.push_back(term_value(cf, s, k));
  return out;
}

// Leading coefficient of the summed 48 terms at tau^{-4n+4}.
inline LogReal indicator_G(const IndicatorConfig& cf) {
  LogReal g;
  for (auto& t : all_terms(cf)) g = g + t.coeff;
  return g;
}

// ------------------------------------------------------------- dominance

struct DominanceRow {
  double rho3 = 0.0;
  std::vector<TermValue> terms;
  double log10_id = 0.0;
  bool id_equals_sigma1 = false;   // L_{sigma1} = L_{id}, sigma1 = (2,1,3,4)
  bool id_dominant = false;        // id and sigma1 strictly above all others
  double gap = 0.0;                // log10 |id| - max log10 |other|, negative when id is beaten
  double tilde_gap = 0.0;          // log10 |T_id| - max log10 |T~|
  Perm top{};                      // largest term
  TermKind top_kind = TermKind::T;
};

struct DominanceReport {
  std::vector<DominanceRow> rows;
  bool all_equal = true, all_dominant = true, gaps_grow = true, tilde_gaps_grow = true;
};

inline bool is_id_pair(const Perm& s) { return s == Perm{1, 2, 3, 4} || s == Perm{2, 1, 3, 4}; }

inline DominanceReport dominance_check(const std::vector<double>& rho3s, int ell) {
  DominanceReport rep;
  for (double r3 : rho3s) {
    DominanceRow row;
    row.rho3 = r3;
    auto cf = hierarchy_config(r3, ell);
    row.terms = all_terms(cf);
    LogReal id = term_value(cf, {1, 2, 3, 4}, TermKind::T).coeff, s1 = term_value(cf, {2, 1, 3, 4}, TermKind::T).coeff;
    row.log10_id = id.log10abs();
    row.id_equals_sigma1 = std::abs(id.log10abs() - s1.log10abs()) <= 1e-12 * std::abs(id.log10abs()) + 1e-12;
    double other = -kInf, tilde = -kInf, best = -kInf;
    for (auto& t : row.terms) {
      double lg = t.coeff.log10abs();
      if (lg > best) {
        best = lg;
        row.top = t.sigma;
        row.top_kind = t.kind;
      }
      if (t.kind == TermKind::Ttilde) tilde = std::max(tilde, lg);
      if (!(t.kind == TermKind::T && is_id_pair(t.sigma))) other = std::max(other, lg);
    }
    row.gap = row.log10_id - other;
    row.tilde_gap = row.log10_id - tilde;
    row.id_dominant = row.gap > 0;
    rep.all_equal &= row.id_equals_sigma1;
    rep.all_dominant &= row.id_dominant;
    if (!rep.rows.empty()) {
      rep.gaps_grow &= row.gap > rep.rows.back().gap;
      rep.tilde_gaps_grow &= row.tilde_gap > rep.rows.back().tilde_gap;
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// -------------------------------------------------------------- oracle

namespace detail {

// C-infinity step: 1 below R/5, 0 above R
inline __float128 cutoff_q(__float128 y, __float128 R) {
  __float128 a = R / 5, t = (y - a) / (R - a);
  if (t <= 0) return 1;
  if (t >= 1) return 0;
  __float128 e0 = expq(-1 / t), e1 = expq(-1 / (1 - t));
  return e1 / (e0 + e1);
}

inline const std::array<std::pair<__float128, __float128>, 16>& gauss16() {
  static const auto nodes = [] {
    std::array<std::pair<__float128, __float128>, 16> out;
    const int n = 16;
    for (int i = 0; i < n; ++i) {
      __float128 x = cosq(M_PIq * (i + 0.75Q) / (n + 0.5Q));
      __float128 dp = 0;
      for (int it = 0; it < 100; ++it) {
        __float128 p0 = 1, p1 = x;
        for (int k = 2; k <= n; ++k) {
          __float128 p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1);
        __float128 dx = p1 / dp;
        x -= dx;
        if (fabsq(dx) < 1e-33Q) break;
      }
      out[i] = {x, 2 / ((1 - x * x) * dp * dp)};
    }
    return out;
  }();
  return nodes;
}

}  // namespace detail

// int_0^R y^m phi(y) exp(i tau p y) dy for several (m, p) at once, composite
// 16-point Gauss-Legendre in quad precision on panels of at most 2 radians.
inline std::vector<std::complex<double>> oscillatory_factors(const std::vector<int>& m, const std::vector<double>& p,
                                                             double tau, double R) {
  const auto& gl = detail::gauss16();
  std::size_t K = m.size();
  double pmax = 0.0;
  for (double x : p) pmax = std::max(pmax, std::abs(x));
  long panels = std::max<long>(64, (long)std::ceil(tau * pmax * R / 2.0));
  __float128 Rq = R, w = Rq / panels;
  std::vector<__float128> re(K, 0), im(K, 0);
  // per-factor node rotations and panel step
  std::vector<std::array<__float128, 16>> dc(K), ds(K);
  std::vector<__float128> sc(K), ss(K), cc(K, 1), cs(K, 0);
  for (std::size_t k = 0; k < K; ++k) {
    __float128 om = (__float128)tau * p[k];
    for (int i = 0; i < 16; ++i) {
      __float128 off = w * (gl[i].first + 1) / 2;
      dc[k][i] = cosq(om * off);
      ds[k][i] = sinq(om * off);
    }
    sc[k] = cosq(om * w);
    ss[k] = sinq(om * w);
  }
  for (long j = 0; j < panels; ++j) {
    __float128 y0 = w * j;
    for (int i = 0; i < 16; ++i) {
      __float128 y = y0 + w * (gl[i].first + 1) / 2;
      __float128 base = gl[i].second * w / 2 * detail::cutoff_q(y, Rq);
      if (base == 0) continue;
      for (std::size_t k = 0; k < K; ++k) {
        __float128 f = base;
        for (int e = 0; e < m[k]; ++e) f *= y;
        __float128 c = cc[k] * dc[k][i] - cs[k] * ds[k][i];
        __float128 s = cc[k] * ds[k][i] + cs[k] * dc[k][i];
        re[k] += f * c;
        im[k] += f * s;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      __float128 c = cc[k] * sc[k] - cs[k] * ss[k];
      cs[k] = cc[k] * ss[k] + cs[k] * sc[k];
      cc[k] = c;
    }
  }
  std::vector<std::complex<double>> out;
  for (std::size_t k = 0; k < K; ++k) out.push_back({(double)re[k], (double)im[k]});
  return out;
}

struct OracleReport {
  std::vector<double> taus;
  std::vector<std::complex<double>> numeric;  // T_{tau,id} by quadrature
  double slope = 0.0;
  int predicted_power = 0;
  double tau_ref = 1e4;
  double coeff_numeric = 0.0, coeff_closed = 0.0, rel_err = 0.0;
};

// Quadrature evaluation of T_{tau,sigma} (kind T) with the product cutoff
// prod_j phi(y_j); needs moderate rho so p and det B are doubles.
inline std::complex<double> term_numeric(const IndicatorConfig& cf, const Perm& sg, double tau) {
  TermValue tv = term_value(cf, sg, TermKind::T);
  int s3 = sg[3] - 1, s0 = sg[0] - 1, s1 = sg[1] - 1;
  std::vector<int> m(tv.exps.begin(), tv.exps.end());
  std::vector<double> p;
  for (auto& x : cf.p) p.push_back(x.value());
  auto I = oscillatory_factors(m, p, tau, cf.cutoff);
  int L = cf.ell;
  std::complex<double> pref = -cf.P().value() /
                              (std::complex<double>(0.0, 1.0) * std::pow(L + 1.0, 3) * cf.omega[s3][4].value() *
                               cf.omega[s0][s1].value() * tau) /
                              std::abs(cf.detB.value());
  for (auto& x : I) pref *= x;
  return pref;
}

inline OracleReport numeric_oracle(const IndicatorConfig& cf, const std::vector<double>& taus, double tau_ref = 1e4) {
  if (cf.ell > 6) throw std::invalid_argument("numeric oracle limited to ell <= 6");
  for (auto& x : cf.p)
    if (!(std::abs(x.l) < 20)) throw std::invalid_argument("numeric oracle needs moderate rho");
  OracleReport r;
  r.taus = taus;
  r.tau_ref = tau_ref;
  r.predicted_power = cf.tau_power();
  std::vector<double> all = taus;
  if (std::find(all.begin(), all.end(), tau_ref) == all.end()) all.push_back(tau_ref);
  std::vector<std::complex<double>> vals(all.size());
  parallel_for(all.size(), [&](std::size_t i) { vals[i] = term_numeric(cf, {1, 2, 3, 4}, all[i]); });
  r.numeric.assign(vals.begin(), vals.begin() + taus.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = taus.size();
  for (int i = 0; i < n; ++i) {
    double x = std::log(taus[i]), y = std::log(std::abs(vals[i]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  r.slope = n > 1 ? (n * sxy - sx * sy) / (n * sxx - sx * sx) : 0.0;
  std::size_t iref = std::find(all.begin(), all.end(), tau_ref) - all.begin();
  r.coeff_numeric = vals[iref].real() * std::pow(tau_ref, -r.predicted_power);
  r.coeff_closed = term_value(cf, {1, 2, 3, 4}, TermKind::T).coeff.value();
  r.rel_err = std::abs(vals[iref] * std::pow(tau_ref, -r.predicted_power) - r.coeff_closed) / std::abs(r.coeff_closed);
  return r;
}

}  // namespace ll
