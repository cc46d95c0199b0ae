#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ll {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

// x(0) = t, x(1..3) spatial chart coordinates. chart selects the spatial
// chart of N; only the 3-sphere has more than one.
struct Point {
  Vec4 x = Vec4::Zero();
  int chart = 0;

  Point() = default;
  Point(const Vec4& c, int ch = 0) : x(c), chart(ch) {}
  Point(double t, double a, double b, double c, int ch = 0) : x(t, a, b, c), chart(ch) {}
  double t() const { return x(0); }
  Vec3 y() const { return x.tail<3>(); }
};

struct TangentVector {
  Point base;
  Vec4 v = Vec4::Zero();
};

// gamma[k](i, j) = Gamma^k_ij
using Christoffel = std::array<Mat4, 4>;

enum class Kind { Minkowski, ProductSphere, Warped, Bump };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Minkowski: return "minkowski";
    case Kind::ProductSphere: return "product_sphere";
    case Kind::Warped: return "warped";
    case Kind::Bump: return "bump";
  }
  return "?";
}

inline Kind kind_from_name(const std::string& s) {
  if (s == "minkowski") return Kind::Minkowski;
  if (s == "product_sphere") return Kind::ProductSphere;
  if (s == "warped") return Kind::Warped;
  if (s == "bump") return Kind::Bump;
  throw std::invalid_argument("unknown metric kind '" + s + "'");
}

struct MetricSpec {
  Kind kind = Kind::Minkowski;

  // Warped: g = -beta(y) dt^2 + exp(2 H t) |dy|^2,  beta = (1 + beta1 exp(-|y|^2))^2
  double hubble = 0.0;
  double beta1 = 0.0;

  // Bump: g = -dt^2 + (1 + A phi(|p - c| / (2 r_b))) |dy|^2, phi(u) = exp(1 - 1/(1-u^2)),
  // |.| the Euclidean norm in (t, y). Flat once |p - c| >= 2 r_b.
  Vec4 center = Vec4::Zero();
  double rb = 0.5;
  double amp = 0.0;

  static MetricSpec minkowski() { return {}; }
  static MetricSpec product_sphere() {
    MetricSpec m;
    m.kind = Kind::ProductSphere;
    return m;
  }
  static MetricSpec warped(double H, double b1) {
    MetricSpec m;
    m.kind = Kind::Warped;
    m.hubble = H;
    m.beta1 = b1;
    return m;
  }
  static MetricSpec bump(const Vec4& c, double r, double A) {
    if (!(A >= 0.0 && A <= 0.1)) throw std::invalid_argument("bump amplitude must lie in [0, 0.1]");
    if (!(r > 0.0)) throw std::invalid_argument("bump radius must be positive");
    MetricSpec m;
    m.kind = Kind::Bump;
    m.center = c;
    m.rb = r;
    m.amp = A;
    return m;
  }

  // Largest step the integrator may take; keeps stages from jumping a bump.
  double max_step() const {
    switch (kind) {
      case Kind::Bump: return 0.25 * rb;
      case Kind::ProductSphere: return 0.5;
      case Kind::Warped: return 0.5;
      default: return kInf;
    }
  }
  bool flat() const { return kind == Kind::Minkowski || (kind == Kind::Bump && amp == 0.0); }
};

// ---- stereographic charts of the unit 3-sphere ----
// chart 0 projects from (0,0,0,1), chart 1 from (0,0,0,-1); y1 = y0 / |y0|^2.

namespace sphere {

constexpr double kSwitchRadius = 2.0;
constexpr double kDomainRadius = 1e6;

inline Vec4 to_embedding(const Vec3& y, int chart) {
  double r2 = y.squaredNorm();
  Vec4 X;
  X.head<3>() = 2.0 * y / (1.0 + r2);
  X(3) = (chart == 0 ? (r2 - 1.0) : (1.0 - r2)) / (1.0 + r2);
  return X;
}

inline Vec3 from_embedding(const Vec4& X, int chart) {
  double d = chart == 0 ? 1.0 - X(3) : 1.0 + X(3);
  return X.head<3>() / d;
}

inline int preferred_chart(const Vec4& X) { return X(3) <= 0.0 ? 0 : 1; }

inline Vec3 invert(const Vec3& y) { return y / y.squaredNorm(); }

// Jacobian of y -> y/|y|^2.
inline Mat3 invert_jac(const Vec3& y) {
  double r2 = y.squaredNorm();
  return Mat3::Identity() / r2 - 2.0 * y * y.transpose() / (r2 * r2);
}

// Second derivative d^2 phi_i / dy_j dy_k contracted with a and b.
inline Vec3 invert_hess(const Vec3& y, const Vec3& a, const Vec3& b) {
  double r2 = y.squaredNorm(), r4 = r2 * r2, r6 = r4 * r2;
  double ya = y.dot(a), yb = y.dot(b), ab = a.dot(b);
  return (-2.0 * (a * yb + b * ya + y * ab)) / r4 + 8.0 * y * (ya * yb) / r6;
}

inline double distance(const Vec4& X, const Vec4& Y) {
  double c = std::clamp(X.dot(Y), -1.0, 1.0);
  double s = (X - Y).norm();
  // asin branch is accurate near 0, acos branch near pi
  return c > 0.0 ? 2.0 * std::asin(std::min(1.0, 0.5 * s)) : kPi - 2.0 * std::asin(std::min(1.0, 0.5 * (X + Y).norm()));
}

}  // namespace sphere

inline Point to_chart(const Point& p, int chart) {
  if (p.chart == chart) return p;
  Point q = p;
  q.x.tail<3>() = sphere::invert(p.y());
  q.chart = chart;
  return q;
}

inline void check_point(const MetricSpec& m, const Point& p) {
  if (!p.x.allFinite()) throw std::domain_error("point has non-finite coordinates");
  if (m.kind == Kind::ProductSphere) {
    if (p.chart != 0 && p.chart != 1) throw std::domain_error("invalid sphere chart id");
    if (p.y().norm() > sphere::kDomainRadius) throw std::domain_error("point outside stereographic chart domain");
  } else if (p.chart != 0) {
    throw std::domain_error("invalid chart id for single-chart metric");
  }
}

namespace detail {

inline double bump_phi(double u) {
  if (u >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - u * u));
}

// psi = 1 + A phi and its gradient in (t, y).
inline void bump_psi(const MetricSpec& m, const Vec4& x, double& psi, Vec4& dpsi) {
  Vec4 d = x - m.center;
  double r = d.norm();
  double u = r / (2.0 * m.rb);
  psi = 1.0;
  dpsi.setZero();
  if (u >= 1.0 || m.amp == 0.0) return;
  double w = 1.0 - u * u;
  double phi = std::exp(1.0 - 1.0 / w);
  psi += m.amp * phi;
  // d phi / du = -2u/w^2 phi ; du/dx = d / (r 2rb)  ->  dphi/dx = -2 phi d / (w^2 (2rb)^2)
  dpsi = -m.amp * phi * d / (w * w * 2.0 * m.rb * m.rb);
}

}  // namespace detail

inline Mat4 metric_at(const MetricSpec& m, const Point& p) {
  check_point(m, p);
  Mat4 g = Mat4::Zero();
  switch (m.kind) {
    case Kind::Minkowski:
      g.diagonal() << -1, 1, 1, 1;
      break;
    case Kind::ProductSphere: {
      double f = 2.0 / (1.0 + p.y().squaredNorm());
      g.diagonal() << -1, f * f, f * f, f * f;
      break;
    }
    case Kind::Warped: {
      double b = 1.0 + m.beta1 * std::exp(-p.y().squaredNorm());
      double a2 = std::exp(2.0 * m.hubble * p.t());
      g.diagonal() << -b * b, a2, a2, a2;
      break;
    }
    case Kind::Bump: {
      double psi;
      Vec4 dpsi;
      detail::bump_psi(m, p.x, psi, dpsi);
      g.diagonal() << -1, psi, psi, psi;
      break;
    }
  }
  return g;
}

// Riemannian reference metric: g with the time-time block sign-flipped.
inline Mat4 gplus_at(const MetricSpec& m, const Point& p) {
  Mat4 g = metric_at(m, p);
  g(0, 0) = -g(0, 0);
  return g;
}

inline double gplus_norm(const MetricSpec& m, const Point& p, const Vec4& v) {
  return std::sqrt(v.dot(gplus_at(m, p) * v));
}

namespace detail {

// Gamma for g = e^{2 s} delta on the spatial block, s = s(y) only.
inline void conformal_spatial(Christoffel& G, const Vec3& ds) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) {
        double v = 0.0;
        if (i == j) v += ds(k);
        if (i == k) v += ds(j);
        if (j == k) v -= ds(i);
        G[i + 1](j + 1, k + 1) = v;
      }
}

}  // namespace detail

inline Christoffel christoffel_at(const MetricSpec& m, const Point& p) {
  check_point(m, p);
  Christoffel G;
  for (auto& M : G) M.setZero();
  switch (m.kind) {
    case Kind::Minkowski:
      break;
    case Kind::ProductSphere: {
      Vec3 y = p.y();
      Vec3 ds = -2.0 * y / (1.0 + y.squaredNorm());
      detail::conformal_spatial(G, ds);
      break;
    }
    case Kind::Warped: {
      Vec3 y = p.y();
      double e = m.beta1 * std::exp(-y.squaredNorm());
      double b = 1.0 + e;
      Vec3 db = -2.0 * e * y;  // grad of b
      double a2 = std::exp(2.0 * m.hubble * p.t());
      // g_tt = -b^2
      for (int i = 0; i < 3; ++i) {
        G[0](0, i + 1) = G[0](i + 1, 0) = db(i) / b;
        G[i + 1](0, 0) = b * db(i) / a2;
        G[i + 1](0, i + 1) = G[i + 1](i + 1, 0) = m.hubble;
        G[0](i + 1, i + 1) = m.hubble * a2 / (b * b);
      }
      break;
    }
    case Kind::Bump: {
      double psi;
      Vec4 dpsi;
      detail::bump_psi(m, p.x, psi, dpsi);
      if (dpsi.isZero(0.0)) break;
      detail::conformal_spatial(G, dpsi.tail<3>() / (2.0 * psi));
      for (int i = 1; i < 4; ++i) {
        G[0](i, i) = 0.5 * dpsi(0);
        G[i](0, i) = G[i](i, 0) = dpsi(0) / (2.0 * psi);
      }
      break;
    }
  }
  return G;
}

// Levi-Civita symbols from 4th-order central differences of metric_at.
inline Christoffel christoffel_fd(const MetricSpec& m, const Point& p, double h = 1e-4) {
  std::array<Mat4, 4> dg;
  for (int l = 0; l < 4; ++l) {
    auto at = [&](double s) {
      Point q = p;
      q.x(l) += s;
      return metric_at(m, q);
    };
    dg[l] = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
  }
  Mat4 ginv = metric_at(m, p).inverse();
  Christoffel G;
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int l = 0; l < 4; ++l) s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
        G[k](i, j) = 0.5 * s;
      }
  return G;
}

// d_l Gamma^k_ij, from 4th-order differences of the closed forms.
inline std::array<Christoffel, 4> christoffel_grad(const MetricSpec& m, const Point& p, double h = 1e-3) {
  std::array<Christoffel, 4> out;
  if (m.flat()) {
    for (auto& c : out)
      for (auto& M : c) M.setZero();
    return out;
  }
  for (int l = 0; l < 4; ++l) {
    auto at = [&](double s) {
      Point q = p;
      q.x(l) += s;
      return christoffel_at(m, q);
    };
    auto a = at(h), b = at(-h), c = at(2 * h), d = at(-2 * h);
    for (int k = 0; k < 4; ++k) out[l][k] = (8.0 * (a[k] - b[k]) - (c[k] - d[k])) / (12.0 * h);
  }
  return out;
}

inline Vec4 contract(const Christoffel& G, const Vec4& a, const Vec4& b) {
  Vec4 r;
  for (int k = 0; k < 4; ++k) r(k) = a.dot(G[k] * b);
  return r;
}

enum class Causal { Timelike, Null, Spacelike, Zero };
enum class Orientation { Future, Past, None };

struct CausalCharacter {
  Causal cls;
  Orientation orient;
};

constexpr double kTolNull = 1e-9;

inline CausalCharacter causal_character(const MetricSpec& m, const TangentVector& tv) {
  if (tv.v.isZero(0.0)) return {Causal::Zero, Orientation::None};
  Mat4 g = metric_at(m, tv.base);
  double q = tv.v.dot(g * tv.v);
  double n = tv.v.dot(gplus_at(m, tv.base) * tv.v);
  Causal c = std::abs(q) <= kTolNull * n ? Causal::Null : (q < 0 ? Causal::Timelike : Causal::Spacelike);
  if (c == Causal::Spacelike) return {c, Orientation::None};
  double gt = (g * tv.v)(0);  // g(v, d_t)
  return {c, gt < 0 ? Orientation::Future : Orientation::Past};
}

// Future null vector at p with the given spatial components.
inline Vec4 null_complete(const MetricSpec& m, const Point& p, const Vec3& spatial, double time_sign = 1.0) {
  Mat4 g = metric_at(m, p);
  double a = g(0, 0);
  double b = 2.0 * g.block<1, 3>(0, 1).dot(spatial);
  double c = spatial.dot(g.block<3, 3>(1, 1) * spatial);
  double disc = b * b - 4.0 * a * c;
  double r = std::sqrt(std::max(0.0, disc));
  // a < 0: the two roots have opposite signs
  double t1 = (-b - r) / (2.0 * a), t2 = (-b + r) / (2.0 * a);
  Vec4 v;
  v(0) = time_sign > 0 ? std::max(t1, t2) : std::min(t1, t2);
  v.tail<3>() = spatial;
  return v;
}

// Coordinate box; spatial bounds ignored on the sphere.
struct Region {
  double tmin = -kInf, tmax = kInf;
  Vec3 lo = Vec3::Constant(-kInf), hi = Vec3::Constant(kInf);

  bool contains(const MetricSpec& m, const Point& p) const {
    if (p.t() < tmin || p.t() > tmax) return false;
    if (m.kind == Kind::ProductSphere) return true;
    for (int i = 0; i < 3; ++i)
      if (p.x(i + 1) < lo(i) || p.x(i + 1) > hi(i)) return false;
    return true;
  }
  static Region everywhere() { return {}; }
  static Region box(double t0, double t1, double half) {
    Region r;
    r.tmin = t0;
    r.tmax = t1;
    r.lo = Vec3::Constant(-half);
    r.hi = Vec3::Constant(half);
    return r;
  }
};

// g+-distance proxy between two points: coordinate difference measured in g+ at a.
inline double gplus_dist(const MetricSpec& m, const Point& a, const Point& b) {
  if (m.kind == Kind::ProductSphere) {
    double d = sphere::distance(sphere::to_embedding(a.y(), a.chart), sphere::to_embedding(b.y(), b.chart));
    return std::hypot(a.t() - b.t(), d);
  }
  Vec4 d = b.x - a.x;
  return std::sqrt(d.dot(gplus_at(m, a) * d));
}

}  // namespace ll
