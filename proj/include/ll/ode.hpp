#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace ll {

// Dormand-Prince 5(4) with FSAL. State is a fixed-size Eigen column vector;
// f(s, y, dy) writes the derivative. Error norm is the scaled RMS of Hairer.
template <int N>
class Dopri5 {
 public:
  using State = Eigen::Matrix<double, N, 1>;

  double atol = 1e-10, rtol = 1e-10;
  double hmax = 1e300, hmin = 1e-13;

  // One trial step from (s, y) with derivative k1; fills y5 and k7 = f(s+h, y5).
  template <class F>
  double attempt(F& f, double s, const State& y, const State& k1, double h, State& y5, State& k7) const {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                            a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                            b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                            e6 = 22.0 / 525, e7 = -1.0 / 40;
    State k2, k3, k4, k5, k6, t;
    t = y + h * a21 * k1;
    f(s + c2 * h, t, k2);
    t = y + h * (a31 * k1 + a32 * k2);
    f(s + c3 * h, t, k3);
    t = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    f(s + c4 * h, t, k4);
    t = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    f(s + c5 * h, t, k5);
    t = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    f(s + h, t, k6);
    y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    f(s + h, y5, k7);
    State err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double acc = 0.0;
    for (int i = 0; i < y.size(); ++i) {
      double sc = atol + rtol * std::max(std::abs(y(i)), std::abs(y5(i)));
      double r = err(i) / sc;
      acc += r * r;
    }
    return std::sqrt(acc / y.size());
  }

  // Fixed single step (used for re-stepping inside an accepted interval).
  template <class F>
  State single(F& f, double s, const State& y, double h) const {
    State k1, y5, k7;
    f(s, y, k1);
    attempt(f, s, y, k1, h, y5, k7);
    return y5;
  }

  // Adaptive drive from s0 toward s1 (s1 > s0). After each accepted step
  // calls after(s_prev, y_prev, s, y); returning false stops. fixup(y) may
  // rewrite the state between steps (chart switches) and returns true if it did.
  // Returns 0 on reaching s1, 1 if stopped by callback, 2 on step underflow.
  template <class F, class After, class Fixup>
  int drive(F& f, double s0, State& y, double s1, double h0, After&& after, Fixup&& fixup) const {
    double s = s0;
    State k1, y5, k7;
    f(s, y, k1);
    double h = std::min({h0, hmax, s1 - s0});
    if (h <= 0) return 0;
    int fails = 0;
    while (s < s1) {
      double hh = std::min(h, s1 - s);
      bool last = hh >= s1 - s;
      double e = attempt(f, s, y, k1, hh, y5, k7);
      if (!std::isfinite(e)) e = 1e10;
      if (e <= 1.0) {
        State yprev = y;
        double sprev = s;
        s = last ? s1 : s + hh;
        y = y5;
        k1 = k7;
        double fac = e == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(e, -0.2), 0.2, 5.0);
        if (fails) fac = std::min(fac, 1.0);
        fails = 0;
        h = std::min(hmax, hh * fac);
        if (!after(sprev, yprev, s, y)) return 1;
        if (fixup(y)) f(s, y, k1);
      } else {
        ++fails;
        h = hh * std::max(0.1, 0.9 * std::pow(e, -0.2));
        if (h < hmin) return 2;
      }
    }
    return 0;
  }
};

}  // namespace ll
