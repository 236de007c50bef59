#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "driftlab/core.hpp"

namespace driftlab::quad {

struct Rule {
    std::vector<double> x;  // nodes on [-1, 1]
    std::vector<double> w;
};

/// Gauss-Legendre rule with n nodes, computed by Newton iteration on P_n.
inline Rule compute_gauss_legendre(int n) {
    require(n >= 1, ErrorKind::configuration, "Gauss-Legendre needs at least one node");
    Rule r;
    r.x.resize(static_cast<std::size_t>(n));
    r.w.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = z;
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
        }
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x[static_cast<std::size_t>(i)] = -z;
        r.x[static_cast<std::size_t>(n - 1 - i)] = z;
        r.w[static_cast<std::size_t>(i)] = w;
        r.w[static_cast<std::size_t>(n - 1 - i)] = w;
    }
    if (n == 1) {
        r.x[0] = 0.0;
        r.w[0] = 2.0;
    }
    return r;
}

inline const Rule& gauss_legendre(int n) {
    static std::mutex mu;
    static std::map<int, Rule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, compute_gauss_legendre(n)).first;
    return it->second;
}

/// Integrates f over [a, b] with an n-point Gauss-Legendre rule.
template <class F>
double integrate(F&& f, double a, double b, int n) {
    const Rule& r = gauss_legendre(n);
    const double h = 0.5 * (b - a), c = 0.5 * (a + b);
    double s = 0.0;
    for (std::size_t i = 0; i < r.x.size(); ++i) s += r.w[i] * f(c + h * r.x[i]);
    return s * h;
}

/// Integrates f over [a, b] with nodes graded towards a via x = a + (b-a) u^2.
template <class F>
double integrate_graded(F&& f, double a, double b, int n) {
    return integrate([&](double u) { return f(a + (b - a) * u * u) * 2.0 * u * (b - a); }, 0.0, 1.0, n);
}

/// Integral of tau^(s-1) e^(-lam tau) over [A, B], 0 <= A <= B.
inline double power_exp_integral(double s, double lam, double A, double B) {
    if (B <= A) return 0.0;
    if (lam == 0.0) return (std::pow(B, s) - std::pow(A, s)) / s;
    const double xa = lam * A, xb = lam * B;
    const double scale = std::pow(lam, -s);
    // Difference of regularized incomplete gammas, taken on the side that avoids cancellation.
    double diff;
    if (xa > s + 1.0) {
        diff = (A > 0.0 ? boost::math::gamma_q(s, xa) : 1.0) - boost::math::gamma_q(s, xb);
    } else {
        diff = boost::math::gamma_p(s, xb) - (A > 0.0 ? boost::math::gamma_p(s, xa) : 0.0);
    }
    return scale * std::tgamma(s) * diff;
}

/// Integral of tau^(s-1) e^(-lam tau) over [A, infinity), lam > 0.
inline double power_exp_tail(double s, double lam, double A) {
    require(lam > 0.0, ErrorKind::configuration, "unbounded time integral needs lambda > 0");
    return std::pow(lam, -s) * boost::math::tgamma(s, lam * A);
}

}  // namespace driftlab::quad
