#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "driftlab/solver.hpp"

using namespace driftlab;

namespace {

const LatticeGrid kSmall{3, 1.0, 0.25, 0.0, 0.16, 0.02};
const LatticeGrid kMid{3, 2.0, 0.25, 0.0, 0.16, 0.02};

ScalarLattice bump_source(const LatticeGrid& g) {
    const auto bump = solver::stock_bumps(g).front();
    return solver::sample(g, [&](double t, const Vec& x) { return bump(t, x); });
}

double fd_laplacian(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
    double s = 0.0;
    for (int a = 0; a < x.size(); ++a) {
        Vec p = x, m = x;
        p[a] += h;
        m[a] -= h;
        s += (f(p) - 2.0 * f(x) + f(m)) / (h * h);
    }
    return s;
}

}  // namespace

TEST(Solver, ZeroDriftReturnsResolventWithoutTerms) {
    const ScalarLattice f = bump_source(kSmall);
    const auto rep = solver::neumann_solve(fields::zero_field(3), f, 2.0, 1.0);
    const auto direct = potentials::potential_apply(
        *potentials::cached_plan(kSmall, potentials::Direction::forward, 2.0, 1.0), f);
    EXPECT_EQ(rep.u.values, direct.values);
    EXPECT_EQ(rep.terms, 0);
    EXPECT_FALSE(rep.gate.has_value());
}

TEST(Solver, HardySeriesContracts) {
    const ScalarLattice f = bump_source(kMid);
    solver::SolveOptions opt;
    opt.gate_probes = 16;
    const auto rep = solver::neumann_solve(fields::hardy(0.04, 3), f, 2.0, 4.0, opt);
    ASSERT_TRUE(rep.gate.has_value());
    EXPECT_LT(rep.gate->max_ratio, 1.0);
    EXPECT_GT(rep.terms, 0);
    EXPECT_TRUE(rep.converged);
    for (double r : rep.ratios) EXPECT_LT(r, 1.0);
    EXPECT_LE(rep.term_norms.back(), opt.tol * rep.source_norm);
}

TEST(Solver, GateRefusalForLargeDelta) {
    const ScalarLattice f = bump_source(kMid);
    solver::SolveOptions opt;
    opt.gate_probes = 16;
    try {
        solver::neumann_solve(fields::hardy(100.0, 3), f, 2.0, 1.0, opt);
        FAIL();
    } catch (const solver::GateRefusal& e) {
        EXPECT_EQ(e.kind(), ErrorKind::gate_refused);
        EXPECT_GE(e.report.max_ratio, 1.0);
    }
}

TEST(Solver, WeakFormResidualShrinksWithTimeStep) {
    double total[2] = {0.0, 0.0};
    for (int lv = 0; lv < 2; ++lv) {
        const LatticeGrid g{3, 2.0, 0.25, 0.0, 0.16, 0.02 / (1 << lv)};
        const ScalarLattice f = bump_source(g);
        auto coef = std::make_shared<potentials::DriftCoefficients>(
            potentials::sample_coefficients(fields::hardy(0.04, 3), g, 2.0));
        solver::SolveOptions opt;
        opt.gate_probes = 16;
        const auto rep = solver::neumann_solve(coef, f, 1.0, opt);
        for (const auto& w : solver::weak_form_residual(coef, rep.u, f, 1.0, solver::stock_bumps(g))) {
            EXPECT_LT(w.residual, 0.1 * std::abs(w.rhs) + 1e-4);
            total[lv] += w.residual;
        }
    }
    EXPECT_GT(total[0] / total[1], 3.0);
}

TEST(Solver, ShiftedSolveMatchesDirectSolveAtSameLambda) {
    const ScalarLattice f = bump_source(kMid);
    auto coef = std::make_shared<potentials::DriftCoefficients>(
        potentials::sample_coefficients(fields::hardy(0.04, 3), kMid, 2.0));
    solver::SolveOptions opt;
    opt.gate_probes = 16;
    const auto direct = solver::neumann_solve(coef, f, 2.0, opt).u;
    const auto shifted = solver::shifted_solve(coef, &f, nullptr, kMid.t0, 2.0, 2.0, opt);
    for (std::size_t k = 0; k < direct.values.size(); ++k) EXPECT_NEAR(shifted.values[k], direct.values[k], 1e-15);
}

TEST(Solver, ShiftIdentityOnZeroDrift) {
    // mu = 0 heat solution from the lambda = 3 solve against the lambda = 0 potential directly.
    const ScalarLattice f = bump_source(kSmall);
    auto coef = std::make_shared<potentials::DriftCoefficients>(potentials::sample_coefficients(fields::zero_field(3), kSmall, 2.0));
    const auto v = solver::shifted_solve(coef, &f, nullptr, kSmall.t0, 0.0, 3.0, {});
    const auto direct = potentials::potential_apply(
        *potentials::cached_plan(kSmall, potentials::Direction::forward, 2.0, 0.0), f);
    double scale = lattice_norm(direct, INFINITY), dev = 0.0;
    for (std::size_t k = 0; k < v.values.size(); ++k) dev = std::max(dev, std::abs(v.values[k] - direct.values[k]));
    EXPECT_LT(dev, 2e-2 * scale);  // piecewise-linear time interpolation of e^(-3 t) f
}

TEST(Solver, CauchyZeroBeforeStartAndHeatForZeroDrift) {
    potentials::SpatialLattice g(kSmall);
    for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) g.values[s] = std::exp(-kSmall.point(s).norm2() / 0.18);
    const double r = 0.04;
    const auto rep = solver::cauchy_propagate(fields::zero_field(3), g, r, 2.0, 1.0);
    const auto heat = potentials::delta_resolvent(g, r, 1.0);
    EXPECT_EQ(rep.u.values, heat.values);
    for (int i = 0; i < potentials::time_index(kSmall, r); ++i) EXPECT_EQ(rep.u.at(i, 100), 0.0);
}

TEST(Solver, ApproximationLevelsMustIncrease) {
    const ScalarLattice f = bump_source(kSmall);
    try {
        solver::approximation_convergence(fields::hardy(0.04, 3), &f, nullptr, 0.0, 2.0, 1.0, {5.0, 2.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}

TEST(Solver, TimeSteppingRejectsCflViolation) {
    const auto b = fields::sample_field_nodes(fields::constant(Vec{50.0, 0.0, 0.0}), kSmall);
    const ScalarLattice f = bump_source(kSmall);
    try {
        solver::time_stepping_reference(b, &f, nullptr, 1.0, kSmall.t0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::numerical);
    }
}

TEST(Solver, ManufacturedDerivativesMatchFiniteDifferences) {
    const auto m = solver::manufactured_for(kMid);
    const Vec x{0.3, -0.2, 0.1};
    const double t = 0.07, h = 1e-4;
    for (int a = 0; a < 3; ++a) {
        Vec p = x, q = x;
        p[a] += h;
        q[a] -= h;
        EXPECT_NEAR(m.gradient(t, x)[a], (m(t, p) - m(t, q)) / (2.0 * h), 1e-7);
    }
    EXPECT_NEAR(m.laplacian(t, x), fd_laplacian([&](const Vec& y) { return m(t, y); }, x, 1e-3), 1e-4);
    const double k = 1e-3;  // five-point stencil
    const double fd = (m.phi(t - 2 * k) - 8 * m.phi(t - k) + 8 * m.phi(t + k) - m.phi(t + 2 * k)) / (12 * k);
    EXPECT_NEAR(m.dphi(t), fd, 1e-7 * std::abs(fd));
    EXPECT_EQ(m(kMid.t0, x), 0.0);
}

TEST(Solver, ManufacturedResidualIsSecondOrder) {
    const auto b = fields::regularize(fields::hardy(0.04, 3), 2.0);
    double prev = 0.0;
    for (int lv = 0; lv < 2; ++lv) {
        LatticeGrid g{3, 2.0, 0.25 / (1 << lv), 0.0, 0.32, 0.02 / (1 << lv)};
        const auto m = solver::manufactured_for(g);
        const auto res = solver::pde_residual(solver::sample_exact(m, g), fields::sample_field_nodes(b, g),
                                              solver::sample_source(m, b, 1.0, g), 1.0);
        if (lv == 1) EXPECT_GT(prev / res.p_norm, 3.0);
        prev = res.p_norm;
    }
}

TEST(Weights, DerivativesMatchFiniteDifferences) {
    const solver::WeightSpec w{0.1, 2.0, Vec{0.5, 0.0, -0.5}};
    const Vec x{1.0, 2.0, -1.0};
    const double h = 1e-5;
    for (int a = 0; a < 3; ++a) {
        Vec p = x, q = x;
        p[a] += h;
        q[a] -= h;
        EXPECT_NEAR(w.gradient(x)[a], (w(p) - w(q)) / (2.0 * h), 1e-9);
    }
    EXPECT_NEAR(w.laplacian(x), fd_laplacian([&](const Vec& y) { return w(y); }, x, 1e-3), 1e-6);
}

TEST(Weights, LpPowerMatchesRadialQuadrature) {
    for (double nu : {1.0, 2.0})
        for (double p : {2.0, 12.0}) {
            const solver::WeightSpec w{0.3, nu, Vec(3)};
            const double oracle = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                [&](double r) { return 4.0 * std::numbers::pi * r * r * std::pow(1.0 + 0.3 * r * r, -nu * p); }, 0.0,
                std::numeric_limits<double>::infinity(), 20, 1e-13);
            EXPECT_NEAR(w.lp_power(p), oracle, 1e-9 * oracle);
        }
}

TEST(Weights, InequalitiesHoldWithEqualityAtUnitScale) {
    // |grad rho| / (sqrt(l) rho) = 2 nu a / (1 + a^2) peaks at a = sqrt(l)|x| = 1.
    const LatticeGrid g{3, 16.0, 1.0, 0.0, 8.0, 1.0};
    const auto r = solver::weight_inequalities({0.01, 2.0, Vec(3)}, g);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.max_grad_ratio, 2.0, 1e-15);
    EXPECT_LE(r.max_lap_ratio, r.c2);
}

TEST(Weights, SobolevProxyOfConstant) {
    const potentials::SpatialLattice g(kSmall, 2.0);
    const double vol = kSmall.spatial_size() * std::pow(kSmall.dx, 3);
    EXPECT_NEAR(solver::sobolev_proxy(g, 2.0), 2.0 * std::sqrt(vol), 1e-12);
}

TEST(Weights, RhoFinConstantFieldClosedForm) {
    const solver::WeightSpec w{1.0, 1.0, Vec(3)};
    const auto rep = solver::rho_fin_check(fields::constant(Vec{0.0, 2.0, 0.0}), 1.5, 12.0, w, 0.0, {0.1, 0.2, 0.4});
    for (std::size_t k = 0; k < rep.spans.size(); ++k)
        EXPECT_NEAR(rep.norms[k], std::pow(rep.spans[k] * 2.0 * w.lp_power(12.0), 1.0 / 12.0), 1e-9 * rep.norms[k]);
    EXPECT_NEAR(rep.p_slope, 1.0, 1e-9);
    EXPECT_NEAR(rep.target, 1.0 / 3.0, 1e-15);
}

TEST(Weights, RhoFinRejectsSmallNu) {
    try {
        solver::rho_fin_check(fields::constant(Vec{1.0, 0.0, 0.0}), 1.5, 12.0, {1.0, 0.1, Vec(3)}, 0.0, {0.1, 0.2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}

TEST(Weights, WeightedSupHoldsAfterCalibration) {
    const LatticeGrid g{3, 2.0, 0.25, 0.0, 0.32, 0.02};
    solver::WeightedSupCalibration cal;
    solver::SolveOptions opt;
    opt.gate_probes = 16;
    const auto rows = solver::weighted_sup_check(g, fields::regularize(fields::hardy(0.04, 3), 5.0),
                                                 fields::constant(Vec{1.0, 0.0, 0.0}), nullptr, {0.1, 2.0, Vec(3)}, 0.0,
                                                 {0.16, 0.32}, 2.0, 1.0, cal, opt);
    EXPECT_GT(cal.c1, 0.0);
    for (const auto& r : rows) EXPECT_GT(r.lhs, 0.0);
}
