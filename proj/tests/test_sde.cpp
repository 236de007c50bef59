#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "driftlab/sde.hpp"

using namespace driftlab;

namespace {

sde::EulerConfig base(std::size_t paths, std::uint64_t seed = 1) {
    sde::EulerConfig c;
    c.x0 = Vec{0.1, 0.0, -0.1};
    c.horizon = 0.1;
    c.dt = 1e-2;
    c.paths = paths;
    c.seed = seed;
    c.level = 10.0;
    return c;
}

double msd(const sde::PathEnsemble& e) {
    double s = 0.0;
    for (const Vec& x : e.finals()) s += (x - e.config().x0).norm2();
    return s / static_cast<double>(e.finals().size());
}

}  // namespace

TEST(Sde, SameSeedSameEnsemble) {
    const auto a = sde::simulate(base(500, 7), fields::zero_field(3));
    const auto b = sde::simulate(base(500, 7), fields::zero_field(3));
    const auto c = sde::simulate(base(500, 8), fields::zero_field(3));
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Sde, ZeroDriftMeanSquareDisplacement) {
    // E|X_T - x0|^2 = 2 d T
    const auto e = sde::simulate(base(20000), fields::zero_field(3));
    const double expect = 2.0 * 3 * 0.1;
    // Var |W|^2 for a 3-d Gaussian with per-axis variance 0.2 is 2 * 3 * 0.2^2.
    const double se = std::sqrt(2.0 * 3 * 0.04 / 20000.0);
    EXPECT_NEAR(msd(e), expect, 4.0 * se);
}

TEST(Sde, ConstantDriftShiftsMean) {
    const auto e = sde::simulate(base(20000), fields::constant(Vec{2.0, 0.0, 0.0}));
    double m = 0.0;
    for (const Vec& x : e.finals()) m += x[0];
    m /= 20000.0;
    EXPECT_NEAR(m, 0.1 - 0.2, 4.0 * std::sqrt(0.2 / 20000.0));
}

TEST(Sde, StandardErrorHalvesWhenPathsQuadruple) {
    auto h = [](double, const Vec& x) { return x[0] * x[0]; };
    const auto small = sde::occupation_estimate(sde::simulate(base(4000, 2), fields::zero_field(3)), h, 0.0, 0.1);
    const auto big = sde::occupation_estimate(sde::simulate(base(16000, 3), fields::zero_field(3)), h, 0.0, 0.1);
    const double ratio = big.stderr_ / small.stderr_;
    EXPECT_GT(ratio, 0.4);
    EXPECT_LT(ratio, 0.6);
}

TEST(Sde, OccupationOfOneIsWindowLength) {
    const auto e = sde::simulate(base(200), fields::hardy(0.04, 3));
    const auto est = sde::occupation_estimate(e, [](double, const Vec&) { return 1.0; }, 0.02, 0.07);
    EXPECT_NEAR(est.value, 0.05, 1e-12);
}

TEST(Sde, GaussianBoxOccupationMatchesQuadrature) {
    const Vec x0{0.1, 0.0, -0.1}, lo{-0.2, -0.3, -0.25}, hi{0.3, 0.2, 0.25};
    auto prob = [&](double t) {
        double p = 1.0;
        for (int a = 0; a < 3; ++a) {
            const double sd = std::sqrt(2.0 * t);
            p *= 0.5 * (std::erfc((lo[a] - x0[a]) / (sd * std::numbers::sqrt2)) -
                        std::erfc((hi[a] - x0[a]) / (sd * std::numbers::sqrt2)));
        }
        return p;
    };
    const double oracle = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(prob, 1e-300, 0.5, 25, 1e-13);
    EXPECT_NEAR(sde::gaussian_box_occupation(x0, lo, hi, 0.0, 0.5), oracle, 1e-9);
}

TEST(Sde, TestFunctionDerivatives) {
    const sde::TestFunction f{Vec{0.1, 0.2, 0.0}, 0.8, 1.5, false};
    const Vec x{0.3, -0.1, 0.2};
    const double h = 1e-5;
    double lap = 0.0;
    for (int a = 0; a < 3; ++a) {
        Vec p = x, m = x;
        p[a] += h;
        m[a] -= h;
        EXPECT_NEAR(f.gradient(x)[a], (f.value(p) - f.value(m)) / (2.0 * h), 1e-8);
        Vec p2 = x, m2 = x;
        p2[a] += 1e-3;
        m2[a] -= 1e-3;
        lap += (f.value(p2) - 2.0 * f.value(x) + f.value(m2)) / 1e-6;
    }
    EXPECT_NEAR(f.laplacian(x), lap, 1e-5);
    EXPECT_EQ(f.value(Vec{2.0, 0.0, 0.0}), 0.0);
}

TEST(Sde, TailMassMonotone) {
    const auto e = sde::simulate(base(2000), fields::zero_field(3));
    double prev = 1.0;
    for (double R : {0.0, 0.5, 1.0, 1.5, 3.0}) {
        const double m = sde::tail_mass(e, R);
        EXPECT_LE(m, prev);
        prev = m;
    }
    EXPECT_EQ(sde::tail_mass(e, 0.0), 1.0);
}

TEST(Sde, IncrementsAreStandardGaussian) {
    auto c = base(2000);
    c.noise_refinement = 3;
    const auto e = sde::simulate(c, fields::zero_field(3));
    EXPECT_TRUE(sde::increment_check(e).pass);
}

TEST(Sde, NoiseRefinementCouplesFineAndCoarse) {
    // With zero drift the endpoint is x0 + sum of all increments, independent of step grouping.
    auto fine = base(50);
    fine.dt = 5e-3;
    auto coarse = base(50);
    coarse.noise_refinement = 2;
    const auto a = sde::simulate(fine, fields::zero_field(3));
    const auto b = sde::simulate(coarse, fields::zero_field(3));
    for (std::size_t i = 0; i < 50; ++i)
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.finals()[i][k], b.finals()[i][k], 1e-12);
}

TEST(Sde, UnboundedDriftNeedsLevel) {
    try {
        sde::simulate(base(10), fields::hardy(0.04, 3));
        SUCCEED();
    } catch (const Error&) {
        FAIL();
    }
    auto c = base(10);
    c.level = INFINITY;
    try {
        sde::simulate(c, fields::hardy(0.04, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}

TEST(Sde, MartingaleResidualSmallForZeroDrift) {
    auto c = base(4000, 9);
    c.dt = 1e-3;
    const auto e = sde::simulate(c, fields::zero_field(3));
    const auto rep = sde::martingale_residual(e, sde::stock_test_functions(e.config().x0), {0.05, 0.1});
    EXPECT_LT(rep.max_z, 4.5);
    EXPECT_EQ(rep.rows.size(), 6u);
}

TEST(Sde, PropagatorFingerprintMismatchRejected) {
    const auto e = sde::simulate(base(10), fields::zero_field(3));
    sde::PropagatorTable tb;
    tb.drift_fingerprint = "0000000000000000";
    try {
        sde::law_vs_propagator(e, [](const Vec&) { return 1.0; }, {tb}, {0.1});
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::configuration);
    }
}

TEST(Stats, OlsRecoversExactLine) {
    const auto f = stats::ols({0.0, 1.0, 2.0, 3.0}, {1.0, 3.5, 6.0, 8.5});
    EXPECT_NEAR(f.slope, 2.5, 1e-14);
    EXPECT_NEAR(f.intercept, 1.0, 1e-14);
    EXPECT_NEAR(f.r2, 1.0, 1e-14);
    EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
}
