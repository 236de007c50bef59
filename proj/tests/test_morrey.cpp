#include <cmath>

#include <gtest/gtest.h>

#include "driftlab/checks.hpp"
#include "driftlab/morrey.hpp"

using namespace driftlab;

namespace {

morrey::CylinderSampling sampling(double r_max = 2.0) {
    return checks::standard_sampling(3, 0.125, r_max, 0.5, 0.25, {0.0});
}

}  // namespace

TEST(Morrey, HardyValueAtThreeHalves) {
    // r (mean over B_r(0) of (0.5/|x|)^1.5)^(2/3) = 0.5 (3/1.5)^(2/3) for every r <= 1.
    const auto e = morrey::morrey_norm(fields::hardy(1.0, 3), 1.5, sampling());
    EXPECT_NEAR(e.value, 0.5 * std::pow(2.0, 2.0 / 3.0), 1e-9);
    EXPECT_EQ(e.kind, "lower_bound");
}

TEST(Morrey, Homogeneity) {
    const auto b = fields::hardy(0.3, 3);
    const auto s = sampling();
    const double a = morrey::morrey_norm(b, 1.5, s).value;
    EXPECT_NEAR(morrey::morrey_norm(fields::scaled(-4.0, b), 1.5, s).value, 4.0 * a, 1e-12 * a);
}

TEST(Morrey, MonotoneInQ) {
    const auto b = fields::sum({fields::hardy(0.3, 3), fields::constant(Vec{0.1, 0.0, 0.0})});
    const auto s = sampling();
    double prev = 0.0;
    for (double q : {1.1, 1.3, 1.5, 2.0, 2.5}) {
        const double v = morrey::morrey_norm(b, q, s).value;
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(Morrey, ConstantFieldAttainsLargestRadius) {
    const auto c = fields::constant(Vec{0.0, 0.3, 0.4});
    const auto e = morrey::morrey_norm(c, 1.5, sampling(4.0));
    EXPECT_NEAR(e.value, 4.0 * 0.5, 1e-12);
    EXPECT_DOUBLE_EQ(e.argmax_radius, 4.0);
}

TEST(Morrey, EllipticMatchesParabolicForStationaryField) {
    const auto b = fields::hardy(1.0, 3);
    const auto s = sampling();
    EXPECT_NEAR(morrey::elliptic_morrey_norm(b, 1.5, s).value, morrey::morrey_norm(b, 1.5, s).value, 1e-9);
}

TEST(Morrey, CylinderFunctionalOfConstant) {
    const auto c = fields::constant(Vec{1.0, 0.0, 0.0});
    const morrey::ParabolicCylinder cyl{0.0, Vec{0.0, 0.0, 0.0}, 0.5};
    EXPECT_NEAR(morrey::cylinder_functional(c, cyl, 2.0).value, 0.5, 1e-12);
}

TEST(Morrey, InvSqrtTimeIsScaleInvariant) {
    const auto b = fields::inv_sqrt_time(0.5, Vec{1.0, 0.0, 0.0});
    const auto s = checks::standard_sampling(3, 0.125, 1.0, 0.0, 0.25, {0.0});
    const double v = morrey::morrey_norm(b, 1.5, s).value;
    // Cylinders anchored at t = 0: r (mean of (0.5/sqrt(t))^1.5 over [0, r^2])^(2/3) = 0.5 * 4^(2/3).
    EXPECT_NEAR(v, 0.5 * std::pow(4.0, 2.0 / 3.0), 1e-9);
}

TEST(Morrey, SamplingFingerprintRecorded) {
    const auto e = morrey::morrey_norm(fields::hardy(1.0, 3), 1.5, sampling());
    EXPECT_EQ(e.sampling.at("radii").size(), 5u);
    EXPECT_EQ(e.sampling.at("anchor_count").get<std::size_t>(), 125u);
}

TEST(Maximal, ConstantIsFixedPoint) {
    const LatticeGrid g{3, 1.0, 0.25, 0.0, 0.16, 0.02};
    const ScalarLattice h(g, 3.0);
    for (auto mode : {morrey::MaximalMode::anchored, morrey::MaximalMode::uncentered}) {
        const auto m = morrey::maximal_function(h, 0.0, mode);
        for (double v : m.values) EXPECT_NEAR(v, 3.0, 1e-12);
    }
}

TEST(Maximal, DominatesInputAndUncenteredDominatesAnchored) {
    const LatticeGrid g{3, 1.0, 0.25, 0.0, 0.16, 0.02};
    ScalarLattice h(g);
    for (std::size_t q = 0; q < h.values.size(); ++q) h.values[q] = std::exp(-g.point(q % g.spatial_size()).norm2() / 0.1);
    const auto a = morrey::maximal_function(h, 0.0, morrey::MaximalMode::anchored);
    const auto u = morrey::maximal_function(h, 0.0, morrey::MaximalMode::uncentered);
    for (std::size_t q = 0; q < h.values.size(); ++q) {
        EXPECT_GE(a.values[q], h.values[q] * (1.0 - 1e-12));
        EXPECT_GE(u.values[q], a.values[q]);
    }
}

TEST(Maximal, NegativeInputRejected) {
    const LatticeGrid g{3, 1.0, 0.25, 0.0, 0.16, 0.02};
    ScalarLattice h(g, 1.0);
    h.values[5] = -1.0;
    EXPECT_THROW(morrey::maximal_function(h, 0.0, morrey::MaximalMode::anchored), Error);
}

TEST(Maximal, HedbergRatioFinite) {
    const LatticeGrid g{3, 1.0, 0.25, 0.0, 0.16, 0.02};
    ScalarLattice h(g);
    for (std::size_t q = 0; q < h.values.size(); ++q) h.values[q] = std::exp(-g.point(q % g.spatial_size()).norm2() / 0.2);
    const auto rep = morrey::hedberg_ratio(h, 1.0, 2.0);
    EXPECT_TRUE(std::isfinite(rep.ratio));
    EXPECT_GT(rep.ratio, 0.0);
    EXPECT_EQ(rep.unguarded_nodes, 0u);
}

TEST(Lps, Classification) {
    EXPECT_EQ(morrey::lps_classify(3, 3.0, INFINITY).cls, morrey::LpsClass::critical);
    EXPECT_EQ(morrey::lps_classify(3, 6.0, 4.0).cls, morrey::LpsClass::critical);
    EXPECT_EQ(morrey::lps_classify(3, 4.0, 4.0).cls, morrey::LpsClass::supercritical);
    EXPECT_EQ(morrey::lps_classify(3, 12.0, 8.0).cls, morrey::LpsClass::subcritical);
    EXPECT_DOUBLE_EQ(morrey::lps_classify(3, 4.0, 4.0).exponent, 1.25);
    EXPECT_FALSE(morrey::lps_classify(3, 2.0, 4.0).membership_claim_valid);
}
