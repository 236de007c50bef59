#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "driftlab/fields.hpp"
#include "driftlab/random.hpp"

using namespace driftlab;

namespace {

std::vector<Vec> probe_points() {
    std::vector<Vec> pts;
    for (int k = 0; k < 200; ++k) {
        const double r = 0.01 + 1.4 * rng::uniform(3, k, 0);
        Vec x{rng::uniform(3, k, 1) - 0.5, rng::uniform(3, k, 2) - 0.5, rng::uniform(3, k, 3) - 0.5};
        pts.push_back((r / x.norm()) * x);
    }
    return pts;
}

}  // namespace

TEST(Fields, HardyMagnitudeAtHalfRadius) {
    const auto b = fields::hardy(1.0, 3);
    const Vec v = b(0.3, Vec{0.5, 0.0, 0.0});
    EXPECT_DOUBLE_EQ(v.norm(), 1.0);
    EXPECT_DOUBLE_EQ(v[0], 1.0);  // radial; the SDE applies it with a minus sign
    EXPECT_EQ(v[1], 0.0);
}

TEST(Fields, HardyVanishesOutsideCutoffAndAtOrigin) {
    const auto b = fields::hardy(1.0, 3);
    EXPECT_EQ(b(0.0, Vec{1.0, 0.0, 0.0}).norm(), 0.0);
    EXPECT_EQ(b(0.0, Vec{0.0, 2.0, 0.0}).norm(), 0.0);
    EXPECT_EQ(b(0.0, Vec{0.0, 0.0, 0.0}).norm(), 0.0);
}

TEST(Fields, RegularizedHardyThreshold) {
    const auto bn = fields::regularize(fields::hardy(1.0, 3), 2.0);
    EXPECT_DOUBLE_EQ(bn(0.0, Vec{0.5, 0.0, 0.0})[0], 1.0);
    EXPECT_EQ(bn(0.0, Vec{0.1, 0.0, 0.0}).norm(), 0.0);
    EXPECT_DOUBLE_EQ(fields::hardy_threshold_radius(1.0, 3, 1.0), 0.5);
    const auto b1 = fields::regularize(fields::hardy(1.0, 3), 1.0);
    EXPECT_EQ(b1(0.0, Vec{0.49, 0.0, 0.0}).norm(), 0.0);
    EXPECT_GT(b1(0.0, Vec{0.51, 0.0, 0.0}).norm(), 0.0);
}

TEST(Fields, RegularizeLeavesSmallConstantUnchanged) {
    const auto c = fields::constant(Vec{0.3, 0.4, 0.0});
    const auto cn = fields::regularize(c, 1.0);
    EXPECT_EQ(cn(0.0, Vec{5.0, 1.0, 2.0}), c(0.0, Vec{5.0, 1.0, 2.0}));
}

TEST(Fields, RegularizationProperties) {
    const auto b = fields::sum({fields::hardy(0.5, 3), fields::constant(Vec{0.2, 0.0, -0.1})});
    for (double n : {0.5, 2.0, 10.0}) {
        const auto bn = fields::regularize(b, n);
        for (const Vec& x : probe_points()) {
            const Vec v = b(0.1, x), vn = bn(0.1, x);
            EXPECT_LE(vn.norm(), n);
            if (v.norm() <= n) EXPECT_EQ(vn, v);
        }
    }
}

TEST(Fields, ScaledIsPointwiseMultiple) {
    const auto b = fields::hardy(0.04, 3);
    const auto s = fields::scaled(-2.5, b);
    for (const Vec& x : probe_points()) {
        const Vec v = b(0.0, x), w = s(0.0, x);
        for (int a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(w[a], -2.5 * v[a]);
    }
}

TEST(Fields, SplitPartsSumToField) {
    const auto b = fields::hardy(1.0, 3);
    const auto [sing, bnd] = fields::split_field(b, 3.0);
    for (const Vec& x : probe_points()) {
        const Vec v = b(0.0, x), s = sing(0.0, x), r = bnd(0.0, x);
        EXPECT_LE(r.norm(), 3.0);
        for (int a = 0; a < 3; ++a) EXPECT_EQ(s[a] + r[a], v[a]);
    }
}

TEST(Fields, InvSqrtTime) {
    const auto b = fields::inv_sqrt_time(0.5, Vec{0.0, 2.0, 0.0});
    const Vec v = b(0.25, Vec{1.0, 1.0, 1.0});
    EXPECT_DOUBLE_EQ(v[1], 1.0);
    EXPECT_EQ(b(0.0, Vec{1.0, 1.0, 1.0}).norm(), 0.0);
}

TEST(Fields, FractionalPowerVector) {
    const Vec v = fields::fractional_power_vector(Vec{0.0, 3.0, 4.0}, 5.0);
    const double s = std::pow(5.0, 0.2);
    EXPECT_DOUBLE_EQ(v[0], 0.0);
    EXPECT_NEAR(v[1], 0.6 * s, 1e-15);
    EXPECT_NEAR(v[2], 0.8 * s, 1e-15);
}

TEST(Fields, HardyCriticalDelta) {
    EXPECT_DOUBLE_EQ(fields::hardy_critical_delta(3), 36.0);
    EXPECT_TRUE(fields::hardy_supercritical(40.0, 3));
    EXPECT_FALSE(fields::hardy_supercritical(0.04, 3));
}

TEST(Fields, JsonRoundTrip) {
    const auto b = fields::regularize(
        fields::sum({fields::scaled(2.0, fields::hardy(0.04, 3, 0.8)), fields::inv_sqrt_time(0.1, Vec{1.0, 0.0, 0.0})}), 5.0);
    const auto j = fields::to_json(b);
    const auto b2 = fields::from_json(j);
    EXPECT_EQ(fields::to_json(b2), j);
    for (const Vec& x : probe_points()) EXPECT_EQ(b(0.3, x), b2(0.3, x));
}

TEST(Fields, UnknownKindIsConfigurationError) {
    try {
        fields::from_json({{"kind", "vortex"}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}

TEST(Fields, GridSampledOutsideLatticeIsDomainError) {
    const LatticeGrid g{3, 1.0, 0.25, 0.0, 0.16, 0.02};
    VectorLattice lat(g);
    const auto b = fields::grid_sampled(lat);
    EXPECT_NO_THROW(b(0.1, Vec{0.5, 0.0, 0.0}));
    try {
        b(0.1, Vec{3.0, 0.0, 0.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::domain);
    }
}

TEST(Fields, CellAveragesIntegrateBallVolume) {
    // Support of the Hardy field is the unit ball; cell averages of the indicator sum to its volume.
    const LatticeGrid g{3, 1.5, 0.25, 0.0, 0.16, 0.02};
    const auto avg = fields::sample_cell_averages(fields::hardy(0.04, 3), g, 2, [](const Vec& b, double* o) {
        o[0] = b.norm() > 0.0 ? 1.0 : 0.0;
        o[1] = b.norm();
    });
    double vol = 0.0, mass = 0.0;
    for (std::size_t s = 0; s < g.spatial_size(); ++s) {
        vol += avg[0].at(0, s);
        mass += avg[1].at(0, s);
    }
    vol *= std::pow(g.dx, 3);
    mass *= std::pow(g.dx, 3);
    EXPECT_NEAR(vol, 4.0 * std::numbers::pi / 3.0, 1e-9);
    // int_{|x|<1} 0.1 / |x| dx = 0.2 pi
    EXPECT_NEAR(mass, 0.2 * std::numbers::pi, 1e-9);
}

TEST(Fields, AnalyzeHardyStructure) {
    const auto st = fields::analyze(fields::hardy(1.0, 3));
    EXPECT_TRUE(st.time_independent);
    EXPECT_TRUE(st.radial);
    ASSERT_TRUE(st.center.has_value());
    EXPECT_FALSE(st.bounded);
}
