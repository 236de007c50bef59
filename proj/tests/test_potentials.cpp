#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "driftlab/potentials.hpp"
#include "driftlab/random.hpp"

using namespace driftlab;
using potentials::Direction;
using potentials::TimeExtension;

namespace {

const LatticeGrid kSmall{3, 1.0, 0.25, 0.0, 0.16, 0.02};  // 9^3 x 9

double max_abs_diff(const ScalarLattice& a, const ScalarLattice& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) m = std::max(m, std::abs(a.values[k] - b.values[k]));
    return m;
}

}  // namespace

TEST(Random, PhiloxKnownAnswer) {
    const auto out = rng::philox4x32({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out[0], 0x6627e8d5u);
    EXPECT_EQ(out[1], 0xe169c58du);
    EXPECT_EQ(out[2], 0xbc57ac4cu);
    EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Random, NormalsAreKeyedAndStable) {
    double a[6], b[6], c[6];
    rng::normals(9, 4, 2, a, 6);
    rng::normals(9, 4, 2, b, 6);
    rng::normals(9, 5, 2, c, 6);
    for (int k = 0; k < 6; ++k) {
        EXPECT_EQ(a[k], b[k]);
        EXPECT_NE(a[k], c[k]);
    }
}

TEST(Potentials, NormalizationOnConstants) {
    const ScalarLattice one(kSmall, 1.0);
    for (double alpha : {0.5, 1.0, 1.5, 2.0})
        for (double lambda : {1.0, 4.0})
            for (Direction dir : {Direction::forward, Direction::backward}) {
                const auto u = potentials::potential_apply(*potentials::cached_plan(kSmall, dir, alpha, lambda), one,
                                                           TimeExtension::stationary);
                for (double v : u.values) EXPECT_NEAR(v, std::pow(lambda, -0.5 * alpha), 1e-12);
            }
}

TEST(Potentials, QuarterPowerAtLambdaFour) {
    const ScalarLattice one(kSmall, 1.0);
    const auto u = potentials::potential_apply(*potentials::cached_plan(kSmall, Direction::forward, 0.5, 4.0), one,
                                               TimeExtension::stationary);
    EXPECT_NEAR(u.values.back(), std::pow(4.0, -0.25), 1e-12);
}

TEST(Potentials, SingleFourierModeIsEigenfunction) {
    // Discrete Laplacian symbol for frequency k on n points: 4/dx^2 sin^2(pi k / n).
    const int n = kSmall.nodes_per_axis(), k = 2;
    const double mu = 4.0 / (kSmall.dx * kSmall.dx) * std::pow(std::sin(std::numbers::pi * k / n), 2);
    ScalarLattice h(kSmall);
    for (int i = 0; i < kSmall.time_nodes(); ++i)
        for (std::size_t s = 0; s < kSmall.spatial_size(); ++s)
            h.at(i, s) = std::cos(2.0 * std::numbers::pi * k * kSmall.unflatten(s)[1] / n);
    for (double alpha : {0.5, 1.5}) {
        const auto u = potentials::potential_apply(*potentials::cached_plan(kSmall, Direction::forward, alpha, 1.0), h,
                                                   TimeExtension::stationary);
        const double f = std::pow(1.0 + mu, -0.5 * alpha);
        for (std::size_t q = 0; q < h.values.size(); ++q) EXPECT_NEAR(u.values[q], f * h.values[q], 1e-12);
    }
}

TEST(Potentials, ZeroExtensionIsCausal) {
    const ScalarLattice one(kSmall, 1.0);
    const auto& plan = *potentials::cached_plan(kSmall, Direction::forward, 1.0, 1.0);
    const auto u = potentials::potential_apply(plan, one);
    ScalarLattice late = one;
    for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) late.at(kSmall.time_nodes() - 1, s) = 5.0;
    const auto v = potentials::potential_apply(plan, late);
    for (int i = 0; i + 1 < kSmall.time_nodes(); ++i)
        for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) EXPECT_NEAR(v.at(i, s), u.at(i, s), 1e-14);
    // Monotone in time for a nonnegative constant input.
    for (int i = 1; i < kSmall.time_nodes(); ++i) EXPECT_GT(u.at(i, 0), u.at(i - 1, 0));
}

TEST(Potentials, BackwardIsTimeReflectionOfForward) {
    ScalarLattice h(kSmall), hr(kSmall);
    const int nt = kSmall.time_nodes();
    for (std::size_t q = 0; q < h.values.size(); ++q) h.values[q] = rng::uniform(4, q, 0) - 0.5;
    for (int i = 0; i < nt; ++i)
        for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) hr.at(i, s) = h.at(nt - 1 - i, s);
    const auto f = potentials::potential_apply(*potentials::cached_plan(kSmall, Direction::forward, 1.5, 2.0), h);
    const auto b = potentials::potential_apply(*potentials::cached_plan(kSmall, Direction::backward, 1.5, 2.0), hr);
    for (int i = 0; i < nt; ++i)
        for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) EXPECT_NEAR(f.at(i, s), b.at(nt - 1 - i, s), 1e-14);
}

TEST(Potentials, LinearityAndSolveInverse) {
    ScalarLattice a(kSmall), b(kSmall);
    for (std::size_t q = 0; q < a.values.size(); ++q) {
        a.values[q] = rng::uniform(5, q, 0) - 0.5;
        b.values[q] = rng::uniform(5, q, 1) - 0.5;
    }
    const auto& plan = *potentials::cached_plan(kSmall, Direction::forward, 1.0, 1.0);
    ScalarLattice ab = a;
    ab += b;
    ScalarLattice sum = potentials::potential_apply(plan, a);
    sum += potentials::potential_apply(plan, b);
    EXPECT_LT(max_abs_diff(potentials::potential_apply(plan, ab), sum), 1e-14);

    // Round trip through the inverse, with a vanishing initial slice.
    for (std::size_t s = 0; s < kSmall.spatial_size(); ++s) a.at(0, s) = 0.0;
    const auto y = potentials::potential_apply(plan, a);
    const auto x = potentials::potential_solve(plan, y);
    EXPECT_LT(max_abs_diff(potentials::potential_apply(plan, x), y), 1e-8 * lattice_norm(y, INFINITY));
}

TEST(Potentials, DeltaResolventOnConstant) {
    const potentials::SpatialLattice g(kSmall, 2.0);
    const double r = 0.04, lambda = 3.0;
    const auto u = potentials::delta_resolvent(g, r, lambda);
    for (int i = 0; i < kSmall.time_nodes(); ++i) {
        const double t = kSmall.time(i);
        const double expect = t + 1e-12 < r ? 0.0 : 2.0 * std::exp(-lambda * (t - r));
        EXPECT_NEAR(u.at(i, 17), expect, 1e-13);
    }
}

TEST(Potentials, ZeroDriftOperatorsVanish) {
    ScalarLattice h(kSmall, 1.0);
    EXPECT_EQ(lattice_norm(potentials::op_T(fields::zero_field(3), 2.0, 1.0, h), INFINITY), 0.0);
    const auto rep = potentials::probe_operator_norm(
        [](const ScalarLattice& x) { return potentials::op_T(fields::zero_field(3), 2.0, 1.0, x); }, "T_p", 2.0, 1.0,
        kSmall, 16, 3);
    EXPECT_EQ(rep.max_ratio, 0.0);
    EXPECT_EQ(rep.kind, "lower_bound");
}

TEST(Potentials, ProbeRecoversScalarMultiple) {
    const auto rep = potentials::probe_operator_norm(
        [](const ScalarLattice& x) {
            ScalarLattice y = x;
            for (double& v : y.values) v *= -3.0;
            return y;
        },
        "scale", 3.0, 1.0, kSmall, 16, 3);
    EXPECT_NEAR(rep.max_ratio, 3.0, 1e-12);
    EXPECT_EQ(rep.running_max.size(), 16u);
}

TEST(Potentials, OperatorNormDecreasesInLambda) {
    const auto b = fields::hardy(0.04, 3);
    double prev = INFINITY;
    for (double lambda : {1.0, 16.0}) {
        const auto rep = potentials::probe_operator_norm(
            [&](const ScalarLattice& x) { return potentials::op_T(b, 2.0, lambda, x); }, "T_p", 2.0, lambda, kSmall, 16, 3);
        EXPECT_LT(rep.max_ratio, prev);
        prev = rep.max_ratio;
    }
}

TEST(Lattice, BinaryRoundTrip) {
    ScalarLattice h(kSmall);
    for (std::size_t q = 0; q < h.values.size(); ++q) h.values[q] = std::sin(0.37 * static_cast<double>(q)) * 1e-3;
    const auto dir = std::filesystem::temp_directory_path() / "driftlab_lattice_test";
    std::filesystem::create_directories(dir);
    const auto side = write_lattice(dir / "h", h, {{"config_hash", "abc"}});
    const auto back = read_lattice(side);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].values, h.values);
    EXPECT_EQ(std::filesystem::file_size(dir / "h.bin"), h.values.size() * 8);
    std::filesystem::remove_all(dir);
}

TEST(Lattice, GridValidation) {
    LatticeGrid g = kSmall;
    g.dx = 0.3;
    try {
        g.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::configuration);
    }
}
