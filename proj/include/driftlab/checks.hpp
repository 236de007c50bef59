#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/fields.hpp"
#include "driftlab/morrey.hpp"
#include "driftlab/potentials.hpp"
#include "driftlab/sde.hpp"
#include "driftlab/solver.hpp"

// Property checks shared by the acceptance suite and `driftlab verify`.
namespace driftlab::checks {

struct Check {
    std::string name;
    bool pass = false;
    std::string summary;
    nlohmann::json data = nlohmann::json::object();
};

inline nlohmann::json to_json(const Check& c) {
    return {{"name", c.name}, {"pass", c.pass}, {"summary", c.summary}, {"data", c.data}};
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline Check combine(std::string name, const std::vector<Check>& parts) {
    Check c;
    c.name = std::move(name);
    c.pass = !parts.empty();
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : parts) {
        c.pass = c.pass && p.pass;
        if (!c.summary.empty()) c.summary += "; ";
        c.summary += p.summary;
        arr.push_back(to_json(p));
    }
    c.data = {{"parts", arr}};
    return c;
}

inline LatticeGrid kernel_grid() { return {3, 2.0, 0.25, 0.0, 0.64, 0.01}; }

// ---- potentials ---------------------------------------------------------------------

/// potential_apply on h = 1 (stationary extension) against lambda^(-alpha/2) on interior nodes.
inline Check kernel_normalization(const LatticeGrid& g, const std::vector<double>& alphas,
                                  const std::vector<double>& lambdas, double tol = 1e-3) {
    using namespace potentials;
    Check c;
    c.name = "kernel normalization";
    double worst = 0.0;
    nlohmann::json rows = nlohmann::json::array();
    const ScalarLattice one(g, 1.0);
    for (double a : alphas)
        for (double l : lambdas) {
            const auto plan = cached_plan(g, Direction::forward, a, l);
            const ScalarLattice u = potential_apply(*plan, one, TimeExtension::stationary);
            const double target = std::pow(l, -0.5 * a);
            double err = 0.0;
            for (int i = g.time_nodes() / 4; i < g.time_nodes(); ++i)
                for (std::size_t s = 0; s < g.spatial_size(); ++s) err = std::max(err, std::abs(u.at(i, s) / target - 1.0));
            worst = std::max(worst, err);
            rows.push_back({{"alpha", a}, {"lambda", l}, {"relative_error", err}});
        }
    c.pass = worst <= tol;
    c.summary = "max relative error " + fmt(worst) + " (limit " + fmt(tol) + ")";
    c.data = {{"rows", rows}, {"max_relative_error", worst}};
    return c;
}

/// Smooth probe vanishing to second order at t0, periodic in space.
inline ScalarLattice composition_probe(const LatticeGrid& g) {
    ScalarLattice h(g);
    const double span = g.t1 - g.t0, period = g.period();
    for (int i = 0; i < g.time_nodes(); ++i)
        for (std::size_t s = 0; s < g.spatial_size(); ++s) {
            const Vec x = g.point(s);
            const double t = g.time(i) - g.t0;
            const double st = std::pow(std::sin(std::numbers::pi * t / (2.0 * span)), 2) * (1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * t / span));
            double sx = 1.0;
            for (int a = 0; a < std::min(2, g.dim); ++a) sx *= std::cos(4.0 * std::numbers::pi * x[a] / period);
            h.at(i, s) = st * (1.0 + 0.3 * sx);
        }
    return h;
}

/// apply(alpha) o apply(beta) against apply(alpha + beta), max deviation over max |apply(alpha + beta)|.
inline Check semigroup_composition(const LatticeGrid& g, const std::vector<std::pair<double, double>>& pairs,
                                   const std::vector<double>& lambdas, double tol = 1e-3) {
    using namespace potentials;
    Check c;
    c.name = "semigroup composition";
    const ScalarLattice h = composition_probe(g);
    double worst = 0.0;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [a, b] : pairs)
        for (double l : lambdas) {
            const ScalarLattice ab = potential_apply(*cached_plan(g, Direction::forward, a, l),
                                                     potential_apply(*cached_plan(g, Direction::forward, b, l), h));
            const ScalarLattice direct = potential_apply(*cached_plan(g, Direction::forward, a + b, l), h);
            double dev = 0.0, scale = 0.0;
            for (std::size_t k = 0; k < h.values.size(); ++k) {
                dev = std::max(dev, std::abs(ab.values[k] - direct.values[k]));
                scale = std::max(scale, std::abs(direct.values[k]));
            }
            const double rel = dev / scale;
            worst = std::max(worst, rel);
            rows.push_back({{"alpha", a}, {"beta", b}, {"lambda", l}, {"relative_deviation", rel}});
        }
    c.pass = worst <= tol;
    c.summary = "max relative deviation " + fmt(worst) + " (limit " + fmt(tol) + ")";
    c.data = {{"rows", rows}, {"max_relative_deviation", worst}};
    return c;
}

// ---- solver ---------------------------------------------------------------------------

/// b = 0: Neumann output equals the alpha = 2 potential with no series terms, and the PDE
/// residual of the manufactured problem drops by at least `factor` per halving of (dt, dx).
inline Check zero_drift_degeneration(const LatticeGrid& coarse, int levels = 2, double lambda = 1.0, double factor = 2.0) {
    Check c;
    c.name = "b = 0 degeneration";
    const fields::VectorField zero = fields::zero_field(coarse.dim);
    std::vector<double> residuals;
    bool identical = true;
    int max_terms = 0;
    for (int lv = 0; lv < levels; ++lv) {
        LatticeGrid g = coarse;
        g.dx /= (1 << lv);
        g.dt /= (1 << lv);
        const auto m = solver::manufactured_for(g);
        const ScalarLattice f = solver::sample_source(m, zero, lambda, g);
        const solver::SolveReport rep = solver::neumann_solve(zero, f, 2.0, lambda);
        const ScalarLattice direct =
            potentials::potential_apply(*potentials::cached_plan(g, potentials::Direction::forward, 2.0, lambda), f);
        identical = identical && rep.u.values == direct.values;
        max_terms = std::max(max_terms, rep.terms);
        residuals.push_back(solver::pde_residual(rep.u, fields::sample_field_nodes(zero, g), f, lambda).p_norm);
    }
    double worst = INFINITY;
    for (std::size_t k = 0; k + 1 < residuals.size(); ++k) worst = std::min(worst, residuals[k] / residuals[k + 1]);
    c.pass = identical && max_terms == 0 && worst >= factor;
    c.summary = std::string(identical ? "u equals the resolvent" : "u differs from the resolvent") + ", K = " +
                std::to_string(max_terms) + ", residual reduction " + fmt(worst) + " (limit " + fmt(factor) + ")";
    c.data = {{"residuals", residuals}, {"identical", identical}, {"terms", max_terms}, {"min_reduction", worst}};
    return c;
}

/// Probed |T_p| strictly decreasing over lambdas and below 1 at the last; term ratios of the
/// follow-up solve at the last lambda all below 1.
inline Check gate_behavior(const fields::VectorField& b, const LatticeGrid& g, double p, const std::vector<double>& lambdas,
                           int probes, std::uint64_t seed) {
    Check c;
    c.name = "contraction gate";
    auto coef = std::make_shared<potentials::DriftCoefficients>(potentials::sample_coefficients(b, g, p));
    std::vector<double> gates;
    nlohmann::json reports = nlohmann::json::array();
    for (double l : lambdas) {
        const potentials::DriftOperators ops(coef, l);
        const auto rep = potentials::probe_operator_norm([&](const ScalarLattice& h) { return ops.T(h); }, "T_p", p, l,
                                                         g, probes, seed);
        gates.push_back(rep.max_ratio);
        reports.push_back(potentials::to_json(rep));
    }
    // b = 0 gives T = 0 at every lambda.
    bool decreasing = true, vanishing = true;
    for (std::size_t k = 0; k + 1 < gates.size(); ++k) decreasing = decreasing && gates[k + 1] < gates[k];
    for (double v : gates) vanishing = vanishing && v == 0.0;
    decreasing = decreasing || vanishing;
    ScalarLattice f(g);
    const solver::TestBump bump = solver::stock_bumps(g).front();
    for (int i = 0; i < g.time_nodes(); ++i)
        for (std::size_t s = 0; s < g.spatial_size(); ++s) f.at(i, s) = bump(g.time(i), g.point(s));
    solver::SolveOptions opt;
    opt.gate_probes = probes;
    opt.seed = seed;
    const solver::SolveReport rep = solver::neumann_solve(coef, f, lambdas.back(), opt);
    double max_ratio = 0.0;
    for (double r : rep.ratios) max_ratio = std::max(max_ratio, r);
    c.pass = decreasing && gates.back() < 1.0 && max_ratio < 1.0;
    std::string gs;
    for (double v : gates) gs += (gs.empty() ? "" : ", ") + fmt(v);
    c.summary = "gates [" + gs + "]" + (vanishing ? " identically zero" : decreasing ? " strictly decreasing" : " not strictly decreasing") +
                ", max term ratio " + fmt(max_ratio);
    c.data = {{"lambdas", lambdas}, {"gates", gates}, {"probes", reports}, {"solve", solver::to_json(rep)}};
    return c;
}

/// Bounded drift: |u_Neumann - u_TS|_p <= factor * |u_TS - u*|_p on a manufactured problem.
inline Check oracle_equivalence(const fields::VectorField& b, double level, const LatticeGrid& g, double lambda,
                                double factor = 5.0) {
    Check c;
    c.name = "oracle equivalence";
    const fields::VectorField bn = fields::regularize(b, level);
    const auto m = solver::manufactured_for(g);
    const ScalarLattice f = solver::sample_source(m, bn, lambda, g);
    const ScalarLattice exact = solver::sample_exact(m, g);
    const ScalarLattice ts = solver::time_stepping_reference(fields::sample_field_nodes(bn, g), &f, nullptr, lambda, g.t0);
    const solver::SolveReport rep = solver::neumann_solve(bn, f, 2.0, lambda);
    ScalarLattice e_ts = ts, gap = rep.u;
    e_ts -= exact;
    gap -= ts;
    const double oracle_err = lattice_norm(e_ts, 2.0), diff = lattice_norm(gap, 2.0);
    c.pass = diff <= factor * oracle_err;
    c.summary = "|u_N - u_TS| = " + fmt(diff) + ", oracle error " + fmt(oracle_err) + " (limit " + fmt(factor) + "x)";
    c.data = {{"difference", diff}, {"oracle_error", oracle_err}, {"terms", rep.terms}, {"ratios", rep.ratios}};
    return c;
}

/// Cauchy gaps of cauchy_propagate over increasing regularization levels strictly decrease.
inline Check approximation_gaps(const fields::VectorField& b, const LatticeGrid& g, const std::vector<double>& levels,
                                double p, double lambda, double sigma, int probes, std::uint64_t seed) {
    Check c;
    c.name = "approximation convergence";
    potentials::SpatialLattice g0(g);
    for (std::size_t s = 0; s < g.spatial_size(); ++s) g0.values[s] = std::exp(-0.5 * g.point(s).norm2() / (sigma * sigma));
    solver::SolveOptions opt;
    opt.gate_probes = probes;
    opt.seed = seed;
    const auto rows = solver::approximation_convergence(b, nullptr, &g0, g.t0, p, lambda, levels, opt);
    bool decreasing = true;
    nlohmann::json js = nlohmann::json::array();
    std::string gs;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (k > 0) decreasing = decreasing && rows[k].p_gap < rows[k - 1].p_gap;
        js.push_back(solver::to_json(rows[k]));
        gs += (gs.empty() ? "" : ", ") + fmt(rows[k].p_gap);
    }
    c.pass = decreasing;
    c.summary = "p-gaps [" + gs + "]" + (decreasing ? " strictly decreasing" : " not strictly decreasing");
    c.data = {{"rows", js}};
    return c;
}

// ---- morrey -----------------------------------------------------------------------------

inline morrey::CylinderSampling standard_sampling(int dim, double r_min, double r_max, double anchor_half,
                                                  double anchor_step, std::vector<double> times) {
    morrey::CylinderSampling s;
    s.radii = morrey::CylinderSampling::dyadic(r_min, r_max);
    s.anchors = morrey::CylinderSampling::anchor_lattice(dim, anchor_half, anchor_step, times);
    return s;
}

inline morrey::CylinderSampling rescaled(const morrey::CylinderSampling& s, double k) {
    morrey::CylinderSampling out = s;
    for (double& r : out.radii) r /= k;
    for (auto& a : out.anchors) {
        a.t /= k * k;
        a.x = (1.0 / k) * a.x;
    }
    return out;
}

/// Homogeneity, q-monotonicity, parabolic scaling invariance and the constant-field value.
inline Check morrey_properties(int dim = 3) {
    const double q = 1.5, q1 = 2.0;
    const fields::VectorField hardy = fields::hardy(1.0, dim, 1.0);
    const auto samp = standard_sampling(dim, 0.125, 2.0, 0.5, 0.25, {0.0});
    std::vector<Check> parts;

    {
        Check c;
        c.name = "homogeneity";
        const double k = 2.5;
        const double a = morrey::morrey_norm(hardy, q, samp).value;
        const double b = morrey::morrey_norm(fields::scaled(k, hardy), q, samp).value;
        const double dev = std::abs(b - k * a) / (k * a);
        c.pass = dev <= 1e-12;
        c.summary = "homogeneity deviation " + fmt(dev);
        c.data = {{"norm", a}, {"scaled_norm", b}, {"factor", k}, {"relative_deviation", dev}};
        parts.push_back(c);
    }
    {
        Check c;
        c.name = "q-monotonicity";
        const double a = morrey::morrey_norm(hardy, q, samp).value;
        const double b = morrey::morrey_norm(hardy, q1, samp).value;
        c.pass = a <= b;
        c.summary = "E_" + fmt(q) + " = " + fmt(a) + " <= E_" + fmt(q1) + " = " + fmt(b);
        c.data = {{"q", q}, {"q1", q1}, {"norm_q", a}, {"norm_q1", b}};
        parts.push_back(c);
    }
    {
        Check c;
        c.name = "parabolic scaling";
        // k b(k^2 t, k x) for both fields: the Hardy drift with cutoff 1/k, and the 1/sqrt(t) drift itself.
        const double k = 2.0;
        Vec e(dim);
        e[0] = 1.0;
        const fields::VectorField ist = fields::inv_sqrt_time(0.5, e);
        const auto samp_t = standard_sampling(dim, 0.125, 1.0, 0.5, 0.5, {0.0, 0.25});
        const double h1 = morrey::morrey_norm(hardy, q, samp).value;
        const double h2 = morrey::morrey_norm(fields::hardy(1.0, dim, 1.0 / k), q, rescaled(samp, k)).value;
        const double i1 = morrey::morrey_norm(ist, q, samp_t).value;
        const double i2 = morrey::morrey_norm(ist, q, rescaled(samp_t, k)).value;
        const double dev = std::max(std::abs(h2 / h1 - 1.0), std::abs(i2 / i1 - 1.0));
        c.pass = dev <= 0.02;
        c.summary = "scaling deviation " + fmt(dev) + " (limit 0.02)";
        c.data = {{"hardy", {h1, h2}}, {"inv_sqrt_time", {i1, i2}}, {"relative_deviation", dev}};
        parts.push_back(c);
    }
    {
        Check c;
        c.name = "constant field";
        Vec v(dim);
        v[0] = 0.6;
        if (dim > 1) v[1] = -0.8;
        const double r_max = 2.0;
        const double est = morrey::morrey_norm(fields::constant(v), q, samp).value;
        const double dev = std::abs(est / (r_max * v.norm()) - 1.0);
        c.pass = dev <= 0.01;
        c.summary = "constant-field deviation " + fmt(dev) + " (limit 0.01)";
        c.data = {{"estimate", est}, {"expected", r_max * v.norm()}, {"relative_deviation", dev}};
        parts.push_back(c);
    }
    return combine("Morrey properties", parts);
}

// ---- weights ------------------------------------------------------------------------------

inline Check weight_inequalities(const std::vector<double>& ls, const std::vector<double>& nus) {
    Check c;
    c.name = "weight inequalities";
    const LatticeGrid g{3, 16.0, 1.0, 0.0, 8.0, 1.0};  // 33^3 spatial nodes
    c.pass = true;
    nlohmann::json rows = nlohmann::json::array();
    double worst_grad = 0.0, worst_lap = 0.0;
    for (double l : ls)
        for (double nu : nus) {
            const solver::WeightSpec w{l, nu, Vec(3)};
            const auto r = solver::weight_inequalities(w, g);
            c.pass = c.pass && r.pass;
            worst_grad = std::max(worst_grad, r.max_grad_ratio / r.c1);
            worst_lap = std::max(worst_lap, r.max_lap_ratio / r.c2);
            rows.push_back({{"l", l}, {"nu", nu}, {"grad_ratio", r.max_grad_ratio}, {"c1", r.c1},
                            {"laplacian_ratio", r.max_lap_ratio}, {"c2", r.c2}});
        }
    c.summary = "max grad ratio / c1 = " + fmt(worst_grad) + ", max Laplacian ratio / c2 = " + fmt(worst_lap);
    c.data = {{"rows", rows}};
    return c;
}

inline Check rho_fin(const fields::VectorField& f, double q, double p, const solver::WeightSpec& w, double target,
                     double tol, bool relative, const std::string& name) {
    Check c;
    c.name = name;
    const auto rep = solver::rho_fin_check(f, q, p, w, 0.0, {0.05, 0.1, 0.2, 0.4});
    const double dev = relative ? std::abs(rep.p_slope / target - 1.0) : std::abs(rep.p_slope - target);
    c.pass = dev <= tol;
    c.summary = "p*slope = " + fmt(rep.p_slope) + " vs " + fmt(target) + (relative ? " (relative tol " : " (tol ") +
                fmt(tol) + ")";
    c.data = solver::to_json(rep);
    return c;
}

// ---- sde ------------------------------------------------------------------------------------

/// b = 0: mean squared displacement 2dT and unit-box occupation against the Gaussian oracle, both within 3 SE.
inline Check sde_baseline(int dim, std::size_t paths, double dt, double horizon, std::uint64_t seed) {
    sde::EulerConfig cfg;
    cfg.x0 = Vec(dim);
    cfg.horizon = horizon;
    cfg.dt = dt;
    cfg.paths = paths;
    cfg.seed = seed;
    const auto ens = sde::simulate(cfg, fields::zero_field(dim));
    std::vector<double> sq;
    for (const Vec& x : ens.finals()) sq.push_back((x - cfg.x0).norm2());
    const auto msd = stats::batch_means(sq);
    Check a;
    a.name = "mean squared displacement";
    const double target = 2.0 * dim * horizon;
    const double za = std::abs(msd.value - target) / msd.stderr_;
    a.pass = za <= 3.0;
    a.summary = "E|X_T - x0|^2 = " + fmt(msd.value) + " vs " + fmt(target) + " (z = " + fmt(za) + ")";
    a.data = {{"estimate", sde::to_json(msd)}, {"target", target}, {"z", za}};

    Vec lo(dim), hi(dim);
    for (int k = 0; k < dim; ++k) {
        lo[k] = -0.5;
        hi[k] = 0.5;
    }
    const auto occ = sde::occupation_estimate(
        ens,
        [&](double, const Vec& x) {
            for (int k = 0; k < dim; ++k)
                if (x[k] < lo[k] || x[k] > hi[k]) return 0.0;
            return 1.0;
        },
        0.0, horizon);
    const double oracle = sde::gaussian_box_occupation(cfg.x0, lo, hi, 0.0, horizon);
    Check b;
    b.name = "box occupation";
    const double zb = std::abs(occ.value - oracle) / occ.stderr_;
    b.pass = zb <= 3.0;
    b.summary = "occupation " + fmt(occ.value) + " vs oracle " + fmt(oracle) + " (z = " + fmt(zb) + ")";
    b.data = {{"estimate", sde::to_json(occ)}, {"oracle", oracle}, {"z", zb}};
    Check all = combine("SDE baseline", {a, b});
    all.data["ensemble"] = sde::summary_json(ens);
    return all;
}

inline sde::PathEnsemble hardy_ensemble(std::size_t paths, double dt, std::uint64_t seed) {
    sde::EulerConfig cfg;
    cfg.x0 = Vec{0.2, 0.0, 0.0};
    cfg.horizon = 1.0;
    cfg.dt = dt;
    cfg.paths = paths;
    cfg.seed = seed;
    cfg.level = 10.0;
    return sde::simulate(cfg, fields::hardy(0.04, 3, 1.0));
}

inline Check krylov(const sde::PathEnsemble& ens, const fields::VectorField& b, const std::vector<double>& windows) {
    Check c;
    c.name = "Krylov fit";
    const auto fit = sde::krylov_fit(ens, b, ens.config().level, windows);
    c.pass = !fit.flagged && fit.gamma > 0.0 && fit.r2 >= 0.9 && fit.gamma_lo > 0.0;
    c.summary = "gamma = " + fmt(fit.gamma) + ", R^2 = " + fmt(fit.r2) + ", 95% CI [" + fmt(fit.gamma_lo) + ", " +
                fmt(fit.gamma_hi) + "]";
    c.data = sde::to_json(fit);
    c.data["ensemble"] = sde::summary_json(ens);
    return c;
}

inline Check martingale(const sde::PathEnsemble& ens, const std::vector<double>& checkpoints) {
    Check c;
    c.name = "martingale residuals";
    const auto rep = sde::martingale_residual(ens, sde::stock_test_functions(ens.config().x0), checkpoints);
    c.pass = rep.max_z <= 3.0;
    c.summary = "max |E M| / stderr = " + fmt(rep.max_z) + " (limit 3); conditional increments max z " +
                fmt(rep.max_increment_z);
    c.data = sde::to_json(rep);
    c.data["ensemble"] = sde::summary_json(ens);
    return c;
}

struct LawLevel {
    double dx, dt_pde, dt_sde;
};

/// Law of X_t against the propagator: b = 0 within 3 SE + lattice tolerance; for b, the gap
/// shrinks by `factor` from the coarse to the fine level (Brownian increments coupled across levels).
inline Check law_propagator(const fields::VectorField& b, double level, const Vec& x0, double t, double sigma,
                            std::size_t paths, std::uint64_t seed, const LawLevel& coarse, const LawLevel& fine,
                            double lambda = 1.0, double factor = 1.5) {
    const int d = x0.size();
    auto g = [sigma](const Vec& x) { return std::exp(-0.5 * x.norm2() / (sigma * sigma)); };
    const int refine = static_cast<int>(std::lround(coarse.dt_sde / fine.dt_sde));
    auto run = [&](const fields::VectorField& drift, const LawLevel& lv, int noise, double lattice_tol) {
        sde::EulerConfig cfg;
        cfg.x0 = x0;
        cfg.horizon = t;
        cfg.dt = lv.dt_sde;
        cfg.paths = paths;
        cfg.seed = seed;
        cfg.level = level;
        cfg.noise_refinement = noise;
        const auto ens = sde::simulate(cfg, drift);
        const LatticeGrid grid{d, 2.0, lv.dx, 0.0, t, lv.dt_pde};
        auto tb = sde::make_propagator_table(ens.drift(), g, grid, 2.0, lambda, t);
        tb.lattice_tolerance = lattice_tol;
        return std::make_pair(sde::law_vs_propagator(ens, g, {tb}, {t}).rows.front(), tb);
    };
    const fields::VectorField zero = fields::zero_field(d);
    // Lattice tolerance for b = 0 from the two-level refinement, first-order Richardson bound.
    auto [z_fine, tb_fine] = run(zero, fine, 1, 0.0);
    const double v_fine = sde::interpolate(tb_fine.v, t, x0);
    auto [z_coarse0, tb_coarse] = run(zero, coarse, refine, 0.0);
    const double lat_tol = 2.0 * std::abs(sde::interpolate(tb_coarse.v, t, x0) - v_fine);
    Check a;
    a.name = "b = 0 law";
    const double tol0 = 3.0 * z_coarse0.mc.stderr_ + lat_tol;
    a.pass = z_coarse0.gap <= tol0;
    a.summary = "b = 0 gap " + fmt(z_coarse0.gap) + " (tolerance " + fmt(tol0) + ")";
    a.data = {{"mc", z_coarse0.mc.value}, {"stderr", z_coarse0.mc.stderr_}, {"propagator", z_coarse0.propagator},
              {"gap", z_coarse0.gap}, {"lattice_tolerance", lat_tol}, {"tolerance", tol0}};

    auto [h_coarse, tbc] = run(b, coarse, refine, 0.0);
    auto [h_fine, tbf] = run(b, fine, 1, 0.0);
    Check c;
    c.name = "refinement";
    const double ratio = h_coarse.gap / h_fine.gap;
    c.pass = ratio >= factor;
    c.summary = "gap " + fmt(h_coarse.gap) + " -> " + fmt(h_fine.gap) + " (ratio " + fmt(ratio) + ", limit " + fmt(factor) + ")";
    c.data = {{"coarse", {{"mc", h_coarse.mc.value}, {"stderr", h_coarse.mc.stderr_}, {"propagator", h_coarse.propagator}, {"gap", h_coarse.gap}}},
              {"fine", {{"mc", h_fine.mc.value}, {"stderr", h_fine.mc.stderr_}, {"propagator", h_fine.propagator}, {"gap", h_fine.gap}}},
              {"ratio", ratio}};
    return combine("law vs propagator", {a, c});
}

}  // namespace driftlab::checks
