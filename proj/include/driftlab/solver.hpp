#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/fields.hpp"
#include "driftlab/lattice.hpp"
#include "driftlab/potentials.hpp"
#include "driftlab/quadrature.hpp"

namespace driftlab::solver {

using potentials::DriftCoefficients;
using potentials::DriftOperators;
using potentials::OperatorProbeReport;
using potentials::SpatialLattice;

/// Thrown when the probed norm of T_p is not below 1.
class GateRefusal : public Error {
public:
    explicit GateRefusal(OperatorProbeReport r)
        : Error(ErrorKind::gate_refused, "probed |T_p| = " + std::to_string(r.max_ratio) + " >= 1"), report(std::move(r)) {}
    OperatorProbeReport report;
};

struct SolveOptions {
    int max_terms = 60;
    double tol = 1e-10;
    int gate_probes = 64;
    std::uint64_t seed = 1;
    bool force = false;      // sum even when the gate fails
    bool skip_gate = false;  // caller vouches for the gate (sweeps reuse one probe)
};

struct SolveReport {
    ScalarLattice u;
    int terms = 0;                    // nonzero Neumann terms summed
    std::vector<double> term_norms;   // |(-T)^k w|_p, k = 0..terms-1
    std::vector<double> ratios;       // successive term ratios
    std::optional<OperatorProbeReport> gate;
    double source_norm = 0.0;
    double p = 2.0;
    double lambda = 0.0;
    bool converged = true;
};

inline nlohmann::json to_json(const SolveReport& r) {
    nlohmann::json j = {{"terms", r.terms},         {"term_norms", r.term_norms}, {"ratios", r.ratios},
                        {"source_norm", r.source_norm}, {"p", r.p},                {"lambda", r.lambda},
                        {"converged", r.converged}};
    if (r.gate) j["gate"] = potentials::to_json(*r.gate);
    return j;
}

namespace detail {

inline void run_gate(const DriftOperators& ops, const SolveOptions& opt, SolveReport& rep) {
    if (opt.skip_gate) return;
    const auto& g = ops.coefficients().grid;
    rep.gate = potentials::probe_operator_norm([&](const ScalarLattice& h) { return ops.T(h); }, "T_p", ops.p(),
                                               ops.lambda(), g, opt.gate_probes, opt.seed);
    if (rep.gate->max_ratio >= 1.0 && !opt.force) throw GateRefusal(*rep.gate);
}

// y = sum_k (-T)^k w, truncated at tol * scale; records per-term norms.
inline ScalarLattice neumann_sum(const DriftOperators& ops, const ScalarLattice& w, double scale,
                                 const SolveOptions& opt, SolveReport& rep) {
    const double p = ops.p();
    ScalarLattice y = w;
    ScalarLattice term = w;
    double prev = lattice_norm(term, p);
    rep.term_norms.push_back(prev);
    rep.terms = prev > 0.0 ? 1 : 0;
    if (prev <= opt.tol * scale) return y;
    int rising = 0;
    for (int k = 1; k < opt.max_terms; ++k) {
        term = ops.T(term);
        term *= -1.0;
        const double nk = lattice_norm(term, p);
        rep.term_norms.push_back(nk);
        const double ratio = prev > 0.0 ? nk / prev : 0.0;
        rep.ratios.push_back(ratio);
        y += term;
        ++rep.terms;
        if (nk <= opt.tol * scale) return y;
        rising = ratio >= 1.0 ? rising + 1 : 0;
        if (rising >= 3) fail(ErrorKind::divergence, "Neumann terms stopped decaying (3 ratios >= 1)");
        prev = nk;
    }
    rep.converged = false;
    return y;
}

}  // namespace detail

/// u = A^-1 f - A^(-1/2-1/(2p)) Q (1+T)^-1 R A^(-1/(2p')) f with A = lambda + d/dt - Laplacian.
inline SolveReport neumann_solve(std::shared_ptr<const DriftCoefficients> coef, const ScalarLattice& f, double lambda,
                                 const SolveOptions& opt = {}) {
    require_same_grid(coef->grid, f.grid, "neumann_solve");
    require(lambda > 0.0, ErrorKind::configuration, "neumann_solve needs lambda > 0");
    const double p = coef->p, pc = p / (p - 1.0);
    const auto& g = f.grid;
    SolveReport rep;
    rep.p = p;
    rep.lambda = lambda;
    rep.source_norm = lattice_norm(f, p);
    rep.u = potentials::potential_apply(*potentials::cached_plan(g, potentials::Direction::forward, 2.0, lambda), f);
    if (coef->zero || rep.source_norm == 0.0) {
        rep.term_norms.clear();
        return rep;
    }
    const DriftOperators ops(coef, lambda);
    detail::run_gate(ops, opt, rep);
    const ScalarLattice w =
        ops.R(potentials::potential_apply(*potentials::cached_plan(g, potentials::Direction::forward, 1.0 / pc, lambda), f));
    const ScalarLattice y = detail::neumann_sum(ops, w, rep.source_norm, opt, rep);
    const ScalarLattice corr = potentials::potential_apply(
        *potentials::cached_plan(g, potentials::Direction::forward, 1.0 + 1.0 / p, lambda), ops.Q(y));
    rep.u -= corr;
    return rep;
}

inline SolveReport neumann_solve(const fields::VectorField& b, const ScalarLattice& f, double p, double lambda,
                                 const SolveOptions& opt = {}) {
    return neumann_solve(std::make_shared<DriftCoefficients>(potentials::sample_coefficients(b, f.grid, p)), f, lambda, opt);
}

/// v = A^-1 delta_r g - A^(-1/2-1/(2p)) Q (1+T)^-1 G S g, returned on the whole grid (zero before r).
/// G S g is evaluated as b^(1/p) . grad A^-1 delta_r g, the composed kernel of the two factors.
inline SolveReport cauchy_propagate(std::shared_ptr<const DriftCoefficients> coef, const SpatialLattice& g, double r,
                                    double lambda, const SolveOptions& opt = {}) {
    require_same_grid(coef->grid, g.grid, "cauchy_propagate");
    require(lambda > 0.0, ErrorKind::configuration, "cauchy_propagate needs lambda > 0");
    const double p = coef->p;
    const auto& grid = g.grid;
    SolveReport rep;
    rep.p = p;
    rep.lambda = lambda;
    rep.u = potentials::delta_resolvent(g, r, lambda);
    rep.source_norm = potentials::spatial_norm(g, p);
    for (const auto& c : potentials::spatial_gradient(g)) rep.source_norm += potentials::spatial_norm(c, p);
    if (coef->zero || rep.source_norm == 0.0) return rep;
    const DriftOperators ops(coef, lambda);
    detail::run_gate(ops, opt, rep);
    const ScalarLattice w = lattice_dot(coef->b_frac, potentials::lattice_gradient(rep.u));
    const ScalarLattice y = detail::neumann_sum(ops, w, rep.source_norm, opt, rep);
    rep.u -= potentials::potential_apply(
        *potentials::cached_plan(grid, potentials::Direction::forward, 1.0 + 1.0 / p, lambda), ops.Q(y));
    const int ir = potentials::time_index(grid, r);
    for (int i = 0; i < ir; ++i) std::fill(rep.u.slice(i), rep.u.slice(i) + rep.u.slice_size(), 0.0);
    return rep;
}

inline SolveReport cauchy_propagate(const fields::VectorField& b, const SpatialLattice& g, double r, double p,
                                    double lambda, const SolveOptions& opt = {}) {
    return cauchy_propagate(std::make_shared<DriftCoefficients>(potentials::sample_coefficients(b, g.grid, p)), g, r,
                            lambda, opt);
}

/// Solution of (mu + d/dt - Laplacian + b.grad) v = 1_{t>=r} f, v(r) = g for any mu >= 0,
/// obtained from the lambda-shifted problem via v = e^((lambda-mu)(t-r)) w.
inline ScalarLattice shifted_solve(std::shared_ptr<const DriftCoefficients> coef, const ScalarLattice* f,
                                   const SpatialLattice* g, double r, double mu, double lambda, const SolveOptions& opt) {
    const auto& grid = coef->grid;
    const int ir = potentials::time_index(grid, r);
    const double shift = lambda - mu;
    ScalarLattice total(grid);
    if (f) {
        ScalarLattice fs = *f;
        for (int i = 0; i < grid.time_nodes(); ++i) {
            const double damp = i < ir ? 0.0 : std::exp(-shift * (i - ir) * grid.dt);
            for (std::size_t s = 0; s < fs.slice_size(); ++s) fs.at(i, s) *= damp;
        }
        total += neumann_solve(coef, fs, lambda, opt).u;
    }
    if (g) total += cauchy_propagate(coef, *g, r, lambda, opt).u;
    for (int i = 0; i < grid.time_nodes(); ++i) {
        const double grow = i < ir ? 0.0 : std::exp(shift * (i - ir) * grid.dt);
        for (std::size_t s = 0; s < total.slice_size(); ++s) total.at(i, s) *= grow;
    }
    return total;
}

// ---- finite-difference oracle ------------------------------------------------

namespace detail {

// Periodic 2d+1 point Laplacian.
inline void laplacian(const LatticeGrid& g, const double* u, double* out) {
    const std::size_t ns = g.spatial_size();
    const double inv = 1.0 / (g.dx * g.dx);
    for (std::size_t s = 0; s < ns; ++s) {
        const auto idx = g.unflatten(s);
        double acc = -2.0 * g.dim * u[s];
        for (int a = 0; a < g.dim; ++a) {
            auto j = idx;
            j[static_cast<std::size_t>(a)] += 1;
            acc += u[g.flatten(j)];
            j[static_cast<std::size_t>(a)] -= 2;
            acc += u[g.flatten(j)];
        }
        out[s] = acc * inv;
    }
}

// b . grad u with second-order upwind differences (periodic).
inline void upwind_drift(const LatticeGrid& g, const VectorLattice& b, int i, const double* u, double* out) {
    const std::size_t ns = g.spatial_size();
    const double inv = 1.0 / (2.0 * g.dx);
    for (std::size_t s = 0; s < ns; ++s) {
        const auto idx = g.unflatten(s);
        double acc = 0.0;
        for (int a = 0; a < g.dim; ++a) {
            const double ba = b.components[static_cast<std::size_t>(a)].at(i, s);
            if (ba == 0.0) continue;
            auto j1 = idx, j2 = idx;
            const int dir = ba > 0.0 ? -1 : 1;
            j1[static_cast<std::size_t>(a)] += dir;
            j2[static_cast<std::size_t>(a)] += 2 * dir;
            const double d = -dir * (3.0 * u[s] - 4.0 * u[g.flatten(j1)] + u[g.flatten(j2)]) * inv;
            acc += ba * d;
        }
        out[s] = acc;
    }
}

// b . grad u with central differences (periodic).
inline void central_drift(const LatticeGrid& g, const VectorLattice& b, int i, const double* u, double* out) {
    const std::size_t ns = g.spatial_size();
    const double inv = 1.0 / (2.0 * g.dx);
    for (std::size_t s = 0; s < ns; ++s) {
        const auto idx = g.unflatten(s);
        double acc = 0.0;
        for (int a = 0; a < g.dim; ++a) {
            auto jp = idx, jm = idx;
            jp[static_cast<std::size_t>(a)] += 1;
            jm[static_cast<std::size_t>(a)] -= 1;
            acc += b.components[static_cast<std::size_t>(a)].at(i, s) * (u[g.flatten(jp)] - u[g.flatten(jm)]) * inv;
        }
        out[s] = acc;
    }
}

// Conjugate gradients for (c I - Laplacian) x = rhs.
inline void cg_solve(const LatticeGrid& g, double c, const std::vector<double>& rhs, std::vector<double>& x, double tol) {
    const std::size_t n = rhs.size();
    std::vector<double> r(n), p(n), ap(n), lap(n);
    auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        laplacian(g, v.data(), lap.data());
        for (std::size_t k = 0; k < n; ++k) out[k] = c * v[k] - lap[k];
    };
    apply(x, ap);
    for (std::size_t k = 0; k < n; ++k) r[k] = rhs[k] - ap[k];
    p = r;
    double rr = 0.0, bb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        rr += r[k] * r[k];
        bb += rhs[k] * rhs[k];
    }
    if (bb == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        return;
    }
    for (int it = 0; it < 10000 && rr > tol * tol * bb; ++it) {
        apply(p, ap);
        double pap = 0.0;
        for (std::size_t k = 0; k < n; ++k) pap += p[k] * ap[k];
        const double alpha = rr / pap;
        double rr_new = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
            rr_new += r[k] * r[k];
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t k = 0; k < n; ++k) p[k] = r[k] + beta * p[k];
    }
    require(rr <= tol * tol * bb * 1.0001, ErrorKind::numerical, "conjugate gradients did not converge");
}

}  // namespace detail

/// Implicit-diffusion, explicit upwind-drift march of
/// (lambda + d/dt - Laplacian + b.grad) u = f from u(r) = g (zero when g is null).
inline ScalarLattice time_stepping_reference(const VectorLattice& b, const ScalarLattice* f, const SpatialLattice* g,
                                             double lambda, double r, double cfl_limit = 1.0) {
    const LatticeGrid& grid = b.grid;
    if (f) require_same_grid(grid, f->grid, "time_stepping_reference");
    double bmax = 0.0;
    for (const auto& c : b.components)
        for (double v : c.values) bmax = std::max(bmax, std::abs(v));
    require(std::isfinite(bmax), ErrorKind::domain, "time stepping needs a bounded drift");
    const double cfl = bmax * grid.dt / grid.dx;
    require(cfl <= cfl_limit, ErrorKind::numerical, "CFL violation: |b| dt / dx = " + std::to_string(cfl));
    const int ir = potentials::time_index(grid, r);
    const std::size_t ns = grid.spatial_size();
    ScalarLattice u(grid);
    if (g) std::copy(g->values.begin(), g->values.end(), u.slice(ir));
    std::vector<double> rhs(ns), drift(ns), x(ns);
    const double c = 1.0 / grid.dt + lambda;
    for (int i = ir; i + 1 < grid.time_nodes(); ++i) {
        const double* ui = u.slice(i);
        detail::upwind_drift(grid, b, i, ui, drift.data());
        for (std::size_t s = 0; s < ns; ++s) rhs[s] = ui[s] / grid.dt - drift[s] + (f ? f->at(i + 1, s) : 0.0);
        std::copy(ui, ui + ns, x.begin());
        detail::cg_solve(grid, c, rhs, x, 1e-13);
        std::copy(x.begin(), x.end(), u.slice(i + 1));
    }
    return u;
}

// ---- manufactured solutions ----------------------------------------------------

/// u*(t, x) = phi(t) exp(-|x - c|^2 / (2 s^2)) with phi(t) = (1 - cos(pi (t - t0) / span)) / 2,
/// so u* and du*/dt vanish at t0.
struct ManufacturedBump {
    double t0 = 0.0, span = 1.0;
    Vec center;
    double sigma = 0.35;

    double phi(double t) const { return 0.5 * (1.0 - std::cos(std::numbers::pi * (t - t0) / span)); }
    double dphi(double t) const { return 0.5 * std::numbers::pi / span * std::sin(std::numbers::pi * (t - t0) / span); }
    double gauss(const Vec& x) const { return std::exp(-0.5 * (x - center).norm2() / (sigma * sigma)); }
    double operator()(double t, const Vec& x) const { return phi(t) * gauss(x); }
    Vec gradient(double t, const Vec& x) const { return (-phi(t) * gauss(x) / (sigma * sigma)) * (x - center); }
    double laplacian(double t, const Vec& x) const {
        const double s2 = sigma * sigma;
        return phi(t) * gauss(x) * ((x - center).norm2() / (s2 * s2) - center.size() / s2);
    }
    /// (lambda + d/dt - Laplacian + b.grad) u* at (t, x).
    double source(const fields::VectorField& b, double lambda, double t, const Vec& x) const {
        return lambda * (*this)(t, x) + dphi(t) * gauss(x) - laplacian(t, x) + dot(b(t, x), gradient(t, x));
    }
};

inline ManufacturedBump manufactured_for(const LatticeGrid& g, double sigma = 0.35) {
    return {g.t0, g.t1 - g.t0, Vec(g.dim), sigma};
}

inline ScalarLattice sample_exact(const ManufacturedBump& m, const LatticeGrid& g) {
    ScalarLattice out(g);
    for (int i = 0; i < g.time_nodes(); ++i)
        for (std::size_t s = 0; s < g.spatial_size(); ++s) out.at(i, s) = m(g.time(i), g.point(s));
    return out;
}

inline ScalarLattice sample_source(const ManufacturedBump& m, const fields::VectorField& b, double lambda,
                                   const LatticeGrid& g) {
    ScalarLattice out(g);
    for (int i = 0; i < g.time_nodes(); ++i)
        for (std::size_t s = 0; s < g.spatial_size(); ++s) out.at(i, s) = m.source(b, lambda, g.time(i), g.point(s));
    return out;
}

// ---- residuals ---------------------------------------------------------------

struct ResidualSummary {
    double p_norm = 0.0;
    double sup = 0.0;
    double p = 2.0;
};

inline nlohmann::json to_json(const ResidualSummary& r) { return {{"p", r.p}, {"p_norm", r.p_norm}, {"sup", r.sup}}; }

/// lambda u + du/dt - Laplacian u + b.grad u - f on time-interior nodes (centered differences).
inline ResidualSummary pde_residual(const ScalarLattice& u, const VectorLattice& b, const ScalarLattice& f, double lambda,
                                    double p = 2.0) {
    const LatticeGrid& g = u.grid;
    require_same_grid(g, b.grid, "pde_residual");
    require_same_grid(g, f.grid, "pde_residual");
    const std::size_t ns = g.spatial_size();
    std::vector<double> lap(ns), drift(ns);
    std::vector<double> terms;
    ResidualSummary rs;
    rs.p = p;
    for (int i = 1; i + 1 < g.time_nodes(); ++i) {
        detail::laplacian(g, u.slice(i), lap.data());
        detail::central_drift(g, b, i, u.slice(i), drift.data());
        for (std::size_t s = 0; s < ns; ++s) {
            const double dt = (u.at(i + 1, s) - u.at(i - 1, s)) / (2.0 * g.dt);
            const double res = lambda * u.at(i, s) + dt - lap[s] + drift[s] - f.at(i, s);
            rs.sup = std::max(rs.sup, std::abs(res));
            terms.push_back(std::pow(std::abs(res), p));
        }
    }
    rs.p_norm = std::pow(pairwise_sum(terms) * g.cell_volume(), 1.0 / p);
    return rs;
}

/// Smooth compactly supported bump exp(-1/(1-s^2)) in time and space.
struct TestBump {
    double tc, st;
    Vec xc;
    double sx;

    double operator()(double t, const Vec& x) const {
        auto psi = [](double s) { return std::abs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0; };
        return psi((t - tc) / st) * psi((x - xc).norm() / sx);
    }
};

/// Stock test functions inside the grid window.
inline std::vector<TestBump> stock_bumps(const LatticeGrid& g) {
    const double T = g.t1 - g.t0;
    const double L = g.half_width;
    const int d = g.dim;
    auto off = [d](double a) {
        Vec v(d);
        v[0] = a;
        return v;
    };
    return {{g.t0 + 0.5 * T, 0.4 * T, Vec(d), 0.6 * L},
            {g.t0 + 0.4 * T, 0.3 * T, off(0.3 * L), 0.4 * L},
            {g.t0 + 0.6 * T, 0.3 * T, off(-0.2 * L), 0.5 * L},
            {g.t0 + 0.5 * T, 0.45 * T, off(0.1 * L), 0.3 * L}};
}

inline ScalarLattice sample(const LatticeGrid& g, const std::function<double(double, const Vec&)>& fn) {
    ScalarLattice out(g);
    for (int i = 0; i < g.time_nodes(); ++i)
        for (std::size_t s = 0; s < g.spatial_size(); ++s) out.at(i, s) = fn(g.time(i), g.point(s));
    return out;
}

struct WeakResidual {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
};

/// Both sides of the p = 2 weak formulation for each test bump:
/// <A^(3/4) u, A^(3/4) eta> + <R_2 A^(3/4) u, Q_2* A^(3/4) eta> vs <f, A*^(-1/4) A^(3/4) eta>.
inline std::vector<WeakResidual> weak_form_residual(std::shared_ptr<const DriftCoefficients> coef, const ScalarLattice& u,
                                                    const ScalarLattice& f, double lambda,
                                                    const std::vector<TestBump>& etas) {
    require(coef->p == 2.0, ErrorKind::configuration, "weak form residual is defined for p = 2");
    const auto& g = u.grid;
    using potentials::Direction;
    const auto p32 = potentials::cached_plan(g, Direction::forward, 1.5, lambda);
    const auto q_bwd = potentials::cached_plan(g, Direction::backward, 0.5, lambda);
    const DriftOperators ops(coef, lambda);
    const ScalarLattice au = potentials::potential_solve(*p32, u);
    const ScalarLattice rau = ops.R(au);
    std::vector<WeakResidual> out;
    for (const auto& eta : etas) {
        const ScalarLattice e = sample(g, eta);
        const ScalarLattice ae = potentials::potential_solve(*p32, e);
        WeakResidual w;
        w.lhs = lattice_inner(au, ae);
        if (!coef->zero) {
            ScalarLattice qs = potentials::potential_apply(*q_bwd, ae);
            for (std::size_t k = 0; k < qs.values.size(); ++k) qs.values[k] *= coef->b_abs_conj.values[k];
            w.lhs += lattice_inner(rau, qs);
        }
        w.rhs = lattice_inner(f, potentials::potential_apply(*q_bwd, ae));
        w.residual = std::abs(w.lhs - w.rhs);
        out.push_back(w);
    }
    return out;
}

// ---- approximation in n ---------------------------------------------------------

struct ConvergenceRow {
    double n_from = 0.0, n_to = 0.0;
    double p_gap = 0.0;
    double sup_gap = 0.0;
    double gate = 0.0;
};

inline nlohmann::json to_json(const ConvergenceRow& r) {
    return {{"n_from", r.n_from}, {"n_to", r.n_to}, {"p_gap", r.p_gap}, {"sup_gap", r.sup_gap}, {"gate", r.gate}};
}

/// Solves with regularize(b, n_i) at each level (source f or initial data g at r) and
/// reports the gaps between consecutive levels.
inline std::vector<ConvergenceRow> approximation_convergence(const fields::VectorField& b, const ScalarLattice* f,
                                                             const SpatialLattice* g, double r, double p, double lambda,
                                                             const std::vector<double>& levels,
                                                             const SolveOptions& opt = {}) {
    require(levels.size() >= 2, ErrorKind::configuration, "need at least two levels");
    for (std::size_t k = 1; k < levels.size(); ++k)
        require(levels[k] > levels[k - 1], ErrorKind::configuration, "levels must increase");
    require((f != nullptr) != (g != nullptr), ErrorKind::configuration, "give exactly one of f or g");
    const LatticeGrid& grid = f ? f->grid : g->grid;
    std::vector<ScalarLattice> sols;
    std::vector<double> gates;
    for (double n : levels) {
        auto coef = std::make_shared<DriftCoefficients>(potentials::sample_coefficients(fields::regularize(b, n), grid, p));
        SolveReport rep = f ? neumann_solve(coef, *f, lambda, opt) : cauchy_propagate(coef, *g, r, lambda, opt);
        gates.push_back(rep.gate ? rep.gate->max_ratio : 0.0);
        sols.push_back(std::move(rep.u));
    }
    std::vector<ConvergenceRow> rows;
    for (std::size_t k = 0; k + 1 < sols.size(); ++k) {
        ScalarLattice d = sols[k + 1];
        d -= sols[k];
        rows.push_back({levels[k], levels[k + 1], lattice_norm(d, p), lattice_norm(d, INFINITY), gates[k + 1]});
    }
    return rows;
}

// ---- weights ------------------------------------------------------------------------

/// rho(x) = (1 + l |x - y|^2)^(-nu).
struct WeightSpec {
    double l = 0.1;
    double nu = 2.0;
    Vec center;

    double c1() const { return nu; }
    double c2() const { return 2.0 * nu * (2.0 * nu + center.size() + 2.0); }
    double operator()(const Vec& x) const { return std::pow(1.0 + l * (x - center).norm2(), -nu); }
    Vec gradient(const Vec& x) const {
        const Vec z = x - center;
        return (-2.0 * nu * l * std::pow(1.0 + l * z.norm2(), -nu - 1.0)) * z;
    }
    double laplacian(const Vec& x) const {
        const double s = l * (x - center).norm2();
        const int d = center.size();
        return -2.0 * nu * l * d * std::pow(1.0 + s, -nu - 1.0) + 4.0 * nu * (nu + 1.0) * l * s * std::pow(1.0 + s, -nu - 2.0);
    }
    /// int rho^p dx over R^d.
    double lp_power(double p) const {
        const int d = center.size();
        return std::pow(std::numbers::pi, 0.5 * d) * std::pow(l, -0.5 * d) * std::tgamma(nu * p - 0.5 * d) / std::tgamma(nu * p);
    }
};

struct WeightInequalityReport {
    double max_grad_ratio = 0.0;  // max |grad rho| / (sqrt(l) rho)
    double max_lap_ratio = 0.0;   // max |Laplacian rho| / (l rho)
    double c1 = 0.0, c2 = 0.0;
    bool pass = false;
};

inline WeightInequalityReport weight_inequalities(const WeightSpec& w, const LatticeGrid& g) {
    WeightInequalityReport r;
    r.c1 = w.c1();
    r.c2 = w.c2();
    const int d = w.center.size();
    for (std::size_t s = 0; s < g.spatial_size(); ++s) {
        // Ratios in closed form with a = sqrt(l) |x - y|, so rho cancels.
        const double a = std::sqrt(w.l) * (g.point(s) - w.center).norm();
        const double q = 1.0 + a * a;
        r.max_grad_ratio = std::max(r.max_grad_ratio, 2.0 * w.nu * a / q);
        r.max_lap_ratio = std::max(r.max_lap_ratio, std::abs(-2.0 * w.nu * d / q + 4.0 * w.nu * (w.nu + 1.0) * a * a / (q * q)));
    }
    const double ulps = 1.0 + 8.0 * std::numeric_limits<double>::epsilon();
    r.pass = r.max_grad_ratio <= r.c1 * ulps && r.max_lap_ratio <= r.c2 * ulps;
    return r;
}

/// |g|_p + |grad g|_p with central differences inside and one-sided differences at the box edge.
inline double sobolev_proxy(const SpatialLattice& g, double p) {
    const LatticeGrid& gr = g.grid;
    const int n = gr.nodes_per_axis();
    double total = potentials::spatial_norm(g, p);
    for (int a = 0; a < gr.dim; ++a) {
        SpatialLattice d(gr);
        for (std::size_t s = 0; s < gr.spatial_size(); ++s) {
            auto idx = gr.unflatten(s);
            const int j = idx[static_cast<std::size_t>(a)];
            auto at = [&](int jj) {
                auto k = idx;
                k[static_cast<std::size_t>(a)] = jj;
                return g.values[gr.flatten(k)];
            };
            if (j == 0) d.values[s] = (at(1) - at(0)) / gr.dx;
            else if (j == n - 1) d.values[s] = (at(n - 1) - at(n - 2)) / gr.dx;
            else d.values[s] = (at(j + 1) - at(j - 1)) / (2.0 * gr.dx);
        }
        total += potentials::spatial_norm(d, p);
    }
    return total;
}

struct WeightedSupResult {
    double t = 0.0;
    double lhs = 0.0;
    double rhs = 0.0;
    double source_term = 0.0;   // |rho 1_[r,t] |f_n|^(1/p)|_p
    double initial_term = 0.0;  // |rho g|_{W^{1,p}}
    bool pass = false;
};

inline nlohmann::json to_json(const WeightedSupResult& r) {
    return {{"t", r.t}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"source_term", r.source_term},
            {"initial_term", r.initial_term}, {"pass", r.pass}};
}

struct WeightedSupCalibration {
    double c1 = 0.0;
    double c2 = 0.0;
};

namespace detail {

// sup over [r, t] x box of |rho v| and the two right-hand side terms, for a solved v.
inline WeightedSupResult weighted_terms(const ScalarLattice& v, const ScalarLattice& f_abs, const SpatialLattice* g,
                                        const WeightSpec& w, double r, double t, double p) {
    const LatticeGrid& grid = v.grid;
    const int ir = potentials::time_index(grid, r), it = potentials::time_index(grid, t);
    std::vector<double> rho(grid.spatial_size());
    for (std::size_t s = 0; s < rho.size(); ++s) rho[s] = w(grid.point(s));
    WeightedSupResult res;
    res.t = t;
    std::vector<double> terms;
    for (int i = ir; i <= it; ++i)
        for (std::size_t s = 0; s < rho.size(); ++s) {
            res.lhs = std::max(res.lhs, std::abs(rho[s] * v.at(i, s)));
            terms.push_back(std::pow(rho[s], p) * std::abs(f_abs.at(i, s)));
        }
    res.source_term = std::pow(pairwise_sum(terms) * grid.cell_volume(), 1.0 / p);
    if (g) {
        SpatialLattice rg(grid);
        for (std::size_t s = 0; s < rho.size(); ++s) rg.values[s] = rho[s] * g->values[s];
        res.initial_term = sobolev_proxy(rg, p);
    }
    return res;
}

}  // namespace detail

/// Checks sup |rho v_n| <= C1 |rho 1_[r,t] |f_n|^(1/p)|_p + C2 |rho g|_{W^{1,p}} for each t,
/// where v_n solves (d/dt - Laplacian + b_n.grad) v = 1_[r,T] |f_n|, v(r) = g.
/// Missing calibration constants are fitted on b = 0 and then frozen.
inline std::vector<WeightedSupResult> weighted_sup_check(const LatticeGrid& grid, const fields::VectorField& b_n,
                                                         const fields::VectorField& f_n, const SpatialLattice* g,
                                                         const WeightSpec& w, double r, const std::vector<double>& ts,
                                                         double p, double solve_lambda, WeightedSupCalibration& cal,
                                                         const SolveOptions& opt = {}) {
    // |f_n| sampled as a scalar source, and |f_n|^(1/p) enters the norm through its p-th power.
    auto fabs = fields::sample_cell_averages(f_n, grid, 1, [](const Vec& v, double* o) { o[0] = v.norm(); }).front();
    const bool has_source = lattice_norm(fabs, INFINITY) > 0.0;
    const bool has_initial = g && potentials::spatial_norm(*g, INFINITY) > 0.0;
    auto solve = [&](const fields::VectorField& drift) {
        auto coef = std::make_shared<DriftCoefficients>(potentials::sample_coefficients(drift, grid, p));
        return shifted_solve(coef, has_source ? &fabs : nullptr, has_initial ? g : nullptr, r, 0.0, solve_lambda, opt);
    };
    if (cal.c1 == 0.0 && cal.c2 == 0.0 && (has_source || has_initial)) {
        const ScalarLattice v0 = solve(fields::zero_field(grid.dim));
        for (double t : ts) {
            const auto base = detail::weighted_terms(v0, fabs, g, w, r, t, p);
            // Calibrate on the source term when present, otherwise on the initial term.
            if (has_source && base.source_term > 0.0) cal.c1 = std::max(cal.c1, base.lhs / base.source_term);
            else if (has_initial && base.initial_term > 0.0) cal.c2 = std::max(cal.c2, base.lhs / base.initial_term);
        }
    }
    std::vector<WeightedSupResult> out;
    const ScalarLattice v = (has_source || has_initial) ? solve(b_n) : ScalarLattice(grid);
    for (double t : ts) {
        auto res = detail::weighted_terms(v, fabs, g, w, r, t, p);
        res.rhs = cal.c1 * res.source_term + cal.c2 * res.initial_term;
        res.pass = res.lhs <= res.rhs;
        out.push_back(res);
    }
    return out;
}

// ---- weighted source norm in (T - r) ------------------------------------------------

struct RhoFinReport {
    std::vector<double> spans;    // T - r
    std::vector<double> norms;    // |rho 1_[r,T] |f|^(1/p)|_p
    double slope = 0.0;           // d log norm / d log (T - r)
    double p_slope = 0.0;         // p * slope
    double target = 0.0;          // 1/q'
    double relative_gap = 0.0;    // |p_slope - target| / target
    double nu_threshold = 0.0;    // d/(2p) + 1/(pq')
    double decay_exponent = 0.0;  // -2 nu p + d/q' + (d+2)/q - 1
};

inline nlohmann::json to_json(const RhoFinReport& r) {
    return {{"spans", r.spans},          {"norms", r.norms},     {"slope", r.slope},
            {"p_slope", r.p_slope},      {"target", r.target},   {"relative_gap", r.relative_gap},
            {"nu_threshold", r.nu_threshold}, {"decay_exponent", r.decay_exponent}};
}

namespace detail {

// int rho(x)^p |f(t, x)| dx by spherical quadrature about the weight center.
inline double weighted_spatial_integral(const fields::VectorField& f, const fields::Structure& st, const WeightSpec& w,
                                        double p, double t, int m) {
    const int d = f.dim();
    require(d == 3, ErrorKind::configuration, "weighted integrals are implemented for d = 3");
    const quad::Rule& rule = quad::gauss_legendre(m);
    std::vector<double> breaks;
    if (st.center && (*st.center - w.center).norm() == 0.0) breaks = st.breaks;
    double total = 0.0;
    const int nphi = 2 * m;
    for (std::size_t i = 0; i < rule.x.size(); ++i) {
        const double ct = rule.x[i], sn = std::sqrt(1.0 - ct * ct);
        for (int k = 0; k < nphi; ++k) {
            const double ph = 2.0 * std::numbers::pi * (k + 0.5) / nphi;
            const Vec dir{sn * std::cos(ph), sn * std::sin(ph), ct};
            const double dw = rule.w[i] * 2.0 * std::numbers::pi / nphi;
            // radial segments [0, b1], [b1, b2], ..., then [b_last, inf) mapped by s = b + u/(1-u)
            std::vector<double> cuts{0.0};
            for (double b : breaks) cuts.push_back(b);
            double acc = 0.0;
            for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg)
                acc += quad::integrate_graded(
                    [&](double s) {
                        const Vec x = w.center + s * dir;
                        return s * s * std::pow(w(x), p) * f(t, x).norm();
                    },
                    cuts[seg], cuts[seg + 1], m);
            const double b0 = cuts.back();
            acc += quad::integrate(
                [&](double u) {
                    const double s = b0 + u / (1.0 - u);
                    const double ds = 1.0 / ((1.0 - u) * (1.0 - u));
                    const Vec x = w.center + s * dir;
                    return s * s * std::pow(w(x), p) * f(t, x).norm() * ds;
                },
                0.0, 1.0, 2 * m);
            total += dw * acc;
        }
    }
    return total;
}

}  // namespace detail

/// Fits the growth of |rho 1_[r,T] |f|^(1/p)|_p in T - r and compares p * slope with 1/q'.
inline RhoFinReport rho_fin_check(const fields::VectorField& f, double q, double p, const WeightSpec& w, double r,
                                  const std::vector<double>& T_values, int nodes = 24) {
    const int d = f.dim();
    require(q > 1.0 && p > 1.0, ErrorKind::configuration, "need q > 1 and p > 1");
    const double qc = q / (q - 1.0);
    RhoFinReport rep;
    rep.target = 1.0 / qc;
    rep.nu_threshold = d / (2.0 * p) + 1.0 / (p * qc);
    rep.decay_exponent = -2.0 * w.nu * p + d / qc + (d + 2.0) / q - 1.0;
    if (!(w.nu > rep.nu_threshold) || !(rep.decay_exponent < -1.0))
        fail(ErrorKind::configuration, "weight exponent nu = " + std::to_string(w.nu) + " violates nu > " +
                                           std::to_string(rep.nu_threshold) + " or decay exponent " +
                                           std::to_string(rep.decay_exponent) + " < -1");
    require(T_values.size() >= 2, ErrorKind::configuration, "degenerate T sweep");
    const fields::Structure st = fields::analyze(f);
    for (double T : T_values) {
        require(T > r, ErrorKind::configuration, "degenerate T sweep: T must exceed r");
        double integral = 0.0;
        if (st.time_independent) {
            integral = (T - r) * detail::weighted_spatial_integral(f, st, w, p, r, nodes);
        } else {
            std::vector<double> cuts{r};
            for (double s : st.singular_times)
                if (s > r && s < T) cuts.push_back(s);
            cuts.push_back(T);
            for (std::size_t k = 0; k + 1 < cuts.size(); ++k)
                integral += quad::integrate_graded(
                    [&](double t) { return detail::weighted_spatial_integral(f, st, w, p, t, nodes); }, cuts[k],
                    cuts[k + 1], nodes);
        }
        rep.spans.push_back(T - r);
        rep.norms.push_back(std::pow(integral, 1.0 / p));
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(rep.spans.size());
    for (std::size_t k = 0; k < rep.spans.size(); ++k) {
        const double x = std::log(rep.spans[k]), y = std::log(rep.norms[k]);
        require(std::isfinite(y), ErrorKind::numerical, "nonpositive weighted norm in rho_fin sweep");
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double den = n * sxx - sx * sx;
    require(den > 0.0, ErrorKind::configuration, "degenerate T sweep");
    rep.slope = (n * sxy - sx * sy) / den;
    rep.p_slope = p * rep.slope;
    rep.relative_gap = std::abs(rep.p_slope - rep.target) / rep.target;
    return rep;
}

}  // namespace driftlab::solver
