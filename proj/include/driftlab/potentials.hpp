#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/fields.hpp"
#include "driftlab/lattice.hpp"
#include "driftlab/quadrature.hpp"
#include "driftlab/random.hpp"
#include "driftlab/spectral.hpp"

namespace driftlab::potentials {

/// forward: (lambda + d/dt - Laplacian)^(-alpha/2), reads the past.
/// backward: (lambda - d/dt - Laplacian)^(-alpha/2), reads the future.
enum class Direction { forward, backward };

/// How the input is continued outside [T0, T1] in time.
/// zero: vanishes outside the window. stationary: frozen at the boundary slice.
enum class TimeExtension { zero, stationary };

inline const char* to_string(Direction d) { return d == Direction::forward ? "forward" : "backward"; }

/// Values on one time slice of a grid.
struct SpatialLattice {
    LatticeGrid grid;
    std::vector<double> values;

    SpatialLattice() = default;
    explicit SpatialLattice(const LatticeGrid& g, double fill = 0.0) : grid(g), values(g.spatial_size(), fill) {}
};

inline SpatialLattice slice_of(const ScalarLattice& h, int i) {
    SpatialLattice s(h.grid);
    std::copy(h.slice(i), h.slice(i) + h.slice_size(), s.values.begin());
    return s;
}

/// Coefficients sharing the same multiset of axis frequencies have the same
/// Laplacian eigenvalue; kernel weights are tabulated once per group.
struct ModeGroups {
    std::vector<int> group_of;
    std::vector<double> mu;
};

inline std::shared_ptr<const ModeGroups> mode_groups(const LatticeGrid& grid) {
    static std::mutex mtx;
    static std::map<std::string, std::shared_ptr<const ModeGroups>> cache;
    const std::string key = grid.fingerprint();
    std::lock_guard<std::mutex> lock(mtx);
    auto& slot = cache[key];
    if (slot) return slot;
    spectral::TorusTransform tr(grid);
    auto groups = std::make_shared<ModeGroups>();
    groups->group_of.resize(tr.size());
    std::map<std::vector<int>, int> ids;
    for (std::size_t c = 0; c < tr.size(); ++c) {
        const auto idx = tr.index(c);
        std::vector<int> f;
        for (int a = 0; a < grid.dim; ++a) f.push_back(tr.basis().freq[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])]);
        std::sort(f.begin(), f.end());
        auto it = ids.find(f);
        if (it == ids.end()) {
            double mu = 0.0;
            for (int k : f) {
                const double s = std::sin(std::numbers::pi * k / tr.n());
                mu += 4.0 / (grid.dx * grid.dx) * s * s;
            }
            it = ids.emplace(f, static_cast<int>(groups->mu.size())).first;
            groups->mu.push_back(mu);
        }
        groups->group_of[c] = it->second;
    }
    slot = groups;
    return slot;
}

/// Quadrature plan for one fractional potential on a grid.
///
/// Inputs are interpolated piecewise-linearly in time; each lag weight is the
/// exact integral of tau^(alpha/2-1) e^(-(lambda+mu) tau)/Gamma(alpha/2) against
/// the hat function of that lag, for every Laplacian eigenvalue mu.
struct KernelPlan {
    LatticeGrid grid;
    Direction direction = Direction::forward;
    double alpha = 2.0;
    double lambda = 1.0;
    int k_max = 0;
    std::shared_ptr<const ModeGroups> groups;
    std::vector<double> weights;  // [m * groups + g], m < time nodes
    std::vector<double> tails;    // [j * groups + g], sum of weights for lags j+1..k_max
    std::vector<double> lag_mass; // weights at mu = 0 for m = 0..k_max

    std::size_t group_count() const { return groups->mu.size(); }
    double weight(int m, int g) const { return weights[static_cast<std::size_t>(m) * group_count() + static_cast<std::size_t>(g)]; }
    double tail(int j, int g) const { return tails[static_cast<std::size_t>(j) * group_count() + static_cast<std::size_t>(g)]; }
    double total_mass() const { return pairwise_sum(lag_mass); }

    std::string fingerprint() const {
        char buf[160];
        std::snprintf(buf, sizeof buf, "|%s|a=%.17g|l=%.17g|K=%d", to_string(direction), alpha, lambda, k_max);
        return grid.fingerprint() + buf;
    }
};

namespace detail {

// Unnormalized hat-weight integrals of tau^(a-1) e^(-rate tau).
struct HatWeights {
    double a, rate, dt;

    double J(double s, double A, double B) const { return quad::power_exp_integral(s, rate, A, B); }
    double right(int m) const {
        const double A = m * dt, B = (m + 1) * dt;
        return (m + 1) * J(a, A, B) - J(a + 1.0, A, B) / dt;
    }
    double left(int m) const {
        const double A = (m - 1) * dt, B = m * dt;
        return J(a + 1.0, A, B) / dt - (m - 1) * J(a, A, B);
    }
    double hat(int m, int k_max) const {
        double w = right(m) * (m < k_max);
        if (m > 0) w += left(m);
        return std::max(0.0, w);
    }
    // Sum of hats j+1..k_max.
    double tail(int j, int k_max) const {
        if (j >= k_max) return 0.0;
        const double A = j * dt, B = (j + 1) * dt;
        const double ramp = J(a + 1.0, A, B) / dt - j * J(a, A, B);
        return std::max(0.0, ramp + J(a, B, k_max * dt));
    }
};

inline int default_k_max(const LatticeGrid& grid, double alpha, double lambda) {
    const int nt = grid.time_nodes();
    if (lambda == 0.0) return nt;
    const double x = boost::math::gamma_q_inv(0.5 * alpha, 1e-13);
    const double k = std::ceil(x / (lambda * grid.dt)) + 1.0;
    return std::max(nt, static_cast<int>(std::min(k, 1e7)));
}

}  // namespace detail

inline KernelPlan build_kernel_plan(const LatticeGrid& grid, Direction direction, double alpha, double lambda,
                                    int k_max = 0) {
    grid.validate();
    require(alpha > 0.0 && alpha <= 2.0, ErrorKind::configuration, "alpha must lie in (0, 2]");
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::configuration, "lambda must be finite and >= 0");
    KernelPlan plan;
    plan.grid = grid;
    plan.direction = direction;
    plan.alpha = alpha;
    plan.lambda = lambda;
    plan.k_max = k_max > 0 ? k_max : detail::default_k_max(grid, alpha, lambda);
    require(plan.k_max >= grid.time_nodes(), ErrorKind::configuration, "K_max must cover the time window");
    plan.groups = mode_groups(grid);
    const int nt = grid.time_nodes();
    const std::size_t ng = plan.group_count();
    const double a = 0.5 * alpha;
    const double inv_gamma = 1.0 / std::tgamma(a);
    plan.weights.assign(static_cast<std::size_t>(nt) * ng, 0.0);
    plan.tails.assign(static_cast<std::size_t>(nt) * ng, 0.0);
    for (std::size_t g = 0; g < ng; ++g) {
        const detail::HatWeights hw{a, lambda + plan.groups->mu[g], grid.dt};
        for (int m = 0; m < nt; ++m) plan.weights[static_cast<std::size_t>(m) * ng + g] = inv_gamma * hw.hat(m, plan.k_max);
        if (lambda > 0.0)
            for (int j = 0; j < nt; ++j) plan.tails[static_cast<std::size_t>(j) * ng + g] = inv_gamma * hw.tail(j, plan.k_max);
    }
    const detail::HatWeights h0{a, lambda, grid.dt};
    plan.lag_mass.resize(static_cast<std::size_t>(plan.k_max) + 1);
    for (int m = 0; m <= plan.k_max; ++m) plan.lag_mass[static_cast<std::size_t>(m)] = inv_gamma * h0.hat(m, plan.k_max);
    return plan;
}

/// Shared immutable plans keyed by (grid, direction, alpha, lambda).
inline std::shared_ptr<const KernelPlan> cached_plan(const LatticeGrid& grid, Direction direction, double alpha,
                                                     double lambda) {
    static std::mutex mtx;
    static std::map<std::string, std::shared_ptr<const KernelPlan>> cache;
    char buf[160];
    std::snprintf(buf, sizeof buf, "|%s|a=%.17g|l=%.17g", to_string(direction), alpha, lambda);
    const std::string key = grid.fingerprint() + buf;
    {
        std::lock_guard<std::mutex> lock(mtx);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto plan = std::make_shared<const KernelPlan>(build_kernel_plan(grid, direction, alpha, lambda));
    std::lock_guard<std::mutex> lock(mtx);
    if (cache.size() > 64) cache.clear();
    return cache.emplace(key, plan).first->second;
}

namespace detail {

inline std::vector<double> to_modes(const ScalarLattice& h) {
    spectral::TorusTransform tr(h.grid);
    std::vector<double> m = h.values;
    const int nt = h.grid.time_nodes();
    parallel_for(static_cast<std::size_t>(nt), [&](std::size_t i) { tr.to_modes(m.data() + i * tr.size()); });
    return m;
}

inline ScalarLattice to_nodes(const LatticeGrid& grid, std::vector<double> modes) {
    spectral::TorusTransform tr(grid);
    const int nt = grid.time_nodes();
    parallel_for(static_cast<std::size_t>(nt), [&](std::size_t i) { tr.to_nodes(modes.data() + i * tr.size()); });
    ScalarLattice out(grid);
    out.values = std::move(modes);
    return out;
}

// Causal Toeplitz convolution per mode; `in` and the result are mode arrays.
inline std::vector<double> convolve(const KernelPlan& plan, const std::vector<double>& in, TimeExtension ext) {
    const int nt = plan.grid.time_nodes();
    const std::size_t ns = plan.grid.spatial_size();
    const std::size_t ng = plan.group_count();
    const int* grp = plan.groups->group_of.data();
    if (ext == TimeExtension::stationary)
        require(plan.lambda > 0.0, ErrorKind::configuration, "stationary extension needs lambda > 0");
    std::vector<double> out(in.size(), 0.0);
    const bool fwd = plan.direction == Direction::forward;
    parallel_for(static_cast<std::size_t>(nt), [&](std::size_t iu) {
        const int i = static_cast<int>(iu);
        double* o = out.data() + iu * ns;
        const int avail = fwd ? i : nt - 1 - i;  // lags that stay inside the window
        for (int m = 0; m <= avail; ++m) {
            const int src = fwd ? i - m : i + m;
            const double* h = in.data() + static_cast<std::size_t>(src) * ns;
            const double* w = plan.weights.data() + static_cast<std::size_t>(m) * ng;
            for (std::size_t c = 0; c < ns; ++c) o[c] += w[grp[c]] * h[c];
        }
        if (ext == TimeExtension::stationary) {
            const int edge = fwd ? 0 : nt - 1;
            const double* h = in.data() + static_cast<std::size_t>(edge) * ns;
            const double* w = plan.tails.data() + static_cast<std::size_t>(avail) * ng;
            for (std::size_t c = 0; c < ns; ++c) o[c] += w[grp[c]] * h[c];
        }
    });
    return out;
}

}  // namespace detail

/// Discrete one-sided space-time convolution with the plan's kernel.
inline ScalarLattice potential_apply(const KernelPlan& plan, const ScalarLattice& h,
                                     TimeExtension ext = TimeExtension::zero) {
    require_same_grid(plan.grid, h.grid, "potential_apply");
    return detail::to_nodes(h.grid, detail::convolve(plan, detail::to_modes(h), ext));
}

/// Gradient of the potential, differentiated in the mode basis.
inline VectorLattice gradient_potential_apply(const KernelPlan& plan, const ScalarLattice& h,
                                              TimeExtension ext = TimeExtension::zero) {
    require_same_grid(plan.grid, h.grid, "gradient_potential_apply");
    const auto modes = detail::convolve(plan, detail::to_modes(h), ext);
    spectral::TorusTransform tr(h.grid);
    VectorLattice out(h.grid);
    const int nt = h.grid.time_nodes();
    for (int a = 0; a < h.grid.dim; ++a) {
        std::vector<double> d(modes.size());
        for (int i = 0; i < nt; ++i)
            tr.derivative(modes.data() + static_cast<std::size_t>(i) * tr.size(), d.data() + static_cast<std::size_t>(i) * tr.size(), a);
        out.components[static_cast<std::size_t>(a)] = detail::to_nodes(h.grid, std::move(d));
    }
    return out;
}

/// Spectral gradient of a lattice, slice by slice.
inline VectorLattice lattice_gradient(const ScalarLattice& h) {
    const auto modes = detail::to_modes(h);
    spectral::TorusTransform tr(h.grid);
    VectorLattice out(h.grid);
    for (int a = 0; a < h.grid.dim; ++a) {
        std::vector<double> d(modes.size());
        for (int i = 0; i < h.grid.time_nodes(); ++i)
            tr.derivative(modes.data() + static_cast<std::size_t>(i) * tr.size(), d.data() + static_cast<std::size_t>(i) * tr.size(), a);
        out.components[static_cast<std::size_t>(a)] = detail::to_nodes(h.grid, std::move(d));
    }
    return out;
}

/// Solves potential_apply(plan, x) = y (zero extension) by per-mode substitution
/// with iterative refinement until the relative residual is below tol.
inline ScalarLattice potential_solve(const KernelPlan& plan, const ScalarLattice& y, double tol = 1e-8,
                                     int max_refinements = 8) {
    require_same_grid(plan.grid, y.grid, "potential_solve");
    const int nt = plan.grid.time_nodes();
    const std::size_t ns = plan.grid.spatial_size();
    const std::size_t ng = plan.group_count();
    const int* grp = plan.groups->group_of.data();
    const bool fwd = plan.direction == Direction::forward;
    auto substitute = [&](const std::vector<double>& rhs) {
        std::vector<double> x(rhs.size(), 0.0);
        for (int step = 0; step < nt; ++step) {
            const int i = fwd ? step : nt - 1 - step;
            double* xi = x.data() + static_cast<std::size_t>(i) * ns;
            const double* ri = rhs.data() + static_cast<std::size_t>(i) * ns;
            for (std::size_t c = 0; c < ns; ++c) xi[c] = ri[c];
            for (int m = 1; m <= step; ++m) {
                const int src = fwd ? i - m : i + m;
                const double* xs = x.data() + static_cast<std::size_t>(src) * ns;
                const double* w = plan.weights.data() + static_cast<std::size_t>(m) * ng;
                for (std::size_t c = 0; c < ns; ++c) xi[c] -= w[grp[c]] * xs[c];
            }
            const double* w0 = plan.weights.data();
            for (std::size_t c = 0; c < ns; ++c) xi[c] /= w0[grp[c]];
        }
        return x;
    };
    const auto ym = detail::to_modes(y);
    auto x = substitute(ym);
    double ynorm = 0.0;
    for (double v : ym) ynorm = std::max(ynorm, std::abs(v));
    for (int it = 0; it < max_refinements; ++it) {
        const auto ax = detail::convolve(plan, x, TimeExtension::zero);
        std::vector<double> r(ym.size());
        double rn = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) {
            r[k] = ym[k] - ax[k];
            rn = std::max(rn, std::abs(r[k]));
        }
        if (rn <= tol * ynorm || ynorm == 0.0) return detail::to_nodes(y.grid, std::move(x));
        const auto dx = substitute(r);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] += dx[k];
    }
    const auto ax = detail::convolve(plan, x, TimeExtension::zero);
    double rn = 0.0;
    for (std::size_t k = 0; k < ax.size(); ++k) rn = std::max(rn, std::abs(ym[k] - ax[k]));
    require(rn <= tol * ynorm, ErrorKind::numerical, "potential solve did not reach the requested residual");
    return detail::to_nodes(y.grid, std::move(x));
}

/// Real-space stencil of lag m: the response at every node to a unit value at node 0.
inline SpatialLattice lag_stencil(const KernelPlan& plan, int m) {
    require(m >= 0 && m < plan.grid.time_nodes(), ErrorKind::domain, "lag outside plan");
    spectral::TorusTransform tr(plan.grid);
    std::vector<double> e(tr.size(), 0.0);
    e[0] = 1.0;
    tr.to_modes(e.data());
    for (std::size_t c = 0; c < e.size(); ++c) e[c] *= plan.weight(m, plan.groups->group_of[c]);
    tr.to_nodes(e.data());
    SpatialLattice out(plan.grid);
    out.values = std::move(e);
    return out;
}

// ---- potentials of delta_{s=r} g ------------------------------------------

enum class DeltaKind { resolvent, s_p };

inline int time_index(const LatticeGrid& grid, double r) {
    const double u = (r - grid.t0) / grid.dt;
    const int i = static_cast<int>(std::lround(u));
    require(i >= 0 && i < grid.time_nodes() && std::abs(u - i) < 1e-9 * std::max(1.0, std::abs(u)), ErrorKind::domain,
            "time r must be a lattice time inside the window");
    return i;
}

/// 1_{t >= r} e^(-lambda (t-r)) e^((t-r) Laplacian) g.
inline ScalarLattice delta_resolvent(const SpatialLattice& g, double r, double lambda) {
    const LatticeGrid& grid = g.grid;
    const int ir = time_index(grid, r);
    spectral::TorusTransform tr(grid);
    std::vector<double> gm = g.values;
    tr.to_modes(gm.data());
    const auto groups = mode_groups(grid);
    std::vector<double> modes(grid.size(), 0.0);
    for (int i = ir; i < grid.time_nodes(); ++i) {
        const double tau = (i - ir) * grid.dt;
        double* o = modes.data() + static_cast<std::size_t>(i) * tr.size();
        for (std::size_t c = 0; c < tr.size(); ++c)
            o[c] = std::exp(-(lambda + groups->mu[static_cast<std::size_t>(groups->group_of[c])]) * tau) * gm[c];
    }
    return detail::to_nodes(grid, std::move(modes));
}

/// Gradient of (lambda + d/dt - Laplacian)^(-1/2 - 1/(2p')) delta_{s=r} g, cell-averaged in time.
inline VectorLattice delta_s_p(const SpatialLattice& g, double r, double lambda, double p) {
    require(p > 1.0, ErrorKind::configuration, "S_p needs p > 1");
    const LatticeGrid& grid = g.grid;
    const int ir = time_index(grid, r);
    const double pc = p / (p - 1.0);
    const double beta = 0.5 + 0.5 / pc;  // alpha/2 for alpha = 1 + 1/p'
    const double inv_gamma = 1.0 / std::tgamma(beta);
    spectral::TorusTransform tr(grid);
    std::vector<double> gm = g.values;
    tr.to_modes(gm.data());
    const auto groups = mode_groups(grid);
    std::vector<double> factor(groups->mu.size());
    std::vector<double> modes(grid.size(), 0.0);
    for (int i = ir; i < grid.time_nodes(); ++i) {
        const double tau = (i - ir) * grid.dt;
        const double A = std::max(0.0, tau - 0.5 * grid.dt), B = tau + 0.5 * grid.dt;
        for (std::size_t k = 0; k < factor.size(); ++k)
            factor[k] = inv_gamma * quad::power_exp_integral(beta, lambda + groups->mu[k], A, B) / grid.dt;
        double* o = modes.data() + static_cast<std::size_t>(i) * tr.size();
        for (std::size_t c = 0; c < tr.size(); ++c) o[c] = factor[static_cast<std::size_t>(groups->group_of[c])] * gm[c];
    }
    VectorLattice out(grid);
    for (int a = 0; a < grid.dim; ++a) {
        std::vector<double> d(modes.size());
        for (int i = 0; i < grid.time_nodes(); ++i)
            tr.derivative(modes.data() + static_cast<std::size_t>(i) * tr.size(), d.data() + static_cast<std::size_t>(i) * tr.size(), a);
        out.components[static_cast<std::size_t>(a)] = detail::to_nodes(grid, std::move(d));
    }
    return out;
}

/// Spectral gradient of a spatial lattice.
inline std::vector<SpatialLattice> spatial_gradient(const SpatialLattice& g) {
    spectral::TorusTransform tr(g.grid);
    std::vector<double> gm = g.values;
    tr.to_modes(gm.data());
    std::vector<SpatialLattice> out;
    for (int a = 0; a < g.grid.dim; ++a) {
        SpatialLattice s(g.grid);
        tr.derivative(gm.data(), s.values.data(), a);
        tr.to_nodes(s.values.data());
        out.push_back(std::move(s));
    }
    return out;
}

inline double spatial_norm(const SpatialLattice& g, double p) {
    ScalarLattice tmp;
    double s = 0.0, m = 0.0;
    for (double v : g.values) m = std::max(m, std::abs(v));
    if (std::isinf(p)) return m;
    if (m == 0.0) return 0.0;
    std::vector<double> terms(g.values.size());
    for (std::size_t k = 0; k < terms.size(); ++k) terms[k] = std::pow(std::abs(g.values[k]) / m, p);
    s = pairwise_sum(terms);
    return m * std::pow(s * std::pow(g.grid.dx, g.grid.dim), 1.0 / p);
}

// ---- drift operators ------------------------------------------------------

/// Cell-averaged nonlinear functionals of b used by the operators.
struct DriftCoefficients {
    LatticeGrid grid;
    double p = 2.0;
    VectorLattice b_frac;       // b^(1/p) = b |b|^(-1+1/p)
    ScalarLattice b_abs_conj;   // |b|^(1/p')
    bool zero = false;
};

inline DriftCoefficients sample_coefficients(const fields::VectorField& b, const LatticeGrid& grid, double p) {
    require(p > 1.0 && std::isfinite(p), ErrorKind::configuration, "p must lie in (1, infinity)");
    const int d = grid.dim;
    const double pc = p / (p - 1.0);
    auto comps = fields::sample_cell_averages(b, grid, d + 1, [d, p, pc](const Vec& v, double* o) {
        const Vec f = fields::fractional_power_vector(v, p);
        for (int a = 0; a < d; ++a) o[a] = f[a];
        o[d] = std::pow(v.norm(), 1.0 / pc);
    });
    DriftCoefficients c;
    c.grid = grid;
    c.p = p;
    c.b_frac = VectorLattice(grid);
    for (int a = 0; a < d; ++a) c.b_frac.components[static_cast<std::size_t>(a)] = std::move(comps[static_cast<std::size_t>(a)]);
    c.b_abs_conj = std::move(comps[static_cast<std::size_t>(d)]);
    c.zero = fields::analyze(b).identically_zero;
    if (!c.zero) c.zero = lattice_norm(c.b_abs_conj, INFINITY) == 0.0;
    return c;
}

/// R_p, Q_p, G_p, T_p for sampled coefficients at one lambda.
class DriftOperators {
public:
    DriftOperators(std::shared_ptr<const DriftCoefficients> coef, double lambda)
        : coef_(std::move(coef)), lambda_(lambda) {
        const double p = coef_->p, pc = p / (p - 1.0);
        const auto& g = coef_->grid;
        grad_plan_ = cached_plan(g, Direction::forward, 1.0 + 1.0 / p, lambda);
        q_plan_ = cached_plan(g, Direction::forward, 1.0 / pc, lambda);
        g_plan_ = cached_plan(g, Direction::forward, 1.0 / p, lambda);
    }

    const DriftCoefficients& coefficients() const { return *coef_; }
    double lambda() const { return lambda_; }
    double p() const { return coef_->p; }

    /// b^(1/p) . grad (lambda + d/dt - Laplacian)^(-1/2 - 1/(2p)) h
    ScalarLattice R(const ScalarLattice& h) const {
        if (coef_->zero) return ScalarLattice(h.grid);
        return lattice_dot(coef_->b_frac, gradient_potential_apply(*grad_plan_, h));
    }

    /// (lambda + d/dt - Laplacian)^(-1/(2p')) |b|^(1/p') h
    ScalarLattice Q(const ScalarLattice& h) const {
        if (coef_->zero) return ScalarLattice(h.grid);
        ScalarLattice m = h;
        for (std::size_t k = 0; k < m.values.size(); ++k) m.values[k] *= coef_->b_abs_conj.values[k];
        return potential_apply(*q_plan_, m);
    }

    /// b^(1/p) . (lambda + d/dt - Laplacian)^(-1/(2p)) h for vector h
    ScalarLattice G(const VectorLattice& h) const {
        if (coef_->zero) return ScalarLattice(h.grid);
        VectorLattice ph(h.grid);
        for (int a = 0; a < h.grid.dim; ++a)
            ph.components[static_cast<std::size_t>(a)] = potential_apply(*g_plan_, h.components[static_cast<std::size_t>(a)]);
        return lattice_dot(coef_->b_frac, ph);
    }

    ScalarLattice T(const ScalarLattice& h) const { return R(Q(h)); }

private:
    std::shared_ptr<const DriftCoefficients> coef_;
    double lambda_;
    std::shared_ptr<const KernelPlan> grad_plan_, q_plan_, g_plan_;
};

inline ScalarLattice op_R(const fields::VectorField& b, double p, double lambda, const ScalarLattice& h) {
    return DriftOperators(std::make_shared<DriftCoefficients>(sample_coefficients(b, h.grid, p)), lambda).R(h);
}
inline ScalarLattice op_Q(const fields::VectorField& b, double p, double lambda, const ScalarLattice& h) {
    return DriftOperators(std::make_shared<DriftCoefficients>(sample_coefficients(b, h.grid, p)), lambda).Q(h);
}
inline ScalarLattice op_G(const fields::VectorField& b, double p, double lambda, const VectorLattice& h) {
    return DriftOperators(std::make_shared<DriftCoefficients>(sample_coefficients(b, h.grid, p)), lambda).G(h);
}
inline ScalarLattice op_T(const fields::VectorField& b, double p, double lambda, const ScalarLattice& h) {
    return DriftOperators(std::make_shared<DriftCoefficients>(sample_coefficients(b, h.grid, p)), lambda).T(h);
}

// ---- operator-norm probing -------------------------------------------------

struct OperatorProbeReport {
    std::string op_id;
    double p = 2.0;
    double lambda = 0.0;
    int probes = 0;
    double max_ratio = 0.0;
    std::string kind = "lower_bound";
    int argmax = -1;
    std::uint64_t seed = 0;
    std::vector<double> running_max;
    std::vector<std::string> probe_kinds;
};

inline nlohmann::json to_json(const OperatorProbeReport& r) {
    return {{"operator", r.op_id}, {"p", r.p},           {"lambda", r.lambda},         {"probes", r.probes},
            {"max_ratio", r.max_ratio}, {"kind", r.kind}, {"argmax_probe", r.argmax}, {"seed", r.seed},
            {"running_max", r.running_max}};
}

/// Deterministic probe inputs: k = 0 constant, then Gaussian noise and space-time bumps.
inline ScalarLattice probe_input(const LatticeGrid& grid, int k, std::uint64_t seed) {
    ScalarLattice f(grid);
    if (k == 0) {
        std::fill(f.values.begin(), f.values.end(), 1.0);
        return f;
    }
    const std::uint64_t ps = rng::derive_seed(seed, static_cast<std::uint64_t>(k));
    if (k % 2 == 1) {
        for (std::size_t n = 0; n < f.values.size(); n += 4) {
            double z[4];
            rng::normals(ps, n / 4, 0, z, 4);
            for (std::size_t q = 0; q < 4 && n + q < f.values.size(); ++q) f.values[n + q] = z[q];
        }
        return f;
    }
    const int d = grid.dim;
    Vec c(d);
    for (int a = 0; a < d; ++a) c[a] = (2.0 * rng::uniform(ps, 1, static_cast<std::uint32_t>(a)) - 1.0) * 0.5 * grid.half_width;
    const double tc = grid.t0 + rng::uniform(ps, 2, 0) * (grid.t1 - grid.t0);
    const double sx = 2.0 * grid.dx + rng::uniform(ps, 3, 0) * (0.5 * grid.half_width - 2.0 * grid.dx);
    const double st = 2.0 * grid.dt + rng::uniform(ps, 4, 0) * (0.5 * (grid.t1 - grid.t0) - 2.0 * grid.dt);
    for (int i = 0; i < grid.time_nodes(); ++i) {
        const double et = std::exp(-0.5 * std::pow((grid.time(i) - tc) / st, 2));
        for (std::size_t s = 0; s < grid.spatial_size(); ++s) {
            const Vec x = grid.point(s) - c;
            f.at(i, s) = et * std::exp(-0.5 * x.norm2() / (sx * sx));
        }
    }
    return f;
}

/// Max of |Op f|_p / |f|_p over a probe set; every fourth probe recycles the
/// image of the best input so far.
inline OperatorProbeReport probe_operator_norm(const std::function<ScalarLattice(const ScalarLattice&)>& op,
                                               const std::string& op_id, double p, double lambda,
                                               const LatticeGrid& grid, int probes, std::uint64_t seed) {
    require(probes >= 16, ErrorKind::configuration, "operator probing needs at least 16 probes");
    OperatorProbeReport rep;
    rep.op_id = op_id;
    rep.p = p;
    rep.lambda = lambda;
    rep.seed = seed;
    ScalarLattice best_image;
    int fresh = 0;
    for (int k = 0; k < probes; ++k) {
        ScalarLattice f;
        std::string kind;
        if (k % 4 == 3 && !best_image.values.empty()) {
            f = best_image;
            kind = "recycled";
        } else {
            f = probe_input(grid, fresh, seed);
            kind = fresh == 0 ? "constant" : (fresh % 2 ? "noise" : "bump");
            ++fresh;
        }
        const double fn = lattice_norm(f, p);
        double ratio = 0.0;
        if (fn > 0.0) {
            ScalarLattice img = op(f);
            const double in = lattice_norm(img, p);
            ratio = in / fn;
            if (ratio > rep.max_ratio || rep.argmax < 0) {
                rep.max_ratio = std::max(rep.max_ratio, ratio);
                rep.argmax = k;
                if (in > 0.0) {
                    img *= 1.0 / in;
                    best_image = std::move(img);
                }
            } else if (kind == "recycled" && in > 0.0) {
                img *= 1.0 / in;
                best_image = std::move(img);
            }
        }
        rep.probe_kinds.push_back(kind);
        rep.running_max.push_back(rep.max_ratio);
        ++rep.probes;
    }
    return rep;
}

}  // namespace driftlab::potentials
