#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/fields.hpp"
#include "driftlab/lattice.hpp"
#include "driftlab/quadrature.hpp"
#include "driftlab/random.hpp"
#include "driftlab/solver.hpp"
#include "driftlab/stats.hpp"

namespace driftlab::sde {

using stats::Estimate;

struct EulerConfig {
    Vec x0;
    double horizon = 1.0;
    double dt = 1e-3;
    std::size_t paths = 1000;
    std::uint64_t seed = 1;
    double level = INFINITY;  // drift regularization level n
    int noise_refinement = 1; // normals per step, summed (couples runs at dt and dt / r)

    int steps() const { return static_cast<int>(std::lround(horizon / dt)); }

    void validate() const {
        require(x0.size() >= 1, ErrorKind::configuration, "x0 must be a point");
        require(dt > 0.0 && horizon > 0.0, ErrorKind::configuration, "need dt > 0 and horizon > 0");
        require(std::abs(steps() * dt - horizon) <= 1e-9 * horizon, ErrorKind::configuration,
                "horizon must be a multiple of dt");
        require(paths >= 1, ErrorKind::configuration, "need at least one path");
        require(noise_refinement >= 1, ErrorKind::configuration, "noise refinement must be positive");
        require(level > 0.0, ErrorKind::configuration, "drift level must be positive");
    }
};

inline nlohmann::json to_json(const EulerConfig& c) {
    return {{"x0", c.x0.to_vector()}, {"horizon", c.horizon}, {"dt", c.dt},
            {"paths", c.paths},        {"seed", c.seed},       {"level", std::isinf(c.level) ? nlohmann::json("inf") : nlohmann::json(c.level)},
            {"noise_refinement", c.noise_refinement}};
}

/// Called with (path, step k, t_k, X_k) for k = 0..steps.
using StepVisitor = std::function<void(std::size_t, int, double, const Vec&)>;

/// Euler-Maruyama ensemble. Paths are regenerated from (config, seed) on demand;
/// only endpoints, running sup norms and flags are stored.
class PathEnsemble {
public:
    PathEnsemble(EulerConfig cfg, fields::VectorField drift) : cfg_(std::move(cfg)), drift_(std::move(drift)) {}

    const EulerConfig& config() const { return cfg_; }
    const fields::VectorField& drift() const { return drift_; }
    const std::vector<Vec>& finals() const { return finals_; }
    const std::vector<double>& sup_norms() const { return sup_norms_; }
    const std::vector<char>& flagged() const { return flagged_; }
    std::size_t flagged_count() const { return static_cast<std::size_t>(std::count(flagged_.begin(), flagged_.end(), 1)); }

    /// Runs path i and reports each visited state; returns false when the path blew up.
    bool replay(std::size_t i, const StepVisitor& visit) const {
        const int d = cfg_.x0.size();
        const int r = cfg_.noise_refinement;
        const double scale = std::sqrt(2.0 * cfg_.dt / r);
        Vec x = cfg_.x0;
        double z[kMaxDim];
        for (int k = 0;; ++k) {
            const double t = k * cfg_.dt;
            if (visit) visit(i, k, t, x);
            if (k == cfg_.steps()) return true;
            const Vec b = drift_(t, x);
            Vec nx = x - cfg_.dt * b;
            for (int j = 0; j < r; ++j) {
                rng::normals(cfg_.seed, i, static_cast<std::uint32_t>(k * r + j), z, d);
                for (int a = 0; a < d; ++a) nx[a] += scale * z[a];
            }
            for (int a = 0; a < d; ++a)
                if (!std::isfinite(nx[a])) return false;
            x = nx;
        }
    }

    void run() {
        const std::size_t n = cfg_.paths;
        finals_.assign(n, Vec(cfg_.x0.size()));
        sup_norms_.assign(n, 0.0);
        flagged_.assign(n, 0);
        parallel_for(n, [&](std::size_t i) {
            double sup = 0.0;
            Vec last;
            const bool ok = replay(i, [&](std::size_t, int, double, const Vec& x) {
                sup = std::max(sup, x.norm());
                last = x;
            });
            finals_[i] = last;
            sup_norms_[i] = ok ? sup : INFINITY;
            flagged_[i] = ok ? 0 : 1;
        });
    }

    /// Per-path accumulation over full replays of unflagged paths; acc has m slots per path.
    std::vector<std::vector<double>> accumulate(int m, const std::function<void(int, double, const Vec&, double*)>& fn) const {
        std::vector<std::vector<double>> out(cfg_.paths);
        parallel_for(cfg_.paths, [&](std::size_t i) {
            if (flagged_[i]) return;
            std::vector<double> acc(static_cast<std::size_t>(m), 0.0);
            replay(i, [&](std::size_t, int k, double t, const Vec& x) { fn(k, t, x, acc.data()); });
            out[i] = std::move(acc);
        });
        return out;
    }

    /// Column j of accumulate() over unflagged paths.
    std::vector<double> column(const std::vector<std::vector<double>>& acc, int j) const {
        std::vector<double> v;
        v.reserve(acc.size());
        for (std::size_t i = 0; i < acc.size(); ++i)
            if (!flagged_[i]) v.push_back(acc[i][static_cast<std::size_t>(j)]);
        return v;
    }

    /// Hash of all stored endpoints, for reproducibility checks.
    std::string fingerprint() const {
        std::uint64_t h = fnv1a(nlohmann::json(to_json(cfg_)).dump());
        for (const Vec& x : finals_) h = fnv1a(x.v.data(), sizeof(double) * static_cast<std::size_t>(x.size()), h);
        h = fnv1a(flagged_.data(), flagged_.size(), h);
        return hex64(h);
    }

private:
    EulerConfig cfg_;
    fields::VectorField drift_;
    std::vector<Vec> finals_;
    std::vector<double> sup_norms_;
    std::vector<char> flagged_;
};

/// X_{k+1} = X_k - b_n(t_k, X_k) dt + sqrt(2 dt) xi_k with b_n = regularize(b, level).
inline PathEnsemble simulate(const EulerConfig& cfg, const fields::VectorField& b) {
    cfg.validate();
    require(b.dim() == cfg.x0.size(), ErrorKind::shape, "drift and x0 dimensions differ");
    const fields::Structure st = fields::analyze(b);
    require(std::isfinite(cfg.level) || st.bounded, ErrorKind::configuration,
            "simulation needs a finite drift level for unbounded drifts");
    PathEnsemble ens(cfg, std::isfinite(cfg.level) ? fields::regularize(b, cfg.level) : b);
    ens.run();
    return ens;
}

inline nlohmann::json summary_json(const PathEnsemble& e) {
    return {{"config", to_json(e.config())},
            {"drift", fields::to_json(e.drift())},
            {"flagged", e.flagged_count()},
            {"fingerprint", e.fingerprint()}};
}

inline nlohmann::json to_json(const Estimate& e) {
    return {{"value", e.value}, {"stderr", e.stderr_}, {"samples", e.samples}};
}

// ---- increments ------------------------------------------------------------------

struct IncrementCheck {
    double max_mean_z = 0.0;  // largest |mean| / stderr over batches and axes
    double max_cov_z = 0.0;   // largest |cov - 2 dt delta| / stderr over batches and entries
    bool pass = false;
};

/// Checks that the driving increments sqrt(2 dt) xi have mean 0 and covariance 2 dt I in each batch.
inline IncrementCheck increment_check(const PathEnsemble& e, std::size_t batches = 10, int steps = 64) {
    const auto& c = e.config();
    const int d = c.x0.size();
    const int r = c.noise_refinement;
    const double scale = std::sqrt(2.0 * c.dt / r);
    const int ns = std::min(steps, c.steps());
    IncrementCheck out;
    const std::size_t per = std::max<std::size_t>(1, c.paths / batches);
    double z[kMaxDim];
    for (std::size_t b = 0; b < batches && b * per < c.paths; ++b) {
        std::vector<Vec> inc;
        for (std::size_t i = b * per; i < std::min(c.paths, (b + 1) * per); ++i)
            for (int k = 0; k < ns; ++k) {
                Vec w(d);
                for (int j = 0; j < r; ++j) {
                    rng::normals(c.seed, i, static_cast<std::uint32_t>(k * r + j), z, d);
                    for (int a = 0; a < d; ++a) w[a] += scale * z[a];
                }
                inc.push_back(w);
            }
        const double n = static_cast<double>(inc.size());
        const double var = 2.0 * c.dt;
        for (int a = 0; a < d; ++a) {
            double m = 0.0;
            for (const Vec& w : inc) m += w[a];
            m /= n;
            out.max_mean_z = std::max(out.max_mean_z, std::abs(m) / std::sqrt(var / n));
            for (int bb = a; bb < d; ++bb) {
                double cv = 0.0;
                for (const Vec& w : inc) cv += w[a] * w[bb];
                cv /= n;
                const double target = a == bb ? var : 0.0;
                const double sd = a == bb ? std::sqrt(2.0) * var : var;  // Gaussian fourth moments
                out.max_cov_z = std::max(out.max_cov_z, std::abs(cv - target) / (sd / std::sqrt(n)));
            }
        }
    }
    out.pass = out.max_mean_z <= 4.0 && out.max_cov_z <= 4.0;
    return out;
}

// ---- occupation ------------------------------------------------------------------

using SpaceTimeFn = std::function<double(double, const Vec&)>;

/// (1/N) sum_paths sum_{t_k in [s, r)} h(t_k, X_k) dt with a batch-means standard error.
inline Estimate occupation_estimate(const PathEnsemble& e, const SpaceTimeFn& h, double s, double r) {
    require(r >= s, ErrorKind::domain, "window must satisfy s <= r");
    const double dt = e.config().dt;
    const double tol = 1e-9 * dt;
    auto acc = e.accumulate(1, [&](int, double t, const Vec& x, double* a) {
        if (t >= s - tol && t < r - tol) a[0] += h(t, x) * dt;
    });
    return stats::batch_means(e.column(acc, 0));
}

/// Exact E int_s^r 1_box(x0 + sqrt(2) B_t) dt for an axis-aligned box, by Gauss-Legendre in t.
inline double gaussian_box_occupation(const Vec& x0, const Vec& lo, const Vec& hi, double s, double r, int nodes = 64) {
    auto prob = [&](double t) {
        if (t <= 0.0) {
            bool in = true;
            for (int a = 0; a < x0.size(); ++a) in &= x0[a] >= lo[a] && x0[a] <= hi[a];
            return in ? 1.0 : 0.0;
        }
        const double sd = std::sqrt(4.0 * t);  // sqrt(2) * sqrt(2 t) in erf units
        double p = 1.0;
        for (int a = 0; a < x0.size(); ++a) p *= 0.5 * (std::erf((hi[a] - x0[a]) / sd) - std::erf((lo[a] - x0[a]) / sd));
        return p;
    };
    return quad::integrate_graded(prob, s, r, nodes);
}

// ---- Krylov fit ----------------------------------------------------------------

struct KrylovFit {
    std::vector<double> windows;
    std::vector<double> estimates;
    std::vector<double> stderrs;
    double C = 0.0;
    double gamma = 0.0;
    double r2 = 0.0;
    double gamma_lo = 0.0;
    double gamma_hi = 0.0;
    double k_level = 0.0;
    std::uint64_t seed = 0;
    bool flagged = false;
};

inline nlohmann::json to_json(const KrylovFit& f) {
    return {{"windows", f.windows}, {"estimates", f.estimates}, {"stderrs", f.stderrs},
            {"C", f.C},             {"gamma", f.gamma},         {"r2", f.r2},
            {"gamma_ci95", {f.gamma_lo, f.gamma_hi}}, {"k_level", f.k_level}, {"seed", f.seed},
            {"flagged", f.flagged}};
}

/// Fits E int_s^{s+h} |b_k(t, X_t)| dt ~ C h^gamma over the windows h.
inline KrylovFit krylov_fit(const PathEnsemble& e, const fields::VectorField& b, double k_level,
                            const std::vector<double>& windows, double s = 0.0) {
    require(windows.size() >= 4, ErrorKind::configuration, "Krylov fit needs at least 4 windows");
    const fields::VectorField bk = std::isfinite(k_level) ? fields::regularize(b, k_level) : b;
    const double dt = e.config().dt;
    const double tol = 1e-9 * dt;
    const int m = static_cast<int>(windows.size());
    auto acc = e.accumulate(m, [&](int, double t, const Vec& x, double* a) {
        if (t < s - tol) return;
        const double v = bk(t, x).norm() * dt;
        for (int j = 0; j < m; ++j)
            if (t < s + windows[static_cast<std::size_t>(j)] - tol) a[j] += v;
    });
    KrylovFit f;
    f.windows = windows;
    f.k_level = k_level;
    f.seed = e.config().seed;
    std::vector<double> lx, ly;
    for (int j = 0; j < m; ++j) {
        const Estimate est = stats::batch_means(e.column(acc, j));
        f.estimates.push_back(est.value);
        f.stderrs.push_back(est.stderr_);
        if (est.value > 0.0) {
            lx.push_back(std::log(windows[static_cast<std::size_t>(j)]));
            ly.push_back(std::log(est.value));
        } else {
            f.flagged = true;
        }
    }
    if (f.flagged || lx.size() < 3) {
        f.flagged = true;
        return f;
    }
    const stats::LinearFit lf = stats::ols(lx, ly);
    f.C = std::exp(lf.intercept);
    f.gamma = lf.slope;
    f.r2 = lf.r2;
    f.gamma_lo = lf.slope_lo;
    f.gamma_hi = lf.slope_hi;
    return f;
}

// ---- Krylov-type ratio -------------------------------------------------------------

/// Dictionary entry: amplitude times a box or smooth radial bump in space, times 1_[t_lo, t_hi].
struct KrylovProbe {
    enum class Kind { box, bump } kind = Kind::box;
    Vec center;
    double radius = 1.0;  // box half-width or bump radius
    double t_lo = 0.0, t_hi = 1.0;
    double amplitude = 1.0;

    double operator()(double t, const Vec& x) const {
        if (t < t_lo || t >= t_hi) return 0.0;
        if (kind == Kind::box) {
            for (int a = 0; a < x.size(); ++a)
                if (std::abs(x[a] - center[a]) > radius) return 0.0;
            return amplitude;
        }
        const double u = (x - center).norm2() / (radius * radius);
        return u < 1.0 ? amplitude * std::exp(-1.0 / (1.0 - u)) : 0.0;
    }

    /// |1_[0,T] h|_nu over R^(d+1).
    double nu_norm(double nu, double T) const {
        const int d = center.size();
        const double span = std::max(0.0, std::min(t_hi, T) - std::max(t_lo, 0.0));
        double space = 0.0;
        if (kind == Kind::box) {
            space = std::pow(2.0 * radius, d);
        } else {
            const double surface = 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
            space = surface * std::pow(radius, d) *
                    quad::integrate([&](double s) { return std::pow(s, d - 1) * std::exp(-nu / (1.0 - s * s)); }, 0.0, 1.0, 64);
        }
        return std::abs(amplitude) * std::pow(space * span, 1.0 / nu);
    }
};

struct NuRatioReport {
    double ratio = 0.0;  // empirical constant c
    int argmax = -1;
    std::vector<double> ratios;
    std::vector<double> occupations;
    std::vector<double> norms;
    double nu = 0.0;
};

inline nlohmann::json to_json(const NuRatioReport& r) {
    return {{"ratio", r.ratio}, {"argmax", r.argmax}, {"ratios", r.ratios},
            {"occupations", r.occupations}, {"norms", r.norms}, {"nu", r.nu}};
}

/// Sup over the dictionary of E int_0^T |h(t, X_t)| dt / |1_[0,T] h|_nu.
inline NuRatioReport krylov_nu_ratio(const PathEnsemble& e, const std::vector<KrylovProbe>& dict, double nu) {
    const int d = e.config().x0.size();
    require(nu > 0.5 * (d + 2), ErrorKind::configuration, "need nu > (d + 2) / 2");
    require(!dict.empty(), ErrorKind::configuration, "empty dictionary");
    const double dt = e.config().dt, T = e.config().horizon;
    const int m = static_cast<int>(dict.size());
    auto acc = e.accumulate(m, [&](int k, double t, const Vec& x, double* a) {
        if (k == e.config().steps()) return;
        for (int j = 0; j < m; ++j) a[j] += std::abs(dict[static_cast<std::size_t>(j)](t, x)) * dt;
    });
    NuRatioReport r;
    r.nu = nu;
    for (int j = 0; j < m; ++j) {
        const double occ = stats::batch_means(e.column(acc, j)).value;
        const double nrm = dict[static_cast<std::size_t>(j)].nu_norm(nu, T);
        const double ratio = nrm > 0.0 ? occ / nrm : 0.0;
        r.occupations.push_back(occ);
        r.norms.push_back(nrm);
        r.ratios.push_back(ratio);
        if (ratio > r.ratio) {
            r.ratio = ratio;
            r.argmax = j;
        }
    }
    return r;
}

// ---- martingale residuals ------------------------------------------------------------

/// Smooth compactly supported test function a * exp(-1/(1 - |x-c|^2/R^2)), or a constant.
struct TestFunction {
    Vec center;
    double radius = 1.0;
    double amplitude = 1.0;
    bool constant = false;

    double value(const Vec& x) const {
        if (constant) return amplitude;
        const double u = (x - center).norm2() / (radius * radius);
        return u < 1.0 ? amplitude * std::exp(-1.0 / (1.0 - u)) : 0.0;
    }
    Vec gradient(const Vec& x) const {
        Vec g(x.size());
        if (constant) return g;
        const double u = (x - center).norm2() / (radius * radius);
        if (u >= 1.0) return g;
        const double psi = std::exp(-1.0 / (1.0 - u));
        const double d1 = -psi / ((1.0 - u) * (1.0 - u));
        return (amplitude * d1 * 2.0 / (radius * radius)) * (x - center);
    }
    double laplacian(const Vec& x) const {
        if (constant) return 0.0;
        const double R2 = radius * radius;
        const double u = (x - center).norm2() / R2;
        if (u >= 1.0) return 0.0;
        const double w = 1.0 - u;
        const double psi = std::exp(-1.0 / w);
        const double d1 = -psi / (w * w);
        const double d2 = psi * (1.0 / (w * w * w * w) - 2.0 / (w * w * w));
        return amplitude * (d2 * 4.0 * (x - center).norm2() / (R2 * R2) + d1 * 2.0 * x.size() / R2);
    }
};

inline std::vector<TestFunction> stock_test_functions(const Vec& x0) {
    const int d = x0.size();
    Vec shift(d);
    shift[0] = 0.3;
    if (d > 1) shift[1] = -0.2;
    return {{x0, 1.0, 1.0, false}, {x0 + shift, 0.6, 1.0, false}, {Vec(d), 2.0, 1.0, false}};
}

struct MartingaleRow {
    int function = 0;
    double r = 0.0;
    Estimate mean;
    double z = 0.0;
};

struct IncrementRow {
    int function = 0;
    double s = 0.0, r = 0.0;
    int functional = 0;
    Estimate mean;
    double z = 0.0;
};

struct MartingaleReport {
    std::vector<MartingaleRow> rows;
    std::vector<IncrementRow> increments;
    double max_z = 0.0;
    double max_increment_z = 0.0;
};

inline nlohmann::json to_json(const MartingaleReport& m) {
    nlohmann::json rows = nlohmann::json::array(), inc = nlohmann::json::array();
    for (const auto& r : m.rows)
        rows.push_back({{"function", r.function}, {"r", r.r}, {"mean", r.mean.value}, {"stderr", r.mean.stderr_}, {"z", r.z}});
    for (const auto& r : m.increments)
        inc.push_back({{"function", r.function}, {"s", r.s}, {"r", r.r}, {"functional", r.functional},
                       {"mean", r.mean.value}, {"stderr", r.mean.stderr_}, {"z", r.z}});
    return {{"rows", rows}, {"increments", inc}, {"max_z", m.max_z}, {"max_increment_z", m.max_increment_z}};
}

/// Bounded functionals of the state at time s used for the conditional increment test.
inline double stock_functional(int j, const Vec& xs, const Vec& x0) {
    switch (j) {
        case 0: return 1.0;
        case 1: return std::tanh(xs[0] - x0[0]);
        default: return (xs - x0).norm() < 0.5 ? 1.0 : 0.0;
    }
}
inline constexpr int kStockFunctionals = 3;

/// M_r = f(X_r) - f(x0) + int_0^r (-Laplacian f + b.grad f)(t, X_t) dt along the ensemble's
/// drift, at each checkpoint, plus E[(M_r - M_s) phi(X_s)] for consecutive checkpoints.
inline MartingaleReport martingale_residual(const PathEnsemble& e, const std::vector<TestFunction>& fs,
                                            const std::vector<double>& checkpoints) {
    const auto& c = e.config();
    const double dt = c.dt;
    std::vector<int> ck;
    for (double r : checkpoints) {
        const int k = static_cast<int>(std::lround(r / dt));
        require(k >= 0 && k <= c.steps() && std::abs(k * dt - r) <= 1e-9, ErrorKind::configuration,
                "checkpoints must lie on the time grid");
        ck.push_back(k);
    }
    const int nf = static_cast<int>(fs.size()), nc = static_cast<int>(ck.size());
    // layout per path: M at checkpoints [nf * nc], state functionals at checkpoints [nc * kStockFunctionals], running integral [nf]
    const int m_off = 0, phi_off = nf * nc, int_off = phi_off + nc * kStockFunctionals;
    const fields::VectorField& b = e.drift();
    auto acc = e.accumulate(int_off + nf, [&](int k, double t, const Vec& x, double* a) {
        for (int j = 0; j < nc; ++j)
            if (ck[static_cast<std::size_t>(j)] == k) {
                for (int q = 0; q < nf; ++q) {
                    const auto& f = fs[static_cast<std::size_t>(q)];
                    a[m_off + q * nc + j] = f.value(x) - f.value(c.x0) + a[int_off + q];
                }
                for (int q = 0; q < kStockFunctionals; ++q) a[phi_off + j * kStockFunctionals + q] = stock_functional(q, x, c.x0);
            }
        if (k == c.steps()) return;
        const Vec bx = b(t, x);
        for (int q = 0; q < nf; ++q) {
            const auto& f = fs[static_cast<std::size_t>(q)];
            a[int_off + q] += (-f.laplacian(x) + dot(bx, f.gradient(x))) * dt;
        }
    });
    MartingaleReport rep;
    for (int q = 0; q < nf; ++q)
        for (int j = 0; j < nc; ++j) {
            MartingaleRow row{q, checkpoints[static_cast<std::size_t>(j)], stats::batch_means(e.column(acc, m_off + q * nc + j)), 0.0};
            row.z = row.mean.stderr_ > 0.0 ? std::abs(row.mean.value) / row.mean.stderr_ : (row.mean.value == 0.0 ? 0.0 : INFINITY);
            rep.max_z = std::max(rep.max_z, row.z);
            rep.rows.push_back(row);
        }
    for (int q = 0; q < nf; ++q)
        for (int j = 0; j + 1 < nc; ++j)
            for (int ph = 0; ph < kStockFunctionals; ++ph) {
                std::vector<double> v;
                for (std::size_t i = 0; i < acc.size(); ++i) {
                    if (e.flagged()[i]) continue;
                    const auto& a = acc[i];
                    const double dm = a[static_cast<std::size_t>(m_off + q * nc + j + 1)] - a[static_cast<std::size_t>(m_off + q * nc + j)];
                    v.push_back(dm * a[static_cast<std::size_t>(phi_off + j * kStockFunctionals + ph)]);
                }
                IncrementRow row{q, checkpoints[static_cast<std::size_t>(j)], checkpoints[static_cast<std::size_t>(j + 1)], ph,
                                 stats::batch_means(v), 0.0};
                row.z = row.mean.stderr_ > 0.0 ? std::abs(row.mean.value) / row.mean.stderr_ : (row.mean.value == 0.0 ? 0.0 : INFINITY);
                rep.max_increment_z = std::max(rep.max_increment_z, row.z);
                rep.increments.push_back(row);
            }
    return rep;
}

// ---- law vs propagator -----------------------------------------------------------

/// Propagator output v(tau, x) = U^{tau,0} g for the time-reversed drift, tagged with the
/// terminal time it was reversed about and the drift it was built from.
struct PropagatorTable {
    ScalarLattice v;
    std::string orientation = "reversed";
    double terminal = 0.0;       // t at which the reversal b~(tau) = b(t - tau) was taken
    bool time_independent = true;
    std::string drift_fingerprint;
    double lattice_tolerance = 0.0;
};

inline std::string drift_fingerprint(const fields::VectorField& b) { return hex64(fnv1a(fields::to_json(b).dump())); }

/// Drift for the propagator: b~(tau, x) = b(terminal - tau, x), sampled at nodes when time-dependent.
inline fields::VectorField reversed_drift(const fields::VectorField& b, double terminal, const LatticeGrid& grid) {
    if (fields::analyze(b).time_independent) return b;
    VectorLattice lat(grid);
    for (int i = 0; i < grid.time_nodes(); ++i)
        for (std::size_t s = 0; s < grid.spatial_size(); ++s) {
            const Vec v = b(terminal - grid.time(i), grid.point(s));
            for (int a = 0; a < grid.dim; ++a) lat.components[static_cast<std::size_t>(a)].at(i, s) = v[a];
        }
    return fields::grid_sampled(std::move(lat), "reversed");
}

/// Multilinear interpolation of a lattice at (t, x); x is wrapped onto the periodic box.
inline double interpolate(const ScalarLattice& h, double t, const Vec& x) {
    const LatticeGrid& g = h.grid;
    const double ft = (t - g.t0) / g.dt;
    require(ft >= -1e-9 && ft <= g.time_nodes() - 1 + 1e-9, ErrorKind::domain, "time outside lattice");
    const int i0 = std::clamp(static_cast<int>(std::floor(ft)), 0, g.time_nodes() - 2);
    const double wt = std::clamp(ft - i0, 0.0, 1.0);
    std::array<int, kMaxDim> base{};
    std::array<double, kMaxDim> w{};
    for (int a = 0; a < g.dim; ++a) {
        const double fx = (x[a] + g.half_width) / g.dx;
        base[static_cast<std::size_t>(a)] = static_cast<int>(std::floor(fx));
        w[static_cast<std::size_t>(a)] = fx - std::floor(fx);
    }
    double acc = 0.0;
    for (int corner = 0; corner < (1 << g.dim); ++corner) {
        std::array<int, kMaxDim> idx = base;
        double wc = 1.0;
        for (int a = 0; a < g.dim; ++a) {
            const bool up = (corner >> a) & 1;
            idx[static_cast<std::size_t>(a)] += up;
            wc *= up ? w[static_cast<std::size_t>(a)] : 1.0 - w[static_cast<std::size_t>(a)];
        }
        const std::size_t s = g.flatten(idx);
        acc += wc * ((1.0 - wt) * h.at(i0, s) + wt * h.at(i0 + 1, s));
    }
    return acc;
}

/// Builds the reversed-orientation table for E g(X_t) from the ensemble drift b_n on a lattice
/// (lambda only shifts the internal solve; the table is the undamped propagator).
inline PropagatorTable make_propagator_table(const fields::VectorField& b_n, const std::function<double(const Vec&)>& g,
                                             const LatticeGrid& grid, double p, double lambda, double terminal,
                                             const solver::SolveOptions& opt = {}) {
    potentials::SpatialLattice g0(grid);
    for (std::size_t s = 0; s < grid.spatial_size(); ++s) g0.values[s] = g(grid.point(s));
    const fields::VectorField rev = reversed_drift(b_n, terminal, grid);
    auto coef = std::make_shared<potentials::DriftCoefficients>(potentials::sample_coefficients(rev, grid, p));
    PropagatorTable tb;
    tb.v = solver::shifted_solve(coef, nullptr, &g0, grid.t0, 0.0, lambda, opt);
    tb.terminal = terminal;
    tb.time_independent = fields::analyze(b_n).time_independent;
    tb.drift_fingerprint = drift_fingerprint(b_n);
    return tb;
}

struct LawRow {
    double t = 0.0;
    Estimate mc;
    double propagator = 0.0;
    double gap = 0.0;
    double tolerance = 0.0;  // 3 stderr + lattice tolerance
    bool within = false;
};

struct LawReport {
    std::vector<LawRow> rows;
    double max_gap = 0.0;
};

inline nlohmann::json to_json(const LawReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"t", x.t}, {"mc", x.mc.value}, {"stderr", x.mc.stderr_}, {"propagator", x.propagator},
                        {"gap", x.gap}, {"tolerance", x.tolerance}, {"within", x.within}});
    return {{"rows", rows}, {"max_gap", r.max_gap}};
}

/// |E g(X_t) - U^{t,0} g (x0)| per checkpoint. Tables must be reversed-orientation propagators of the
/// ensemble's drift; a time-dependent drift needs one table per checkpoint (terminal = t).
inline LawReport law_vs_propagator(const PathEnsemble& e, const std::function<double(const Vec&)>& g,
                                   const std::vector<PropagatorTable>& tables, const std::vector<double>& checkpoints) {
    require(!tables.empty(), ErrorKind::configuration, "no propagator tables");
    const std::string fp = drift_fingerprint(e.drift());
    for (const auto& tb : tables) {
        if (tb.orientation != "reversed") fail(ErrorKind::configuration, "orientation mismatch: propagator is not time-reversed");
        if (tb.drift_fingerprint != fp) fail(ErrorKind::configuration, "orientation mismatch: propagator built from a different drift");
    }
    const double dt = e.config().dt;
    std::vector<int> ck;
    for (double t : checkpoints) {
        const int k = static_cast<int>(std::lround(t / dt));
        require(k >= 0 && k <= e.config().steps() && std::abs(k * dt - t) <= 1e-9, ErrorKind::configuration,
                "checkpoints must lie on the time grid");
        ck.push_back(k);
    }
    const int nc = static_cast<int>(ck.size());
    auto acc = e.accumulate(nc, [&](int k, double, const Vec& x, double* a) {
        for (int j = 0; j < nc; ++j)
            if (ck[static_cast<std::size_t>(j)] == k) a[j] = g(x);
    });
    LawReport rep;
    for (int j = 0; j < nc; ++j) {
        const double t = checkpoints[static_cast<std::size_t>(j)];
        const PropagatorTable* tb = nullptr;
        for (const auto& cand : tables)
            if (cand.time_independent || std::abs(cand.terminal - t) <= 1e-12) {
                tb = &cand;
                if (!cand.time_independent) break;
            }
        if (!tb) fail(ErrorKind::configuration, "orientation mismatch: no propagator reversed about t = " + std::to_string(t));
        LawRow row;
        row.t = t;
        row.mc = stats::batch_means(e.column(acc, j));
        row.propagator = interpolate(tb->v, tb->v.grid.t0 + t, e.config().x0);
        row.gap = std::abs(row.mc.value - row.propagator);
        row.tolerance = 3.0 * row.mc.stderr_ + tb->lattice_tolerance;
        row.within = row.gap <= row.tolerance;
        rep.max_gap = std::max(rep.max_gap, row.gap);
        rep.rows.push_back(row);
    }
    return rep;
}

// ---- tails -------------------------------------------------------------------------

/// Fraction of paths with sup_t |X_t| >= R (flagged paths count as escaped).
inline double tail_mass(const PathEnsemble& e, double R) {
    const auto& s = e.sup_norms();
    std::size_t k = 0;
    for (double v : s)
        if (v >= R) ++k;
    return static_cast<double>(k) / static_cast<double>(s.size());
}

}  // namespace driftlab::sde
