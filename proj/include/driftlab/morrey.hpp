#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/fields.hpp"
#include "driftlab/lattice.hpp"
#include "driftlab/potentials.hpp"
#include "driftlab/quadrature.hpp"
#include "driftlab/spectral.hpp"

namespace driftlab::morrey {

/// C_r(t, x) = {t <= s <= t + r^2, |x - y| <= r}.
struct ParabolicCylinder {
    double t = 0.0;
    Vec x;
    double r = 1.0;

    double volume() const { return r * r * ball_volume(x.size(), r); }
    bool contains(double s, const Vec& y) const { return s >= t && s <= t + r * r && (y - x).norm() <= r; }
};

struct Anchor {
    double t = 0.0;
    Vec x;
};

struct CylinderSampling {
    std::vector<double> radii;
    std::vector<Anchor> anchors;
    int nodes = 8;
    std::uint64_t seed = 0;  // recorded; the tensor rules are deterministic

    void validate() const {
        require(!radii.empty() && !anchors.empty(), ErrorKind::configuration, "sampling needs radii and anchors");
        for (double r : radii) require(r > 0.0, ErrorKind::configuration, "radii must be positive");
        require(nodes >= 8, ErrorKind::configuration, "at least 8 quadrature nodes per cylinder");
    }

    /// Radii r_min 2^k <= r_max.
    static std::vector<double> dyadic(double r_min, double r_max) {
        require(r_min > 0.0 && r_max >= r_min, ErrorKind::configuration, "need 0 < r_min <= r_max");
        std::vector<double> out;
        for (double r = r_min; r <= r_max * (1.0 + 1e-12); r *= 2.0) out.push_back(r);
        return out;
    }

    /// Anchors on a cubic lattice of spacing `step` in [-half, half]^d, at the given times.
    static std::vector<Anchor> anchor_lattice(int dim, double half, double step, const std::vector<double>& times) {
        const int k = static_cast<int>(std::floor(half / step + 1e-9));
        const int side = 2 * k + 1;
        int total = 1;
        for (int a = 0; a < dim; ++a) total *= side;
        std::vector<Anchor> out;
        for (double t : times)
            for (int c = 0; c < total; ++c) {
                Vec x(dim);
                int r = c;
                for (int a = dim - 1; a >= 0; --a) {
                    x[a] = (r % side - k) * step;
                    r /= side;
                }
                out.push_back({t, x});
            }
        return out;
    }

    nlohmann::json fingerprint() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& a : anchors) {
            h = fnv1a(&a.t, sizeof a.t, h);
            for (int i = 0; i < a.x.size(); ++i) h = fnv1a(&a.x.v[static_cast<std::size_t>(i)], sizeof(double), h);
        }
        return {{"radii", radii}, {"nodes", nodes}, {"seed", seed}, {"anchor_count", anchors.size()},
                {"anchor_hash", hex64(h)}};
    }
};

struct FunctionalEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

struct NormEstimate {
    double value = 0.0;
    std::string kind = "lower_bound";
    double argmax_radius = 0.0;
    Anchor argmax_anchor;
    double argmax_stderr = 0.0;
    std::size_t evaluated = 0;
    nlohmann::json sampling;
};

inline nlohmann::json to_json(const NormEstimate& e) {
    return {{"value", e.value},
            {"kind", e.kind},
            {"argmax", {{"radius", e.argmax_radius}, {"t", e.argmax_anchor.t}, {"x", e.argmax_anchor.x.to_vector()}}},
            {"argmax_stderr", e.argmax_stderr},
            {"evaluated", e.evaluated},
            {"sampling", e.sampling}};
}

namespace detail {

struct Sample {
    double w;
    double mag;
};

// Distances along the ray o + s*w at which |y - c| = R.
inline void sphere_hits(const Vec& o, const Vec& w, const Vec& c, double R, double smax, std::vector<double>& out) {
    const Vec oc = o - c;
    const double b = dot(oc, w);
    const double disc = b * b - (oc.norm2() - R * R);
    if (disc <= 0.0) return;
    const double sq = std::sqrt(disc);
    for (double s : {-b - sq, -b + sq})
        if (s > 1e-14 * smax && s < smax * (1.0 - 1e-14)) out.push_back(s);
}

// Unit directions with weights summing to the sphere area (d = 1, 2, 3).
inline void directions(int dim, int m, std::vector<Vec>& dirs, std::vector<double>& wts) {
    dirs.clear();
    wts.clear();
    if (dim == 1) {
        dirs = {Vec{1.0}, Vec{-1.0}};
        wts = {1.0, 1.0};
    } else if (dim == 2) {
        const int nphi = 2 * m;
        for (int k = 0; k < nphi; ++k) {
            const double ph = 2.0 * std::numbers::pi * (k + 0.5) / nphi;
            dirs.push_back(Vec{std::cos(ph), std::sin(ph)});
            wts.push_back(2.0 * std::numbers::pi / nphi);
        }
    } else if (dim == 3) {
        const quad::Rule& rule = quad::gauss_legendre(m);
        const int nphi = 2 * m;
        for (std::size_t i = 0; i < rule.x.size(); ++i) {
            const double ct = rule.x[i], st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            for (int k = 0; k < nphi; ++k) {
                const double ph = 2.0 * std::numbers::pi * (k + 0.5) / nphi;
                dirs.push_back(Vec{st * std::cos(ph), st * std::sin(ph), ct});
                wts.push_back(rule.w[i] * 2.0 * std::numbers::pi / nphi);
            }
        }
    } else {
        fail(ErrorKind::configuration, "Morrey quadrature supports d <= 3");
    }
}

// Ball quadrature samples of |b(t, .)| over B_r(x) with m nodes per direction.
inline void ball_samples(const fields::VectorField& f, const fields::Structure& st, double t, const Vec& x, double r,
                         int m, double tw, std::vector<Sample>& out) {
    const int d = x.size();
    Vec o = x;
    bool from_singular = false;
    if (st.center && ((*st.center) - x).norm() < r) {
        o = *st.center;
        from_singular = true;
    }
    std::vector<Vec> dirs;
    std::vector<double> dw;
    directions(d, m, dirs, dw);
    const quad::Rule& rule = quad::gauss_legendre(m);
    std::vector<double> cuts;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        const Vec& w = dirs[k];
        double smax = r;
        if (from_singular) {
            const Vec oc = o - x;
            const double b = dot(oc, w);
            smax = -b + std::sqrt(std::max(0.0, b * b - (oc.norm2() - r * r)));
        }
        cuts.assign(1, 0.0);
        if (st.center)
            for (double R : st.breaks) sphere_hits(o, w, *st.center, R, smax, cuts);
        std::sort(cuts.begin() + 1, cuts.end());
        cuts.push_back(smax);
        for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
            const double s0 = cuts[seg], s1 = cuts[seg + 1];
            if (s1 <= s0) continue;
            const bool graded = from_singular && seg == 0;
            for (std::size_t q = 0; q < rule.x.size(); ++q) {
                const double u = 0.5 * (rule.x[q] + 1.0);
                double s, ds;
                if (graded) {
                    s = s0 + (s1 - s0) * u * u;
                    ds = 2.0 * u * (s1 - s0);
                } else {
                    s = s0 + (s1 - s0) * u;
                    ds = s1 - s0;
                }
                const double jac = d == 1 ? 1.0 : std::pow(s, d - 1);
                const Vec y = o + s * w;
                const double mag = f(t, y).norm();
                require(std::isfinite(mag), ErrorKind::numerical, "non-finite field sample in Morrey quadrature");
                out.push_back({tw * dw[k] * 0.5 * rule.w[q] * ds * jac, mag});
            }
        }
    }
}

// Time nodes on [t, t + len] with grading from singular times; weights sum to len.
inline void time_nodes(const fields::Structure& st, double t, double len, int m, std::vector<double>& ts,
                       std::vector<double>& ws) {
    ts.clear();
    ws.clear();
    if (st.time_independent || len == 0.0) {
        ts.push_back(t);
        ws.push_back(len == 0.0 ? 1.0 : len);
        return;
    }
    std::vector<double> cuts{t};
    for (double s : st.singular_times)
        if (s > t && s < t + len) cuts.push_back(s);
    cuts.push_back(t + len);
    const quad::Rule& rule = quad::gauss_legendre(m);
    for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
        const double a = cuts[seg], b = cuts[seg + 1];
        const bool graded = std::find(st.singular_times.begin(), st.singular_times.end(), a) != st.singular_times.end();
        for (std::size_t q = 0; q < rule.x.size(); ++q) {
            const double u = 0.5 * (rule.x[q] + 1.0);
            const double u2 = u * u;
            ts.push_back(graded ? a + (b - a) * u2 * u2 : a + (b - a) * u);
            ws.push_back(0.5 * rule.w[q] * (graded ? 4.0 * u2 * u * (b - a) : (b - a)));
        }
    }
}

// r * (weighted mean of mag^q)^(1/q), scaled by the max sample so that c*b gives exactly c times.
inline double scaled_mean(const std::vector<Sample>& s, double q, double r) {
    double mx = 0.0, wsum = 0.0;
    for (const auto& x : s) {
        mx = std::max(mx, x.mag);
        wsum += x.w;
    }
    if (mx == 0.0 || wsum == 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& x : s) acc += x.w * std::pow(x.mag / mx, q);
    return r * mx * std::pow(acc / wsum, 1.0 / q);
}

inline double cylinder_value(const fields::VectorField& f, const fields::Structure& st, const ParabolicCylinder& c,
                             double q, int m) {
    std::vector<double> ts, ws;
    time_nodes(st, c.t, c.r * c.r, m, ts, ws);
    std::vector<Sample> samples;
    for (std::size_t k = 0; k < ts.size(); ++k) ball_samples(f, st, ts[k], c.x, c.r, m, ws[k], samples);
    return scaled_mean(samples, q, c.r);
}

inline double ball_value(const fields::VectorField& f, const fields::Structure& st, double t, const Vec& x, double r,
                         double q, int m) {
    std::vector<Sample> samples;
    ball_samples(f, st, t, x, r, m, 1.0, samples);
    return scaled_mean(samples, q, r);
}

}  // namespace detail

/// r (|C_r|^-1 int_{C_r} |b|^q)^(1/q) with error estimate |Q_m - Q_{m/2}|.
inline FunctionalEstimate cylinder_functional(const fields::VectorField& f, const ParabolicCylinder& c, double q,
                                              int nodes = 8) {
    const int d = f.dim();
    require(q > 1.0 && q <= d + 2, ErrorKind::configuration, "q must lie in (1, d+2]");
    require(c.r > 0.0 && c.x.size() == d, ErrorKind::configuration, "invalid cylinder");
    require(nodes >= 8, ErrorKind::configuration, "at least 8 quadrature nodes per cylinder");
    const fields::Structure st = fields::analyze(f);
    const double hi = detail::cylinder_value(f, st, c, q, nodes);
    const double lo = detail::cylinder_value(f, st, c, q, nodes / 2);
    return {hi, std::abs(hi - lo)};
}

/// Elliptic analogue over balls at time t.
inline FunctionalEstimate ball_functional(const fields::VectorField& f, double t, const Vec& x, double r, double q,
                                          int nodes = 8) {
    const int d = f.dim();
    require(q > 1.0 && q <= d + 2, ErrorKind::configuration, "q must lie in (1, d+2]");
    require(nodes >= 8, ErrorKind::configuration, "at least 8 quadrature nodes per ball");
    const fields::Structure st = fields::analyze(f);
    const double hi = detail::ball_value(f, st, t, x, r, q, nodes);
    const double lo = detail::ball_value(f, st, t, x, r, q, nodes / 2);
    return {hi, std::abs(hi - lo)};
}

namespace detail {

template <class Eval>
NormEstimate sup_over(const CylinderSampling& s, Eval&& eval) {
    s.validate();
    const std::size_t na = s.anchors.size(), nr = s.radii.size();
    std::vector<FunctionalEstimate> vals(na * nr);
    parallel_for(na * nr, [&](std::size_t k) { vals[k] = eval(s.radii[k / na], s.anchors[k % na]); });
    NormEstimate e;
    e.sampling = s.fingerprint();
    e.evaluated = vals.size();
    bool first = true;
    // Radii ascending, anchors in given order: strict improvement keeps the smallest radius on ties.
    for (std::size_t ri = 0; ri < nr; ++ri)
        for (std::size_t ai = 0; ai < na; ++ai) {
            const auto& v = vals[ri * na + ai];
            const Anchor& a = s.anchors[ai];
            bool better = first || v.value > e.value;
            if (!better && v.value == e.value && s.radii[ri] == e.argmax_radius) {
                // lexicographic tie-break on (t, x)
                if (a.t < e.argmax_anchor.t) better = true;
                else if (a.t == e.argmax_anchor.t)
                    better = std::lexicographical_compare(a.x.v.begin(), a.x.v.begin() + a.x.n, e.argmax_anchor.x.v.begin(),
                                                          e.argmax_anchor.x.v.begin() + e.argmax_anchor.x.n);
            }
            if (better) {
                e.value = v.value;
                e.argmax_stderr = v.stderr_;
                e.argmax_radius = s.radii[ri];
                e.argmax_anchor = a;
                first = false;
            }
        }
    return e;
}

}  // namespace detail

/// Max of the cylinder functional over the sampling; a lower bound of the E_q norm.
inline NormEstimate morrey_norm(const fields::VectorField& f, double q, const CylinderSampling& s) {
    return detail::sup_over(s, [&](double r, const Anchor& a) {
        return cylinder_functional(f, ParabolicCylinder{a.t, a.x, r}, q, s.nodes);
    });
}

/// Max of the ball functional at each anchor's time; a lower bound of the M_q norm.
inline NormEstimate elliptic_morrey_norm(const fields::VectorField& f, double q, const CylinderSampling& s) {
    return detail::sup_over(s, [&](double r, const Anchor& a) { return ball_functional(f, a.t, a.x, r, q, s.nodes); });
}

// ---- maximal functions ------------------------------------------------------

enum class MaximalMode { anchored, uncentered };

struct MaximalOptions {
    double r_min = 0.0;  // default dx / 2
    double r_max = 0.0;  // default half width
};

inline std::vector<double> maximal_radii(const LatticeGrid& g, const MaximalOptions& o) {
    const double r0 = o.r_min > 0.0 ? o.r_min : 0.5 * g.dx;
    const double r1 = o.r_max > 0.0 ? o.r_max : g.half_width;
    return CylinderSampling::dyadic(r0, r1);
}

/// Lattice offsets within distance r (periodic images not double counted).
inline std::vector<std::array<int, kMaxDim>> ball_offsets(const LatticeGrid& g, double r) {
    const int n = g.nodes_per_axis();
    const int k = std::min(static_cast<int>(std::floor(r / g.dx + 1e-12)), (n - 1) / 2);
    const int side = 2 * k + 1;
    int total = 1;
    for (int a = 0; a < g.dim; ++a) total *= side;
    std::vector<std::array<int, kMaxDim>> out;
    for (int c = 0; c < total; ++c) {
        std::array<int, kMaxDim> o{};
        int rr = c;
        double d2 = 0.0;
        for (int a = g.dim - 1; a >= 0; --a) {
            o[static_cast<std::size_t>(a)] = rr % side - k;
            rr /= side;
            d2 += std::pow(o[static_cast<std::size_t>(a)] * g.dx, 2);
        }
        if (d2 <= r * r * (1.0 + 1e-12)) out.push_back(o);
    }
    return out;
}

/// Number of time slices i..i+k covered by a cylinder of radius r.
inline int cylinder_time_span(const LatticeGrid& g, double r) {
    return static_cast<int>(std::floor(r * r / g.dt + 1e-9));
}

/// Cylinder averages A_r at every anchor node: periodic in space, truncated at T1
/// and normalized by the number of nodes inside the window.
inline ScalarLattice cylinder_averages(const ScalarLattice& h, double r) {
    const LatticeGrid& g = h.grid;
    const auto offs = ball_offsets(g, r);
    spectral::TorusTransform tr(g);
    const std::size_t ns = g.spatial_size();
    // Eigenvalue of the ball-sum operator on each coefficient (the stencil is reflection symmetric).
    const auto& B = tr.basis();
    const int n = g.nodes_per_axis();
    std::vector<double> eig(ns, 0.0);
    for (std::size_t c = 0; c < ns; ++c) {
        const auto idx = tr.index(c);
        double s = 0.0;
        for (const auto& o : offs) {
            double prod = 1.0;
            for (int a = 0; a < g.dim; ++a) {
                const int k = B.freq[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
                prod *= std::cos(2.0 * std::numbers::pi * k * o[static_cast<std::size_t>(a)] / n);
            }
            s += prod;
        }
        eig[c] = s;
    }
    const int nt = g.time_nodes();
    ScalarLattice sums(g);
    for (int i = 0; i < nt; ++i) {
        std::vector<double> m(h.slice(i), h.slice(i) + ns);
        tr.to_modes(m.data());
        for (std::size_t c = 0; c < ns; ++c) m[c] *= eig[c];
        tr.to_nodes(m.data());
        for (std::size_t s = 0; s < ns; ++s) sums.at(i, s) = std::max(0.0, m[s]);
    }
    // Prefix sums in time.
    const int span = cylinder_time_span(g, r);
    ScalarLattice out(g);
    std::vector<double> prefix((static_cast<std::size_t>(nt) + 1) * ns, 0.0);
    for (int i = 0; i < nt; ++i)
        for (std::size_t s = 0; s < ns; ++s)
            prefix[(static_cast<std::size_t>(i) + 1) * ns + s] = prefix[static_cast<std::size_t>(i) * ns + s] + sums.at(i, s);
    const double per_slice = static_cast<double>(offs.size());
    for (int i = 0; i < nt; ++i) {
        const int j = std::min(nt - 1, i + span);
        const double count = per_slice * (j - i + 1);
        for (std::size_t s = 0; s < ns; ++s)
            out.at(i, s) = (prefix[(static_cast<std::size_t>(j) + 1) * ns + s] - prefix[static_cast<std::size_t>(i) * ns + s]) / count;
    }
    return out;
}

/// M_beta h = sup_r r^beta (cylinder average); the uncentered mode also takes
/// cylinders whose anchor is shifted by up to r/2 per axis and r^2/2 back in time.
inline ScalarLattice maximal_function(const ScalarLattice& h, double beta, MaximalMode mode,
                                      const MaximalOptions& opts = {}) {
    const LatticeGrid& g = h.grid;
    require(beta >= 0.0 && beta <= g.dim + 2, ErrorKind::configuration, "beta must lie in [0, d+2]");
    for (double v : h.values) require(v >= 0.0, ErrorKind::domain, "maximal function needs h >= 0");
    const auto radii = maximal_radii(g, opts);
    const std::size_t ns = g.spatial_size();
    const int nt = g.time_nodes();
    ScalarLattice out(g);
    for (double r : radii) {
        const ScalarLattice avg = cylinder_averages(h, r);
        const double scale = std::pow(r, beta);
        if (mode == MaximalMode::anchored) {
            for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] = std::max(out.values[k], scale * avg.values[k]);
            continue;
        }
        const int sx = static_cast<int>(std::floor(r / (2.0 * g.dx) + 1e-12));
        const int st = static_cast<int>(std::floor(r * r / (2.0 * g.dt) + 1e-12));
        std::vector<int> xs = sx > 0 ? std::vector<int>{-sx, 0, sx} : std::vector<int>{0};
        std::vector<int> tshift = st > 0 ? std::vector<int>{0, st} : std::vector<int>{0};
        int combos = 1;
        for (int a = 0; a < g.dim; ++a) combos *= static_cast<int>(xs.size());
        for (int i = 0; i < nt; ++i)
            for (std::size_t s = 0; s < ns; ++s) {
                const auto idx = g.unflatten(s);
                double best = out.at(i, s);
                for (int dtk : tshift) {
                    const int ia = i - dtk;
                    if (ia < 0) continue;
                    for (int c = 0; c < combos; ++c) {
                        std::array<int, kMaxDim> j = idx;
                        int rr = c;
                        for (int a = 0; a < g.dim; ++a) {
                            j[static_cast<std::size_t>(a)] += xs[static_cast<std::size_t>(rr % static_cast<int>(xs.size()))];
                            rr /= static_cast<int>(xs.size());
                        }
                        best = std::max(best, scale * avg.at(ia, g.flatten(j)));
                    }
                }
                out.at(i, s) = best;
            }
    }
    return out;
}

struct HedbergReport {
    double ratio = 0.0;
    std::size_t nodes_compared = 0;
    std::size_t unguarded_nodes = 0;  // numerator > 0 with zero denominator
};

/// sup over nodes of P_alpha h / ((M_beta h)^(alpha/beta) (M h)^(1 - alpha/beta)), 0/0 read as 0.
inline HedbergReport hedberg_ratio(const ScalarLattice& h, double alpha, double beta, const MaximalOptions& opts = {}) {
    const LatticeGrid& g = h.grid;
    require(alpha > 0.0 && alpha < beta && beta <= g.dim + 2, ErrorKind::configuration,
            "need 0 < alpha < beta <= d + 2");
    require(alpha <= 2.0, ErrorKind::configuration, "potentials support alpha <= 2");
    bool nonzero = false;
    for (double v : h.values) {
        require(v >= 0.0, ErrorKind::domain, "hedberg ratio needs h >= 0");
        nonzero |= v > 0.0;
    }
    require(nonzero, ErrorKind::domain, "hedberg ratio needs h not identically zero");
    const auto plan = potentials::cached_plan(g, potentials::Direction::backward, alpha, 0.0);
    const ScalarLattice P = potentials::potential_apply(*plan, h);
    const ScalarLattice Mb = maximal_function(h, beta, MaximalMode::anchored, opts);
    const ScalarLattice M0 = maximal_function(h, 0.0, MaximalMode::anchored, opts);
    double pmax = 0.0;
    for (double v : P.values) pmax = std::max(pmax, std::abs(v));
    const double noise = 1e-12 * pmax;
    const double th = alpha / beta;
    HedbergReport rep;
    for (std::size_t k = 0; k < P.values.size(); ++k) {
        const double num = P.values[k] > noise ? P.values[k] : 0.0;
        const double den = std::pow(Mb.values[k], th) * std::pow(M0.values[k], 1.0 - th);
        if (den > 0.0) {
            rep.ratio = std::max(rep.ratio, num / den);
            ++rep.nodes_compared;
        } else if (num > 0.0) {
            ++rep.unguarded_nodes;
            rep.ratio = std::numeric_limits<double>::infinity();
        }
    }
    return rep;
}

// ---- LPS classification -------------------------------------------------------

enum class LpsClass { subcritical, critical, supercritical };

inline const char* to_string(LpsClass c) {
    switch (c) {
        case LpsClass::subcritical: return "subcritical";
        case LpsClass::critical: return "critical";
        case LpsClass::supercritical: return "supercritical";
    }
    return "unknown";
}

struct LpsReport {
    double exponent = 0.0;
    LpsClass cls = LpsClass::subcritical;
    bool membership_claim_valid = false;  // p >= d and l >= 2
};

/// Compares d/p + 2/l with 1; l = infinity contributes 0.
inline LpsReport lps_classify(int dim, double p, double l) {
    require(p > 0.0 && l > 0.0, ErrorKind::configuration, "p and l must be positive");
    LpsReport r;
    r.exponent = dim / p + (std::isinf(l) ? 0.0 : 2.0 / l);
    const double gap = r.exponent - 1.0;
    if (std::abs(gap) <= 1e-12) r.cls = LpsClass::critical;
    else r.cls = gap < 0.0 ? LpsClass::subcritical : LpsClass::supercritical;
    r.membership_claim_valid = p >= dim && l >= 2.0;
    return r;
}

inline LpsReport lps_classify(const fields::VectorField& f, double p, double l) { return lps_classify(f.dim(), p, l); }

}  // namespace driftlab::morrey
