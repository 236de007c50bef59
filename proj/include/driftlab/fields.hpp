#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/lattice.hpp"
#include "driftlab/quadrature.hpp"

namespace driftlab::fields {

class VectorField;

namespace node {

struct Hardy {
    double delta;
    int dim;
    double cutoff;
};
struct InvSqrtTime {
    double amplitude;
    Vec direction;
};
struct Constant {
    Vec value;
};
struct GridSampled {
    std::shared_ptr<const VectorLattice> lattice;
    std::string source;  // sidecar path when loaded from disk
};
struct Scaled {
    double factor;
    std::shared_ptr<const VectorField> inner;
};
struct Sum {
    std::vector<VectorField> terms;
};
struct Regularized {
    double level;
    std::shared_ptr<const VectorField> inner;
};
enum class Role { singular, bounded };
struct SplitPart {
    Role role;
    double threshold;
    std::shared_ptr<const VectorField> inner;
};

}  // namespace node

using Node = std::variant<node::Hardy, node::InvSqrtTime, node::Constant, node::GridSampled, node::Scaled,
                          node::Sum, node::Regularized, node::SplitPart>;

/// Immutable symbolic description of a drift b(t, x).
class VectorField {
public:
    explicit VectorField(Node n) : node_(std::make_shared<const Node>(std::move(n))) {}

    const Node& node() const { return *node_; }
    int dim() const;
    Vec operator()(double t, const Vec& x) const;

private:
    std::shared_ptr<const Node> node_;
};

// ---- constructors -------------------------------------------------------

inline VectorField hardy(double delta, int dim = 3, double cutoff = 1.0) {
    require(delta >= 0.0, ErrorKind::configuration, "hardy delta must be nonnegative");
    require(cutoff > 0.0, ErrorKind::configuration, "hardy cutoff radius must be positive");
    require(dim >= 1 && dim <= kMaxDim, ErrorKind::configuration, "hardy dimension out of range");
    return VectorField(node::Hardy{delta, dim, cutoff});
}

inline VectorField inv_sqrt_time(double amplitude, Vec direction) {
    const double n = direction.norm();
    require(n > 0.0, ErrorKind::configuration, "inv_sqrt_time direction must be nonzero");
    direction *= 1.0 / n;
    return VectorField(node::InvSqrtTime{amplitude, direction});
}

inline VectorField constant(const Vec& value) { return VectorField(node::Constant{value}); }

inline VectorField zero_field(int dim) { return constant(Vec(dim)); }

inline VectorField grid_sampled(VectorLattice lattice, std::string source = {}) {
    return VectorField(node::GridSampled{std::make_shared<const VectorLattice>(std::move(lattice)), std::move(source)});
}

inline VectorField scaled(double c, const VectorField& inner) {
    return VectorField(node::Scaled{c, std::make_shared<const VectorField>(inner)});
}

inline VectorField sum(std::vector<VectorField> terms) {
    require(!terms.empty(), ErrorKind::configuration, "sum needs at least one term");
    const int d = terms.front().dim();
    for (const auto& t : terms) require(t.dim() == d, ErrorKind::configuration, "sum terms differ in dimension");
    return VectorField(node::Sum{std::move(terms)});
}

/// 1_{|b| <= n} b.
inline VectorField regularize(const VectorField& inner, double n) {
    require(n > 0.0, ErrorKind::configuration, "regularization level must be positive");
    if (std::isinf(n)) return inner;
    return VectorField(node::Regularized{n, std::make_shared<const VectorField>(inner)});
}

/// Returns (singular, bounded) with bounded = 1_{|b| <= bound} b and singular = b - bounded.
inline std::pair<VectorField, VectorField> split_field(const VectorField& spec, double bound) {
    require(bound > 0.0, ErrorKind::configuration, "split bound must be positive");
    auto inner = std::make_shared<const VectorField>(spec);
    return {VectorField(node::SplitPart{node::Role::singular, bound, inner}),
            VectorField(node::SplitPart{node::Role::bounded, bound, inner})};
}

/// b |b|^(-1 + 1/p), zero at b = 0.
inline Vec fractional_power_vector(const Vec& v, double p) {
    require(p > 1.0, ErrorKind::configuration, "fractional power needs p > 1");
    const double n = v.norm();
    if (n == 0.0) return Vec(v.size());
    return std::pow(n, -1.0 + 1.0 / p) * v;
}

/// Coefficient sqrt(delta) (d-2)/2 of the Hardy field.
inline double hardy_coefficient(double delta, int dim) { return std::sqrt(delta) * (dim - 2) / 2.0; }

/// Radius below which |hardy| exceeds n.
inline double hardy_threshold_radius(double delta, int dim, double n) { return hardy_coefficient(delta, dim) / n; }

/// Critical value 4 (d/(d-2))^2 above which no weak solution is expected.
inline double hardy_critical_delta(int dim) {
    require(dim > 2, ErrorKind::configuration, "criticality threshold defined for d >= 3");
    const double r = static_cast<double>(dim) / (dim - 2);
    return 4.0 * r * r;
}

inline bool hardy_supercritical(double delta, int dim) { return dim > 2 && delta > hardy_critical_delta(dim); }

// ---- evaluation ---------------------------------------------------------

namespace detail {

inline Vec eval_grid(const VectorLattice& lat, double t, const Vec& x) {
    const LatticeGrid& g = lat.grid;
    require(x.size() == g.dim, ErrorKind::domain, "query dimension does not match lattice");
    const double eps = 1e-12;
    const int n = g.nodes_per_axis();
    const int nt = g.time_nodes();
    double ut = (t - g.t0) / g.dt;
    require(ut >= -eps && ut <= nt - 1 + eps, ErrorKind::domain, "time outside grid_sampled lattice");
    ut = std::clamp(ut, 0.0, static_cast<double>(nt - 1));
    const int it = std::min(static_cast<int>(std::floor(ut)), nt - 2);
    const double ft = ut - it;
    std::array<int, kMaxDim> base{};
    std::array<double, kMaxDim> frac{};
    for (int a = 0; a < g.dim; ++a) {
        double u = (x[a] + g.half_width) / g.dx;
        require(u >= -eps && u <= n - 1 + eps, ErrorKind::domain, "point outside grid_sampled lattice");
        u = std::clamp(u, 0.0, static_cast<double>(n - 1));
        const int j = std::min(static_cast<int>(std::floor(u)), n - 2);
        base[static_cast<std::size_t>(a)] = j;
        frac[static_cast<std::size_t>(a)] = u - j;
    }
    Vec out(g.dim);
    const int corners = 1 << g.dim;
    for (int ti = 0; ti < 2; ++ti) {
        const double wt = ti ? ft : 1.0 - ft;
        if (wt == 0.0) continue;
        for (int c = 0; c < corners; ++c) {
            double w = wt;
            std::array<int, kMaxDim> idx{};
            for (int a = 0; a < g.dim; ++a) {
                const int bit = (c >> a) & 1;
                idx[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + bit;
                w *= bit ? frac[static_cast<std::size_t>(a)] : 1.0 - frac[static_cast<std::size_t>(a)];
            }
            if (w == 0.0) continue;
            const std::size_t s = g.flatten(idx);
            for (int a = 0; a < g.dim; ++a) out[a] += w * lat.components[static_cast<std::size_t>(a)].at(it + ti, s);
        }
    }
    return out;
}

}  // namespace detail

inline int VectorField::dim() const {
    return std::visit(
        [](const auto& n) -> int {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, node::Hardy>) return n.dim;
            else if constexpr (std::is_same_v<T, node::InvSqrtTime>) return n.direction.size();
            else if constexpr (std::is_same_v<T, node::Constant>) return n.value.size();
            else if constexpr (std::is_same_v<T, node::GridSampled>) return n.lattice->grid.dim;
            else if constexpr (std::is_same_v<T, node::Sum>) return n.terms.front().dim();
            else return n.inner->dim();
        },
        *node_);
}

inline Vec VectorField::operator()(double t, const Vec& x) const {
    return std::visit(
        [&](const auto& n) -> Vec {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, node::Hardy>) {
                const double r2 = x.norm2();
                if (r2 == 0.0 || r2 >= n.cutoff * n.cutoff) return Vec(x.size());
                return (hardy_coefficient(n.delta, n.dim) / r2) * x;
            } else if constexpr (std::is_same_v<T, node::InvSqrtTime>) {
                if (t <= 0.0) return Vec(n.direction.size());
                return (n.amplitude / std::sqrt(t)) * n.direction;
            } else if constexpr (std::is_same_v<T, node::Constant>) {
                return n.value;
            } else if constexpr (std::is_same_v<T, node::GridSampled>) {
                return detail::eval_grid(*n.lattice, t, x);
            } else if constexpr (std::is_same_v<T, node::Scaled>) {
                return n.factor * (*n.inner)(t, x);
            } else if constexpr (std::is_same_v<T, node::Sum>) {
                Vec out = n.terms.front()(t, x);
                for (std::size_t k = 1; k < n.terms.size(); ++k) out += n.terms[k](t, x);
                return out;
            } else if constexpr (std::is_same_v<T, node::Regularized>) {
                Vec v = (*n.inner)(t, x);
                return v.norm() <= n.level ? v : Vec(v.size());
            } else {
                Vec v = (*n.inner)(t, x);
                const bool small = v.norm() <= n.threshold;
                if (n.role == node::Role::bounded) return small ? v : Vec(v.size());
                return small ? Vec(v.size()) : v;
            }
        },
        *node_);
}

inline Vec eval_field(const VectorField& f, double t, const Vec& x) { return f(t, x); }

// ---- structure queries --------------------------------------------------

/// Facts about a field that quadrature and sampling can exploit.
struct Structure {
    bool time_independent = true;
    bool space_independent = true;
    bool contains_grid = false;
    bool identically_zero = false;
    std::optional<Vec> center;        // location of the spatial singularity, if any
    bool radial = false;              // |b| depends only on |x - center|
    std::vector<double> breaks;       // radii about center where |b| may jump
    std::vector<double> singular_times;
    bool bounded = true;              // finite sup known structurally
};

namespace detail {

/// Radii in (1e-9, 1e4) where |inner(r e1 + c)| crosses level.
inline std::vector<double> level_crossings(const VectorField& inner, const Vec& c, double level) {
    const int d = inner.dim();
    auto mag = [&](double r) {
        Vec x = c;
        x[0] += r;
        return inner(0.0, x).norm() - level;
    };
    std::vector<double> out;
    const int samples = 1200;
    const double lo = std::log(1e-9), hi = std::log(1e4);
    double rp = std::exp(lo), fp = mag(rp);
    for (int k = 1; k <= samples; ++k) {
        const double r = std::exp(lo + (hi - lo) * k / samples);
        const double f = mag(r);
        if ((fp > 0.0) != (f > 0.0)) {
            double a = rp, b = r;
            for (int it = 0; it < 200 && b - a > 1e-15 * b; ++it) {
                const double m = 0.5 * (a + b);
                if ((mag(m) > 0.0) == (fp > 0.0)) a = m;
                else b = m;
            }
            out.push_back(0.5 * (a + b));
        }
        rp = r;
        fp = f;
    }
    (void)d;
    return out;
}

inline void merge_sorted(std::vector<double>& a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
}

}  // namespace detail

inline Structure analyze(const VectorField& f) {
    return std::visit(
        [&](const auto& n) -> Structure {
            using T = std::decay_t<decltype(n)>;
            Structure s;
            if constexpr (std::is_same_v<T, node::Hardy>) {
                s.space_independent = false;
                s.identically_zero = n.delta == 0.0;
                if (!s.identically_zero) {
                    s.center = Vec(n.dim);
                    s.radial = true;
                    s.breaks = {n.cutoff};
                    s.bounded = false;
                }
            } else if constexpr (std::is_same_v<T, node::InvSqrtTime>) {
                s.time_independent = n.amplitude == 0.0;
                s.identically_zero = n.amplitude == 0.0;
                if (!s.identically_zero) {
                    s.singular_times = {0.0};
                    s.bounded = false;
                }
            } else if constexpr (std::is_same_v<T, node::Constant>) {
                s.identically_zero = n.value.norm() == 0.0;
            } else if constexpr (std::is_same_v<T, node::GridSampled>) {
                s.time_independent = false;
                s.space_independent = false;
                s.contains_grid = true;
            } else if constexpr (std::is_same_v<T, node::Scaled>) {
                s = analyze(*n.inner);
                if (n.factor == 0.0) {
                    s = Structure{};
                    s.identically_zero = true;
                }
            } else if constexpr (std::is_same_v<T, node::Sum>) {
                s.identically_zero = true;
                bool all_radial = true;
                for (const auto& term : n.terms) {
                    const Structure t = analyze(term);
                    if (t.identically_zero) continue;
                    s.identically_zero = false;
                    s.time_independent &= t.time_independent;
                    s.space_independent &= t.space_independent;
                    s.contains_grid |= t.contains_grid;
                    s.bounded &= t.bounded;
                    detail::merge_sorted(s.singular_times, t.singular_times);
                    if (t.center) {
                        if (!s.center) s.center = t.center;
                        else if (!(*s.center == *t.center)) all_radial = false;
                        detail::merge_sorted(s.breaks, t.breaks);
                    }
                    all_radial &= t.radial;
                }
                s.radial = all_radial && s.center.has_value();
            } else {
                const Structure in = analyze(*n.inner);
                s = in;
                const double level = [&] {
                    if constexpr (std::is_same_v<T, node::Regularized>) return n.level;
                    else return n.threshold;
                }();
                if constexpr (std::is_same_v<T, node::Regularized>) s.bounded = true;
                else if (n.role == node::Role::bounded) s.bounded = true;
                if (in.radial && in.time_independent && in.center)
                    detail::merge_sorted(s.breaks, detail::level_crossings(*n.inner, *in.center, level));
            }
            return s;
        },
        f.node());
}

// ---- JSON ---------------------------------------------------------------

inline nlohmann::json to_json(const VectorField& f) {
    return std::visit(
        [&](const auto& n) -> nlohmann::json {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, node::Hardy>) {
                return {{"kind", "hardy"}, {"delta", n.delta}, {"dimension", n.dim}, {"cutoff_radius", n.cutoff}};
            } else if constexpr (std::is_same_v<T, node::InvSqrtTime>) {
                return {{"kind", "inv_sqrt_time"}, {"amplitude", n.amplitude}, {"direction", n.direction.to_vector()}};
            } else if constexpr (std::is_same_v<T, node::Constant>) {
                return {{"kind", "constant"}, {"value", n.value.to_vector()}};
            } else if constexpr (std::is_same_v<T, node::GridSampled>) {
                return {{"kind", "grid_sampled"}, {"lattice", n.source}};
            } else if constexpr (std::is_same_v<T, node::Scaled>) {
                return {{"kind", "scaled"}, {"factor", n.factor}, {"inner", to_json(*n.inner)}};
            } else if constexpr (std::is_same_v<T, node::Sum>) {
                nlohmann::json terms = nlohmann::json::array();
                for (const auto& t : n.terms) terms.push_back(to_json(t));
                return {{"kind", "sum"}, {"terms", terms}};
            } else if constexpr (std::is_same_v<T, node::Regularized>) {
                return {{"kind", "regularized"}, {"level", n.level}, {"inner", to_json(*n.inner)}};
            } else {
                return {{"kind", "split_part"},
                        {"role", n.role == node::Role::singular ? "singular" : "bounded"},
                        {"threshold", n.threshold},
                        {"inner", to_json(*n.inner)}};
            }
        },
        f.node());
}

/// Parses a field spec; relative lattice paths resolve against base_dir.
inline VectorField from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "hardy")
            return hardy(j.at("delta").get<double>(), j.value("dimension", 3), j.value("cutoff_radius", 1.0));
        if (kind == "inv_sqrt_time")
            return inv_sqrt_time(j.at("amplitude").get<double>(), Vec::from(j.at("direction").get<std::vector<double>>()));
        if (kind == "constant") return constant(Vec::from(j.at("value").get<std::vector<double>>()));
        if (kind == "grid_sampled") {
            const std::string src = j.at("lattice").get<std::string>();
            std::filesystem::path p(src);
            if (p.is_relative()) p = base_dir / p;
            auto comps = read_lattice(p);
            VectorLattice lat(comps.front().grid);
            require(static_cast<int>(comps.size()) == lat.grid.dim, ErrorKind::schema,
                    "grid_sampled lattice must have d components");
            lat.components = std::move(comps);
            return grid_sampled(std::move(lat), src);
        }
        if (kind == "scaled") return scaled(j.at("factor").get<double>(), from_json(j.at("inner"), base_dir));
        if (kind == "sum") {
            std::vector<VectorField> terms;
            for (const auto& t : j.at("terms")) terms.push_back(from_json(t, base_dir));
            return sum(std::move(terms));
        }
        if (kind == "regularized") return regularize(from_json(j.at("inner"), base_dir), j.at("level").get<double>());
        if (kind == "split_part") {
            const std::string role = j.at("role").get<std::string>();
            require(role == "singular" || role == "bounded", ErrorKind::configuration, "unknown split role " + role);
            auto parts = split_field(from_json(j.at("inner"), base_dir), j.at("threshold").get<double>());
            return role == "singular" ? parts.first : parts.second;
        }
        fail(ErrorKind::configuration, "unknown field kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("field spec: ") + e.what());
    }
}

// ---- lattice sampling ---------------------------------------------------

/// Scalar outputs computed from one field value; cell averages are taken per output.
using Functional = std::function<void(const Vec& b, double* out)>;

namespace detail {

struct CubeIntegrator {
    const VectorField& field;
    const Functional& fn;
    int outputs;
    int dim;
    double rel_tol = 1e-7;
    double abs_tol = 1e-12;
    int max_depth = 6;

    // Tensor 3-point Gauss rule over the box [lo, hi].
    void gauss3(double t, const Vec& lo, const Vec& hi, std::vector<double>& acc) const {
        static const double gx[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
        static const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
        std::fill(acc.begin(), acc.end(), 0.0);
        std::vector<double> tmp(static_cast<std::size_t>(outputs));
        int total = 1;
        for (int a = 0; a < dim; ++a) total *= 3;
        double vol = 1.0;
        for (int a = 0; a < dim; ++a) vol *= 0.5 * (hi[a] - lo[a]);
        for (int k = 0; k < total; ++k) {
            Vec x(dim);
            double w = vol;
            int r = k;
            for (int a = 0; a < dim; ++a) {
                const int q = r % 3;
                r /= 3;
                x[a] = 0.5 * (lo[a] + hi[a]) + 0.5 * (hi[a] - lo[a]) * gx[q];
                w *= gw[q];
            }
            fn(field(t, x), tmp.data());
            for (int o = 0; o < outputs; ++o) acc[static_cast<std::size_t>(o)] += w * tmp[static_cast<std::size_t>(o)];
        }
    }

    void adaptive(double t, const Vec& lo, const Vec& hi, const std::vector<double>& whole, int depth,
                  std::vector<double>& out) const {
        const int kids = 1 << dim;
        std::vector<std::vector<double>> parts(static_cast<std::size_t>(kids), std::vector<double>(static_cast<std::size_t>(outputs)));
        std::vector<double> refined(static_cast<std::size_t>(outputs), 0.0);
        std::vector<Vec> klo(static_cast<std::size_t>(kids)), khi(static_cast<std::size_t>(kids));
        for (int c = 0; c < kids; ++c) {
            Vec a(dim), b(dim);
            for (int ax = 0; ax < dim; ++ax) {
                const double mid = 0.5 * (lo[ax] + hi[ax]);
                const bool up = (c >> ax) & 1;
                a[ax] = up ? mid : lo[ax];
                b[ax] = up ? hi[ax] : mid;
            }
            klo[static_cast<std::size_t>(c)] = a;
            khi[static_cast<std::size_t>(c)] = b;
            gauss3(t, a, b, parts[static_cast<std::size_t>(c)]);
            for (int o = 0; o < outputs; ++o) refined[static_cast<std::size_t>(o)] += parts[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
        }
        bool ok = true;
        for (int o = 0; o < outputs; ++o) {
            const double diff = std::abs(refined[static_cast<std::size_t>(o)] - whole[static_cast<std::size_t>(o)]);
            if (diff > abs_tol + rel_tol * std::abs(refined[static_cast<std::size_t>(o)])) ok = false;
        }
        if (ok || depth >= max_depth) {
            for (int o = 0; o < outputs; ++o) out[static_cast<std::size_t>(o)] += refined[static_cast<std::size_t>(o)];
            return;
        }
        for (int c = 0; c < kids; ++c)
            adaptive(t, klo[static_cast<std::size_t>(c)], khi[static_cast<std::size_t>(c)], parts[static_cast<std::size_t>(c)], depth + 1, out);
    }

    // Pyramid (Duffy) decomposition from an interior point p, with radial splits at `breaks`.
    void duffy(double t, const Vec& lo, const Vec& hi, const Vec& p, const std::vector<double>& breaks, int n,
               std::vector<double>& out) const {
        const quad::Rule& rule = quad::gauss_legendre(n);
        std::vector<double> tmp(static_cast<std::size_t>(outputs));
        const int faces = 2 * dim;
        int face_nodes = 1;
        for (int a = 0; a < dim - 1; ++a) face_nodes *= n;
        for (int f = 0; f < faces; ++f) {
            const int axis = f / 2;
            const bool upper = f % 2;
            const double plane = upper ? hi[axis] : lo[axis];
            // Signed height: pyramids over faces turned towards an exterior apex count negatively.
            const double height = upper ? plane - p[axis] : p[axis] - plane;
            if (height == 0.0) continue;
            double face_area = 1.0;
            for (int a = 0; a < dim; ++a)
                if (a != axis) face_area *= hi[a] - lo[a];
            for (int k = 0; k < face_nodes; ++k) {
                Vec y(dim);
                double w = face_area;
                int r = k;
                for (int a = 0; a < dim; ++a) {
                    if (a == axis) {
                        y[a] = plane;
                        continue;
                    }
                    const int q = r % n;
                    r /= n;
                    y[a] = lo[a] + (hi[a] - lo[a]) * 0.5 * (rule.x[static_cast<std::size_t>(q)] + 1.0);
                    w *= 0.5 * rule.w[static_cast<std::size_t>(q)];
                }
                const Vec ray = y - p;
                const double len = ray.norm();
                std::vector<double> cuts{0.0};
                for (double b : breaks)
                    if (b > 0.0 && b < len) cuts.push_back(b / len);
                cuts.push_back(1.0);
                for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
                    const double s0 = cuts[seg], s1 = cuts[seg + 1];
                    // s = s0 + (s1-s0) u^2 grades nodes towards the apex on the first segment.
                    const bool graded = seg == 0;
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
                        const double jac = std::pow(s, dim - 1) * height;
                        const Vec x = p + s * ray;
                        fn(field(t, x), tmp.data());
                        const double ww = w * 0.5 * rule.w[q] * ds * jac;
                        for (int o = 0; o < outputs; ++o) out[static_cast<std::size_t>(o)] += ww * tmp[static_cast<std::size_t>(o)];
                    }
                }
            }
        }
    }

    // Average of the outputs over the cube [lo, hi] at time t.
    std::vector<double> average(double t, const Vec& lo, const Vec& hi, const Structure& st) const {
        std::vector<double> out(static_cast<std::size_t>(outputs), 0.0);
        double vol = 1.0;
        for (int a = 0; a < dim; ++a) vol *= hi[a] - lo[a];
        bool inside = st.center.has_value();
        if (inside)
            for (int a = 0; a < dim; ++a)
                inside &= (*st.center)[a] >= lo[a] && (*st.center)[a] <= hi[a];
        bool crossed = false;
        if (!inside && st.center && st.radial) {
            double near = 0.0, far = 0.0;
            for (int a = 0; a < dim; ++a) {
                const double c = (*st.center)[a];
                const double dn = c < lo[a] ? lo[a] - c : (c > hi[a] ? c - hi[a] : 0.0);
                const double df = std::max(std::abs(c - lo[a]), std::abs(c - hi[a]));
                near += dn * dn;
                far += df * df;
            }
            near = std::sqrt(near);
            far = std::sqrt(far);
            for (double b : st.breaks) crossed |= b > near && b < far;
        }
        if (inside) {
            duffy(t, lo, hi, *st.center, st.breaks, 24, out);
        } else if (crossed) {
            duffy(t, lo, hi, *st.center, st.breaks, 12, out);
        } else {
            std::vector<double> whole(static_cast<std::size_t>(outputs));
            gauss3(t, lo, hi, whole);
            adaptive(t, lo, hi, whole, 1, out);
        }
        for (double& v : out) v /= vol;
        return out;
    }
};

}  // namespace detail

/// Cell averages of the outputs of fn(b) over each lattice cell
/// [t_i +- dt/2] x prod [x_a +- dx/2]. Fields containing lattice data are sampled at nodes.
inline std::vector<ScalarLattice> sample_cell_averages(const VectorField& field, const LatticeGrid& grid,
                                                       int outputs, const Functional& fn) {
    grid.validate();
    require(field.dim() == grid.dim, ErrorKind::shape, "field and grid dimensions differ");
    const Structure st = analyze(field);
    std::vector<ScalarLattice> out(static_cast<std::size_t>(outputs), ScalarLattice(grid));
    const int nt = grid.time_nodes();
    const std::size_t ns = grid.spatial_size();
    if (st.identically_zero) {
        std::vector<double> tmp(static_cast<std::size_t>(outputs));
        fn(Vec(grid.dim), tmp.data());
        for (int o = 0; o < outputs; ++o) std::fill(out[static_cast<std::size_t>(o)].values.begin(), out[static_cast<std::size_t>(o)].values.end(), tmp[static_cast<std::size_t>(o)]);
        return out;
    }
    if (st.contains_grid) {
        std::vector<double> tmp(static_cast<std::size_t>(outputs));
        for (int i = 0; i < nt; ++i)
            for (std::size_t s = 0; s < ns; ++s) {
                fn(field(grid.time(i), grid.point(s)), tmp.data());
                for (int o = 0; o < outputs; ++o) out[static_cast<std::size_t>(o)].at(i, s) = tmp[static_cast<std::size_t>(o)];
            }
        return out;
    }
    detail::CubeIntegrator integ{field, fn, outputs, grid.dim};
    auto spatial_slice = [&](double t, std::vector<std::vector<double>>& dst) {
        dst.assign(ns, {});
        parallel_for(ns, [&](std::size_t s) {
            const Vec x = grid.point(s);
            if (st.space_independent) {
                std::vector<double> v(static_cast<std::size_t>(outputs));
                fn(field(t, x), v.data());
                dst[s] = std::move(v);
                return;
            }
            Vec lo = x, hi = x;
            for (int a = 0; a < grid.dim; ++a) {
                lo[a] -= 0.5 * grid.dx;
                hi[a] += 0.5 * grid.dx;
            }
            dst[s] = integ.average(t, lo, hi, st);
        });
    };
    if (st.time_independent) {
        std::vector<std::vector<double>> slice;
        spatial_slice(grid.t0, slice);
        for (int i = 0; i < nt; ++i)
            for (std::size_t s = 0; s < ns; ++s)
                for (int o = 0; o < outputs; ++o) out[static_cast<std::size_t>(o)].at(i, s) = slice[s][static_cast<std::size_t>(o)];
        return out;
    }
    // Time-dependent: Gauss-Legendre in time per cell, graded away from singular times.
    const int nq = 8;
    const quad::Rule& rule = quad::gauss_legendre(nq);
    std::vector<std::vector<double>> slice;
    for (int i = 0; i < nt; ++i) {
        const double a = grid.time(i) - 0.5 * grid.dt, b = grid.time(i) + 0.5 * grid.dt;
        std::vector<double> cuts{a};
        for (double ts : st.singular_times)
            if (ts > a && ts < b) cuts.push_back(ts);
        cuts.push_back(b);
        std::vector<double> acc(ns * static_cast<std::size_t>(outputs), 0.0);
        for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
            const double c0 = cuts[seg], c1 = cuts[seg + 1];
            const bool grade_left = std::find(st.singular_times.begin(), st.singular_times.end(), c0) != st.singular_times.end() || seg > 0;
            for (std::size_t q = 0; q < rule.x.size(); ++q) {
                const double u = 0.5 * (rule.x[q] + 1.0);
                const double tq = grade_left ? c0 + (c1 - c0) * u * u : c0 + (c1 - c0) * u;
                const double wq = 0.5 * rule.w[q] * (grade_left ? 2.0 * u * (c1 - c0) : (c1 - c0)) / grid.dt;
                spatial_slice(tq, slice);
                for (std::size_t s = 0; s < ns; ++s)
                    for (int o = 0; o < outputs; ++o) acc[s * static_cast<std::size_t>(outputs) + static_cast<std::size_t>(o)] += wq * slice[s][static_cast<std::size_t>(o)];
            }
        }
        for (std::size_t s = 0; s < ns; ++s)
            for (int o = 0; o < outputs; ++o) out[static_cast<std::size_t>(o)].at(i, s) = acc[s * static_cast<std::size_t>(outputs) + static_cast<std::size_t>(o)];
    }
    return out;
}

/// Cell-averaged samples of b itself.
inline VectorLattice sample_field(const VectorField& field, const LatticeGrid& grid) {
    const int d = grid.dim;
    auto comps = sample_cell_averages(field, grid, d, [d](const Vec& b, double* o) {
        for (int a = 0; a < d; ++a) o[a] = b[a];
    });
    VectorLattice out(grid);
    out.components = std::move(comps);
    return out;
}

/// Nodal samples of b (no averaging).
inline VectorLattice sample_field_nodes(const VectorField& field, const LatticeGrid& grid) {
    VectorLattice out(grid);
    for (int i = 0; i < grid.time_nodes(); ++i)
        for (std::size_t s = 0; s < grid.spatial_size(); ++s) {
            const Vec v = field(grid.time(i), grid.point(s));
            for (int a = 0; a < grid.dim; ++a) out.components[static_cast<std::size_t>(a)].at(i, s) = v[a];
        }
    return out;
}

}  // namespace driftlab::fields
