#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/core.hpp"

namespace driftlab {

/// Uniform space-time lattice on [-L, L]^d x [T0, T1].
///
/// The spatial box is treated as one period cell of a torus with period
/// n * dx along each axis; operators that need neighbours wrap around.
struct LatticeGrid {
    int dim = 3;
    double half_width = 2.0;
    double dx = 0.25;
    double t0 = 0.0;
    double t1 = 0.64;
    double dt = 0.01;

    int nodes_per_axis() const { return static_cast<int>(std::lround(2.0 * half_width / dx)) + 1; }
    int time_nodes() const { return static_cast<int>(std::lround((t1 - t0) / dt)) + 1; }
    std::size_t spatial_size() const {
        std::size_t s = 1;
        for (int a = 0; a < dim; ++a) s *= static_cast<std::size_t>(nodes_per_axis());
        return s;
    }
    std::size_t size() const { return spatial_size() * static_cast<std::size_t>(time_nodes()); }
    double period() const { return nodes_per_axis() * dx; }
    double coord(int j) const { return -half_width + j * dx; }
    double time(int i) const { return t0 + i * dt; }
    double cell_volume() const { return std::pow(dx, dim) * dt; }

    /// Spatial multi-index of a flat spatial index (axis 0 slowest).
    std::array<int, kMaxDim> unflatten(std::size_t s) const {
        std::array<int, kMaxDim> idx{};
        const auto n = static_cast<std::size_t>(nodes_per_axis());
        for (int a = dim - 1; a >= 0; --a) {
            idx[static_cast<std::size_t>(a)] = static_cast<int>(s % n);
            s /= n;
        }
        return idx;
    }
    std::size_t flatten(const std::array<int, kMaxDim>& idx) const {
        std::size_t s = 0;
        const int n = nodes_per_axis();
        for (int a = 0; a < dim; ++a) {
            int j = idx[static_cast<std::size_t>(a)] % n;
            if (j < 0) j += n;
            s = s * static_cast<std::size_t>(n) + static_cast<std::size_t>(j);
        }
        return s;
    }
    Vec point(std::size_t s) const {
        const auto idx = unflatten(s);
        Vec x(dim);
        for (int a = 0; a < dim; ++a) x[a] = coord(idx[static_cast<std::size_t>(a)]);
        return x;
    }

    void validate() const {
        require(dim >= 1 && dim <= kMaxDim, ErrorKind::configuration, "grid dimension out of range");
        require(dx > 0.0 && dt > 0.0, ErrorKind::configuration, "grid steps must be positive");
        require(half_width > 0.0, ErrorKind::configuration, "half width must be positive");
        const double nx = 2.0 * half_width / dx;
        require(std::abs(nx - std::round(nx)) < 1e-9 * std::max(1.0, nx), ErrorKind::configuration,
                "2L/dx must be an integer");
        const double nt = (t1 - t0) / dt;
        require(std::abs(nt - std::round(nt)) < 1e-9 * std::max(1.0, nt), ErrorKind::configuration,
                "(T1 - T0)/dt must be an integer");
        require(nodes_per_axis() >= 9, ErrorKind::configuration, "need at least 9 nodes per spatial axis");
        require(time_nodes() >= 9, ErrorKind::configuration, "need at least 9 time nodes");
    }

    std::string fingerprint() const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "d=%d;L=%.17g;dx=%.17g;t0=%.17g;t1=%.17g;dt=%.17g", dim, half_width,
                      dx, t0, t1, dt);
        return buf;
    }

    friend bool operator==(const LatticeGrid& a, const LatticeGrid& b) {
        return a.dim == b.dim && a.half_width == b.half_width && a.dx == b.dx && a.t0 == b.t0 &&
               a.t1 == b.t1 && a.dt == b.dt;
    }
};

/// Scalar values on every node, time-major then axis 0..d-1.
struct ScalarLattice {
    LatticeGrid grid;
    std::vector<double> values;

    ScalarLattice() = default;
    explicit ScalarLattice(const LatticeGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}

    std::size_t slice_size() const { return grid.spatial_size(); }
    double* slice(int i) { return values.data() + static_cast<std::size_t>(i) * slice_size(); }
    const double* slice(int i) const { return values.data() + static_cast<std::size_t>(i) * slice_size(); }
    double& at(int i, std::size_t s) { return values[static_cast<std::size_t>(i) * slice_size() + s]; }
    double at(int i, std::size_t s) const { return values[static_cast<std::size_t>(i) * slice_size() + s]; }

    ScalarLattice& operator+=(const ScalarLattice& o) {
        for (std::size_t k = 0; k < values.size(); ++k) values[k] += o.values[k];
        return *this;
    }
    ScalarLattice& operator-=(const ScalarLattice& o) {
        for (std::size_t k = 0; k < values.size(); ++k) values[k] -= o.values[k];
        return *this;
    }
    ScalarLattice& operator*=(double c) {
        for (double& v : values) v *= c;
        return *this;
    }
};

/// d-component lattice stored component by component.
struct VectorLattice {
    LatticeGrid grid;
    std::vector<ScalarLattice> components;

    VectorLattice() = default;
    explicit VectorLattice(const LatticeGrid& g) : grid(g), components(static_cast<std::size_t>(g.dim), ScalarLattice(g)) {}

    Vec at(int i, std::size_t s) const {
        Vec v(grid.dim);
        for (int a = 0; a < grid.dim; ++a) v[a] = components[static_cast<std::size_t>(a)].at(i, s);
        return v;
    }
};

inline void require_same_grid(const LatticeGrid& a, const LatticeGrid& b, const char* what) {
    require(a == b, ErrorKind::shape, std::string("lattice shape mismatch in ") + what);
}

/// Lattice L^p norm (sum |h|^p dt dx^d)^(1/p); p = infinity gives the max.
inline double lattice_norm(const ScalarLattice& h, double p) {
    if (std::isinf(p)) {
        double m = 0.0;
        for (double v : h.values) m = std::max(m, std::abs(v));
        return m;
    }
    double scale = 0.0;
    for (double v : h.values) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return 0.0;
    std::vector<double> terms(h.values.size());
    for (std::size_t k = 0; k < terms.size(); ++k) terms[k] = std::pow(std::abs(h.values[k]) / scale, p);
    return scale * std::pow(pairwise_sum(terms) * h.grid.cell_volume(), 1.0 / p);
}

inline double lattice_inner(const ScalarLattice& a, const ScalarLattice& b) {
    require_same_grid(a.grid, b.grid, "inner product");
    std::vector<double> terms(a.values.size());
    for (std::size_t k = 0; k < terms.size(); ++k) terms[k] = a.values[k] * b.values[k];
    return pairwise_sum(terms) * a.grid.cell_volume();
}

inline ScalarLattice lattice_dot(const VectorLattice& a, const VectorLattice& b) {
    require_same_grid(a.grid, b.grid, "dot product");
    ScalarLattice out(a.grid);
    for (int c = 0; c < a.grid.dim; ++c) {
        const auto& x = a.components[static_cast<std::size_t>(c)].values;
        const auto& y = b.components[static_cast<std::size_t>(c)].values;
        for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] += x[k] * y[k];
    }
    return out;
}

inline nlohmann::json grid_to_json(const LatticeGrid& g) {
    return {{"dimension", g.dim}, {"half_width", g.half_width}, {"dx", g.dx},
            {"t0", g.t0},         {"t1", g.t1},                 {"dt", g.dt}};
}

inline LatticeGrid grid_from_json(const nlohmann::json& j) {
    LatticeGrid g;
    try {
        g.dim = j.at("dimension").get<int>();
        g.half_width = j.at("half_width").get<double>();
        g.dx = j.at("dx").get<double>();
        g.t0 = j.at("t0").get<double>();
        g.t1 = j.at("t1").get<double>();
        g.dt = j.at("dt").get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("grid: ") + e.what());
    }
    g.validate();
    return g;
}

namespace detail {

inline void write_le_doubles(std::ofstream& out, const std::vector<double>& xs) {
    static_assert(sizeof(double) == 8);
    std::vector<unsigned char> buf(xs.size() * 8);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(xs[k]);
        for (int b = 0; b < 8; ++b) buf[k * 8 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<double> read_le_doubles(std::ifstream& in, std::size_t count) {
    std::vector<unsigned char> buf(count * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(static_cast<std::size_t>(in.gcount()) == buf.size(), ErrorKind::io, "lattice payload truncated");
    std::vector<double> xs(count);
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[k * 8 + static_cast<std::size_t>(b)]) << (8 * b);
        xs[k] = std::bit_cast<double>(bits);
    }
    return xs;
}

}  // namespace detail

/// Writes <stem>.bin (little-endian float64, time-major, component last) and <stem>.json.
/// Returns the sidecar path.
inline std::filesystem::path write_lattice(const std::filesystem::path& stem, const LatticeGrid& grid,
                                           const std::vector<const ScalarLattice*>& comps,
                                           const nlohmann::json& extra = nlohmann::json::object()) {
    const std::filesystem::path bin = stem.string() + ".bin";
    const std::filesystem::path side = stem.string() + ".json";
    const std::size_t nc = comps.size();
    std::vector<double> flat(grid.size() * nc);
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (std::size_t c = 0; c < nc; ++c) flat[k * nc + c] = comps[c]->values[k];
    std::ofstream out(bin, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot open " + bin.string());
    detail::write_le_doubles(out, flat);

    std::vector<int> shape{grid.time_nodes()};
    for (int a = 0; a < grid.dim; ++a) shape.push_back(grid.nodes_per_axis());
    if (nc > 1) shape.push_back(static_cast<int>(nc));
    nlohmann::json header = {
        {"format", "driftlab-lattice"},
        {"version", 1},
        {"dtype", "float64"},
        {"endianness", "little"},
        {"order", "row-major, time-major, component last"},
        {"components", nc},
        {"shape", shape},
        {"payload", bin.filename().string()},
        {"grid", grid_to_json(grid)},
    };
    for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
    std::ofstream js(side);
    require(static_cast<bool>(js), ErrorKind::io, "cannot open " + side.string());
    js << header.dump(2) << "\n";
    return side;
}

inline std::filesystem::path write_lattice(const std::filesystem::path& stem, const ScalarLattice& h,
                                           const nlohmann::json& extra = nlohmann::json::object()) {
    return write_lattice(stem, h.grid, {&h}, extra);
}

inline std::filesystem::path write_lattice(const std::filesystem::path& stem, const VectorLattice& h,
                                           const nlohmann::json& extra = nlohmann::json::object()) {
    std::vector<const ScalarLattice*> comps;
    for (const auto& c : h.components) comps.push_back(&c);
    return write_lattice(stem, h.grid, comps, extra);
}

/// Reads a lattice from its JSON sidecar; returns one ScalarLattice per component.
inline std::vector<ScalarLattice> read_lattice(const std::filesystem::path& sidecar) {
    std::ifstream js(sidecar);
    require(static_cast<bool>(js), ErrorKind::io, "cannot open " + sidecar.string());
    nlohmann::json header;
    try {
        js >> header;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, "lattice header: " + std::string(e.what()));
    }
    require(header.value("format", "") == "driftlab-lattice", ErrorKind::schema, "not a lattice header");
    require(header.value("endianness", "") == "little" && header.value("dtype", "") == "float64",
            ErrorKind::schema, "unsupported lattice encoding");
    const LatticeGrid grid = grid_from_json(header.at("grid"));
    const auto nc = header.at("components").get<std::size_t>();
    const auto bin = sidecar.parent_path() / header.at("payload").get<std::string>();
    std::ifstream in(bin, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + bin.string());
    const auto flat = detail::read_le_doubles(in, grid.size() * nc);
    std::vector<ScalarLattice> out(nc, ScalarLattice(grid));
    for (std::size_t k = 0; k < grid.size(); ++k)
        for (std::size_t c = 0; c < nc; ++c) out[c].values[k] = flat[k * nc + c];
    return out;
}

}  // namespace driftlab
