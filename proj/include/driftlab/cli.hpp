#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlab/checks.hpp"

namespace driftlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline const json& module_versions() {
    static const json v = {{"fields", "1.0.0"}, {"morrey", "1.0.0"}, {"potentials", "1.0.0"},
                           {"solver", "1.0.0"}, {"sde", "1.0.0"},    {"cli", "1.0.0"}};
    return v;
}

inline const char* kSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "driftlab experiment config",
  "type": "object",
  "required": ["command"],
  "additionalProperties": false,
  "properties": {
    "command": {"enum": ["classify", "solve", "propagate", "simulate", "verify", "report"]},
    "output": {"type": "string", "description": "run directory; not part of the config hash"},
    "run": {"type": "string", "description": "run directory to summarize (report only)"},
    "seed": {"type": "integer", "minimum": 0},
    "field": {"type": "object", "required": ["kind"],
              "description": "drift spec: hardy, inv_sqrt_time, constant, grid_sampled, scaled, sum, regularized, split_part"},
    "grid": {
      "type": "object",
      "required": ["dimension", "half_width", "dx", "t0", "t1", "dt"],
      "additionalProperties": false,
      "properties": {
        "dimension": {"type": "integer", "minimum": 1, "maximum": 6},
        "half_width": {"type": "number", "exclusiveMinimum": 0},
        "dx": {"type": "number", "exclusiveMinimum": 0},
        "t0": {"type": "number"},
        "t1": {"type": "number"},
        "dt": {"type": "number", "exclusiveMinimum": 0}
      }
    },
    "params": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "p": {"type": "number", "exclusiveMinimum": 1},
        "q": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 1}},
        "l": {"type": "number", "exclusiveMinimum": 0},
        "lambda": {"type": "number", "minimum": 0},
        "max_terms": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "gate_probes": {"type": "integer", "minimum": 1},
        "gate_sweep": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "level": {"type": "number", "exclusiveMinimum": 0},
        "levels": {"type": "array", "minItems": 2, "items": {"type": "number", "exclusiveMinimum": 0}},
        "force": {"type": "boolean"}
      }
    },
    "source": {
      "type": "object",
      "required": ["kind"],
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["manufactured", "bump", "constant"]},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "value": {"type": "number"}
      }
    },
    "terminal": {
      "type": "object",
      "required": ["kind"],
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["gaussian"]},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "r": {"type": "number"}
      }
    },
    "sampling": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "r_min": {"type": "number", "exclusiveMinimum": 0},
        "r_max": {"type": "number", "exclusiveMinimum": 0},
        "anchor_half": {"type": "number", "minimum": 0},
        "anchor_step": {"type": "number", "exclusiveMinimum": 0},
        "times": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "nodes": {"type": "integer", "minimum": 8}
      }
    },
    "simulation": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "x0": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "paths": {"type": "integer", "minimum": 2},
        "level": {"type": "number", "exclusiveMinimum": 0},
        "noise_refinement": {"type": "integer", "minimum": 1},
        "windows": {"type": "array", "minItems": 3, "items": {"type": "number", "exclusiveMinimum": 0}},
        "krylov_level": {"type": "number", "exclusiveMinimum": 0},
        "checkpoints": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "tail_radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}
      }
    },
    "suite": {"enum": ["kernels", "morrey", "solver", "sde", "all"]}
  }
})json";

inline const json& schema() {
    static const json s = json::parse(kSchema);
    return s;
}

// ---- schema validation (the keyword subset used by kSchema) -----------------------

inline bool has_type(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    if (t == "null") return v.is_null();
    return false;
}

inline void validate(const json& v, const json& s, const std::string& path = "$") {
    auto bad = [&](const std::string& why) { fail(ErrorKind::schema, path + ": " + why); };
    if (s.contains("type") && !has_type(v, s["type"].get<std::string>())) bad("expected " + s["type"].get<std::string>());
    if (s.contains("enum")) {
        bool found = false;
        for (const auto& e : s["enum"]) found = found || e == v;
        if (!found) bad("value " + v.dump() + " not in " + s["enum"].dump());
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (s.contains("minimum") && x < s["minimum"].get<double>()) bad("below minimum " + s["minimum"].dump());
        if (s.contains("maximum") && x > s["maximum"].get<double>()) bad("above maximum " + s["maximum"].dump());
        if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>())
            bad("must exceed " + s["exclusiveMinimum"].dump());
    }
    if (v.is_object()) {
        if (s.contains("required"))
            for (const auto& k : s["required"])
                if (!v.contains(k.get<std::string>())) bad("missing required key '" + k.get<std::string>() + "'");
        const json props = s.value("properties", json::object());
        for (auto it = v.begin(); it != v.end(); ++it) {
            if (props.contains(it.key())) validate(it.value(), props[it.key()], path + "." + it.key());
            else if (s.contains("additionalProperties") && !s["additionalProperties"].get<bool>())
                bad("unknown key '" + it.key() + "'");
        }
    }
    if (v.is_array()) {
        if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
            bad("needs at least " + s["minItems"].dump() + " items");
        if (s.contains("items"))
            for (std::size_t k = 0; k < v.size(); ++k) validate(v[k], s["items"], path + "[" + std::to_string(k) + "]");
    }
}

/// Hash of the config without its location keys, so reruns into other directories agree.
inline std::string config_hash(const json& config) {
    json c = config;
    c.erase("output");
    c.erase("run");
    return hex64(fnv1a(c.dump()));
}

// ---- artifacts ------------------------------------------------------------------

inline std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string num(std::int64_t v) { return std::to_string(v); }
inline std::string num(int v) { return std::to_string(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }
inline std::string num(bool v) { return v ? "1" : "0"; }

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

struct Column {
    std::string name, unit, description;
};

class Run {
public:
    Run(fs::path dir, json config) : dir_(std::move(dir)), config_(std::move(config)), hash_(config_hash(config_)) {}

    const fs::path& dir() const { return dir_; }
    const std::string& hash() const { return hash_; }
    const json& config() const { return config_; }
    json& seeds() { return seeds_; }

    void prepare() {
        fs::create_directories(dir_);
        const fs::path m = dir_ / "manifest.json";
        if (!fs::exists(m)) return;
        std::ifstream in(m);
        json old;
        try {
            in >> old;
        } catch (const json::exception&) {
            fail(ErrorKind::io, "unreadable manifest in " + dir_.string());
        }
        require(old.value("config_hash", "") == hash_, ErrorKind::configuration,
                "output directory " + dir_.string() + " belongs to a run with another config");
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream out(dir_ / name, std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write " + (dir_ / name).string());
        out << text;
        artifacts_.insert(name);
    }

    void write_json(const std::string& name, json j) {
        j["config_hash"] = hash_;
        write_text(name, j.dump(2) + "\n");
    }

    void write_csv(const std::string& name, const std::vector<Column>& cols, const std::vector<std::vector<std::string>>& rows) {
        std::string text;
        for (std::size_t c = 0; c < cols.size(); ++c) text += cols[c].name + ",";
        text += "config_hash\n";
        for (const auto& r : rows) {
            require(r.size() == cols.size(), ErrorKind::shape, "csv row width mismatch in " + name);
            for (const auto& cell : r) text += csv_escape(cell) + ",";
            text += hash_ + "\n";
        }
        write_text(name, text);
        for (const auto& c : cols) dictionary_.push_back({name, c.name, c.unit, c.description});
        dictionary_.push_back({name, "config_hash", "", "FNV-1a hash of the run config"});
    }

    void write_lattice(const std::string& stem, const ScalarLattice& h) {
        driftlab::write_lattice(dir_ / stem, h, {{"config_hash", hash_}});
        artifacts_.insert(stem + ".bin");
        artifacts_.insert(stem + ".json");
    }

    /// Writes data_dictionary.csv and manifest.json; call last.
    void finish(int status) {
        if (!dictionary_.empty()) {
            std::string text = "file,column,unit,description\n";
            for (const auto& d : dictionary_) text += d.file + "," + d.column + "," + csv_escape(d.unit) + "," + csv_escape(d.description) + "\n";
            write_text("data_dictionary.csv", text);
        }
        json arts = json::array();
        for (const auto& a : artifacts_) {
            std::ifstream in(dir_ / a, std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            arts.push_back({{"path", a}, {"fnv1a", hex64(fnv1a(ss.str()))}});
        }
        json cfg = config_;
        cfg.erase("output");
        const json m = {{"format", "driftlab-manifest"}, {"version", 1},     {"command", config_.at("command")},
                        {"config_hash", hash_},          {"config", cfg},    {"module_versions", module_versions()},
                        {"seeds", seeds_},               {"status", status}, {"artifacts", arts}};
        std::ofstream out(dir_ / "manifest.json", std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest");
        out << m.dump(2) << "\n";
    }

private:
    struct Entry {
        std::string file, column, unit, description;
    };
    fs::path dir_;
    json config_;
    std::string hash_;
    json seeds_ = json::object();
    std::set<std::string> artifacts_;
    std::vector<Entry> dictionary_;
};

// ---- config accessors -----------------------------------------------------------

inline json section(const json& c, const char* key) { return c.contains(key) ? c.at(key) : json::object(); }

inline fields::VectorField field_of(const json& c, const fs::path& base) {
    require(c.contains("field"), ErrorKind::schema, "$: missing required key 'field'");
    return fields::from_json(c.at("field"), base);
}

inline LatticeGrid grid_of(const json& c) {
    require(c.contains("grid"), ErrorKind::schema, "$: missing required key 'grid'");
    return grid_from_json(c.at("grid"));
}

inline solver::SolveOptions solve_options(const json& c) {
    const json p = section(c, "params");
    solver::SolveOptions o;
    o.max_terms = p.value("max_terms", o.max_terms);
    o.tol = p.value("tol", o.tol);
    o.gate_probes = p.value("gate_probes", o.gate_probes);
    o.force = p.value("force", false);
    o.seed = c.value("seed", std::uint64_t{1});
    return o;
}

inline std::vector<std::string> row(std::initializer_list<std::string> xs) { return xs; }

inline void write_terms(Run& run, const solver::SolveReport& rep) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < rep.term_norms.size(); ++k)
        rows.push_back({num(k), num(rep.term_norms[k]), k == 0 ? std::string() : num(rep.ratios[k - 1])});
    run.write_csv("terms.csv",
                  {{"k", "", "Neumann term index"},
                   {"term_norm", "", "L^p norm of the k-th series term"},
                   {"ratio", "", "term_norm[k] / term_norm[k-1]"}},
                  rows);
}

// ---- commands ----------------------------------------------------------------------

inline int cmd_classify(Run& run, const fs::path& base) {
    const json& c = run.config();
    const fields::VectorField f = field_of(c, base);
    const json p = section(c, "params"), s = section(c, "sampling");
    const std::vector<double> qs = p.value("q", std::vector<double>{1.2, 1.5, 2.0});
    morrey::CylinderSampling samp = checks::standard_sampling(
        f.dim(), s.value("r_min", 0.125), s.value("r_max", 2.0), s.value("anchor_half", 0.5), s.value("anchor_step", 0.25),
        s.value("times", std::vector<double>{0.0}));
    samp.nodes = s.value("nodes", 8);
    samp.seed = c.value("seed", std::uint64_t{0});
    run.seeds()["sampling"] = samp.seed;
    std::vector<std::vector<std::string>> rows;
    json est = json::array();
    double prev = -INFINITY;
    bool monotone = true;
    for (double q : qs) {
        const auto e = morrey::morrey_norm(f, q, samp);
        const auto m = morrey::elliptic_morrey_norm(f, q, samp);
        monotone = monotone && e.value >= prev;
        prev = e.value;
        rows.push_back({num(q), num(e.value), num(m.value), e.kind, num(e.argmax_radius), num(e.argmax_anchor.t),
                        num(e.evaluated)});
        est.push_back({{"q", q}, {"parabolic", morrey::to_json(e)}, {"elliptic", morrey::to_json(m)}});
    }
    run.write_csv("classify.csv",
                  {{"q", "", "Morrey exponent"},
                   {"norm", "velocity x length", "sampled E_q norm, sup over cylinders of r (mean |b|^q)^(1/q)"},
                   {"elliptic_norm", "velocity x length", "sampled M_q norm over balls at the anchor times"},
                   {"kind", "", "estimate kind (sampled sup is a lower bound)"},
                   {"argmax_radius", "length", "radius of the maximizing cylinder"},
                   {"argmax_t", "time", "start time of the maximizing cylinder"},
                   {"evaluated", "", "number of cylinders evaluated"}},
                  rows);
    json out = {{"field", fields::to_json(f)}, {"estimates", est}, {"monotone_in_q", monotone}};
    if (p.contains("p")) {
        const double l = p.value("l", INFINITY);
        const auto lps = morrey::lps_classify(f, p.at("p").get<double>(), l);
        out["lps"] = {{"p", p.at("p")}, {"l", std::isinf(l) ? json("inf") : json(l)}, {"exponent", lps.exponent},
                      {"class", morrey::to_string(lps.cls)}, {"membership_claim_valid", lps.membership_claim_valid}};
    }
    const json fj = fields::to_json(f);
    if (fj.at("kind") == "hardy") {
        const double delta = fj.at("delta").get<double>();
        const int d = fj.at("dimension").get<int>();
        out["hardy"] = {{"critical_delta", fields::hardy_critical_delta(d)},
                        {"supercritical", fields::hardy_supercritical(delta, d)}};
    }
    run.write_json("classify.json", out);
    return 0;
}

inline ScalarLattice source_of(const json& c, const fields::VectorField& b, double lambda, const LatticeGrid& g,
                               std::optional<ScalarLattice>& exact) {
    const json s = c.contains("source") ? c.at("source") : json{{"kind", "manufactured"}};
    const std::string kind = s.at("kind").get<std::string>();
    if (kind == "manufactured") {
        const auto m = solver::manufactured_for(g, s.value("sigma", 0.35));
        exact = solver::sample_exact(m, g);
        return solver::sample_source(m, b, lambda, g);
    }
    if (kind == "constant") return ScalarLattice(g, s.value("value", 1.0));
    const solver::TestBump bump = solver::stock_bumps(g).front();
    return solver::sample(g, [&](double t, const Vec& x) { return bump(t, x); });
}

inline int cmd_solve(Run& run, const fs::path& base) {
    const json& c = run.config();
    const json p = section(c, "params");
    const LatticeGrid g = grid_of(c);
    fields::VectorField b = field_of(c, base);
    if (p.contains("level")) b = fields::regularize(b, p.at("level").get<double>());
    const double pp = p.value("p", 2.0), lambda = p.value("lambda", 1.0);
    const solver::SolveOptions opt = solve_options(c);
    run.seeds()["gate"] = opt.seed;
    auto coef = std::make_shared<potentials::DriftCoefficients>(potentials::sample_coefficients(b, g, pp));

    if (p.contains("gate_sweep")) {
        std::vector<std::vector<std::string>> rows;
        double prev = INFINITY;
        for (double l : p.at("gate_sweep").get<std::vector<double>>()) {
            const potentials::DriftOperators ops(coef, l);
            const auto r = potentials::probe_operator_norm([&](const ScalarLattice& h) { return ops.T(h); }, "T_p", pp, l,
                                                           g, opt.gate_probes, opt.seed);
            rows.push_back({num(l), num(r.max_ratio), r.kind, num(r.probes), num(r.seed), num(r.max_ratio < prev)});
            prev = r.max_ratio;
        }
        run.write_csv("gate_sweep.csv",
                      {{"lambda", "1/time", "resolvent parameter"},
                       {"gate", "", "probed lower bound of |T_p|_{p->p}"},
                       {"kind", "", "estimate kind"},
                       {"probes", "", "probe inputs"},
                       {"seed", "", "probe seed"},
                       {"decreasing", "", "1 when the gate is strictly below the previous row"}},
                      rows);
    }

    std::optional<ScalarLattice> exact;
    const ScalarLattice f = source_of(c, b, lambda, g, exact);
    solver::SolveReport rep;
    try {
        rep = solver::neumann_solve(coef, f, lambda, opt);
    } catch (const solver::GateRefusal& e) {
        run.write_json("gate_report.json", {{"refused", true}, {"probe", potentials::to_json(e.report)}});
        throw;
    }
    run.write_lattice("u", rep.u);
    write_terms(run, rep);
    json out = solver::to_json(rep);
    out["field"] = fields::to_json(b);
    out["grid"] = grid_to_json(g);
    out["residual"] = solver::to_json(solver::pde_residual(rep.u, fields::sample_field_nodes(b, g), f, lambda, pp));
    if (exact) {
        ScalarLattice e = rep.u;
        e -= *exact;
        out["manufactured_error"] = {{"p_norm", lattice_norm(e, pp)}, {"sup", lattice_norm(e, INFINITY)}};
    }
    if (p.contains("levels")) {
        const auto rows = solver::approximation_convergence(field_of(c, base), &f, nullptr, g.t0, pp, lambda,
                                                            p.at("levels").get<std::vector<double>>(), opt);
        std::vector<std::vector<std::string>> cells;
        for (const auto& r : rows) cells.push_back({num(r.n_from), num(r.n_to), num(r.p_gap), num(r.sup_gap), num(r.gate)});
        run.write_csv("convergence.csv",
                      {{"n_from", "velocity", "coarser regularization level"},
                       {"n_to", "velocity", "finer regularization level"},
                       {"p_gap", "", "L^p norm of u_{n_to} - u_{n_from}"},
                       {"sup_gap", "", "sup norm of u_{n_to} - u_{n_from}"},
                       {"gate", "", "probed gate at n_to"}},
                      cells);
    }
    run.write_json("solve.json", out);
    return 0;
}

inline int cmd_propagate(Run& run, const fs::path& base) {
    const json& c = run.config();
    const json p = section(c, "params");
    const LatticeGrid g = grid_of(c);
    fields::VectorField b = field_of(c, base);
    if (p.contains("level")) b = fields::regularize(b, p.at("level").get<double>());
    const json term = c.contains("terminal") ? c.at("terminal") : json{{"kind", "gaussian"}};
    const double sigma = term.value("sigma", 0.3), r = term.value("r", g.t0);
    potentials::SpatialLattice g0(g);
    for (std::size_t s = 0; s < g.spatial_size(); ++s) g0.values[s] = std::exp(-0.5 * g.point(s).norm2() / (sigma * sigma));
    const double pp = p.value("p", 2.0), lambda = p.value("lambda", 1.0);
    const solver::SolveOptions opt = solve_options(c);
    run.seeds()["gate"] = opt.seed;
    solver::SolveReport rep;
    try {
        rep = solver::cauchy_propagate(b, g0, r, pp, lambda, opt);
    } catch (const solver::GateRefusal& e) {
        run.write_json("gate_report.json", {{"refused", true}, {"probe", potentials::to_json(e.report)}});
        throw;
    }
    run.write_lattice("v", rep.u);
    write_terms(run, rep);
    json out = solver::to_json(rep);
    out["field"] = fields::to_json(b);
    out["grid"] = grid_to_json(g);
    out["initial"] = {{"kind", "gaussian"}, {"sigma", sigma}, {"r", r}};
    run.write_json("propagate.json", out);
    return 0;
}

inline sde::EulerConfig euler_of(const json& c, int dim) {
    const json s = section(c, "simulation");
    sde::EulerConfig e;
    e.x0 = s.contains("x0") ? Vec::from(s.at("x0").get<std::vector<double>>()) : Vec(dim);
    e.horizon = s.value("horizon", 1.0);
    e.dt = s.value("dt", 1e-3);
    e.paths = s.value("paths", std::size_t{10000});
    e.seed = c.value("seed", std::uint64_t{1});
    e.level = s.value("level", INFINITY);
    e.noise_refinement = s.value("noise_refinement", 1);
    return e;
}

inline int cmd_simulate(Run& run, const fs::path& base) {
    const json& c = run.config();
    const json s = section(c, "simulation");
    const fields::VectorField b = field_of(c, base);
    const sde::EulerConfig cfg = euler_of(c, b.dim());
    run.seeds()["paths"] = cfg.seed;
    const auto ens = sde::simulate(cfg, b);
    json out = {{"ensemble", sde::summary_json(ens)}, {"field", fields::to_json(b)}};

    const auto windows = s.value("windows", std::vector<double>{0.025, 0.05, 0.1, 0.2});
    const double k_level = s.value("krylov_level", std::isinf(cfg.level) ? 10.0 : cfg.level);
    const auto fit = sde::krylov_fit(ens, b, k_level, windows);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t k = 0; k < fit.windows.size(); ++k)
        rows.push_back({num(fit.windows[k]), num(fit.estimates[k]), num(fit.stderrs[k]), num(fit.C), num(fit.gamma),
                        num(fit.gamma_lo), num(fit.gamma_hi), num(fit.r2)});
    run.write_csv("krylov.csv",
                  {{"h", "time", "window length"},
                   {"estimate", "length", "mean occupation integral of |b_k| over the window"},
                   {"stderr", "length", "batch-means standard error"},
                   {"C", "", "fitted prefactor of C h^gamma"},
                   {"gamma", "", "fitted exponent"},
                   {"gamma_lo", "", "95% confidence bound, lower"},
                   {"gamma_hi", "", "95% confidence bound, upper"},
                   {"r2", "", "coefficient of determination of the log-log fit"}},
                  rows);
    out["krylov"] = sde::to_json(fit);

    if (s.contains("checkpoints") && !s.at("checkpoints").empty()) {
        const auto rep = sde::martingale_residual(ens, sde::stock_test_functions(cfg.x0),
                                                  s.at("checkpoints").get<std::vector<double>>());
        std::vector<std::vector<std::string>> mr;
        for (const auto& r : rep.rows)
            mr.push_back({num(r.function), num(r.r), num(r.mean.value), num(r.mean.stderr_), num(r.z)});
        run.write_csv("martingale.csv",
                      {{"function", "", "stock test function index"},
                       {"r", "time", "checkpoint"},
                       {"mean", "", "sample mean of M_r^f"},
                       {"stderr", "", "batch-means standard error"},
                       {"z", "", "|mean| / stderr"}},
                      mr);
        out["martingale"] = sde::to_json(rep);
    }
    const auto radii = s.value("tail_radii", std::vector<double>{1.0, 2.0, 4.0, 8.0});
    std::vector<std::vector<std::string>> tr;
    for (double R : radii) tr.push_back({num(R), num(sde::tail_mass(ens, R))});
    run.write_csv("tail.csv",
                  {{"R", "length", "radius"}, {"mass", "", "fraction of paths with sup |X_t - x0| >= R"}}, tr);
    run.write_json("simulate.json", out);
    return 0;
}

struct SuiteResult {
    std::string suite;
    checks::Check check;
    double seconds = 0.0;
};

inline std::vector<SuiteResult> run_suite(const std::string& suite, const fields::VectorField& b, const json& c) {
    std::vector<SuiteResult> out;
    const std::uint64_t seed = c.value("seed", std::uint64_t{1});
    auto timed = [&](const std::string& name, const std::function<checks::Check()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        checks::Check chk = fn();
        out.push_back({name, std::move(chk), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    };
    const bool all = suite == "all";
    const double pp = section(c, "params").value("p", 2.0);
    if (all || suite == "kernels") {
        timed("kernels", [] { return checks::kernel_normalization(checks::kernel_grid(), {0.5, 1.0, 1.5, 2.0}, {1.0, 4.0}); });
        timed("kernels", [] {
            return checks::semigroup_composition(checks::kernel_grid(), {{0.5, 0.5}, {0.5, 1.0}, {1.0, 1.0}}, {1.0, 4.0});
        });
    }
    if (all || suite == "morrey") timed("morrey", [] { return checks::morrey_properties(3); });
    if (all || suite == "solver") {
        timed("solver", [] { return checks::zero_drift_degeneration({3, 2.0, 0.25, 0.0, 0.64, 0.02}); });
        timed("solver", [&] { return checks::gate_behavior(b, checks::kernel_grid(), pp, {1.0, 4.0, 16.0, 64.0}, 16, seed); });
        timed("solver", [] { return checks::weight_inequalities({0.01, 0.1}, {2.0, 4.0}); });
    }
    if (all || suite == "sde") {
        timed("sde", [&] { return checks::sde_baseline(b.dim(), 20000, 1e-3, 1.0, seed); });
        timed("sde", [&] {
            sde::EulerConfig cfg = euler_of(c, b.dim());
            if (!c.contains("simulation")) {
                cfg.paths = 4000;
                cfg.dt = 1e-3;
            }
            return checks::martingale(sde::simulate(cfg, b), {0.25, 0.5, 1.0});
        });
    }
    return out;
}

inline int cmd_verify(Run& run, const fs::path& base) {
    const json& c = run.config();
    const std::string suite = c.value("suite", "all");
    const fields::VectorField b = c.contains("field") ? field_of(c, base) : fields::zero_field(3);
    require(b.dim() == 3, ErrorKind::configuration, "verify suites run in dimension 3");
    run.seeds()["suite"] = c.value("seed", std::uint64_t{1});
    const auto results = run_suite(suite, b, c);
    std::vector<std::vector<std::string>> rows;
    json arr = json::array();
    std::string timings;
    bool pass = true;
    for (const auto& r : results) {
        pass = pass && r.check.pass;
        rows.push_back({r.suite, r.check.name, num(r.check.pass), r.check.summary});
        json j = checks::to_json(r.check);
        j["suite"] = r.suite;
        arr.push_back(j);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-8s %-28s %8.2f s\n", r.suite.c_str(), r.check.name.c_str(), r.seconds);
        timings += buf;
        std::printf("[%s] %s / %s: %s\n", r.check.pass ? "PASS" : "FAIL", r.suite.c_str(), r.check.name.c_str(),
                    r.check.summary.c_str());
        std::fflush(stdout);
    }
    run.write_csv("verify.csv",
                  {{"suite", "", "suite name"},
                   {"check", "", "property check"},
                   {"pass", "", "1 when the check passed"},
                   {"summary", "", "measured values against limits"}},
                  rows);
    run.write_json("verify.json", {{"suite", suite}, {"pass", pass}, {"checks", arr}});
    // Wall-clock is not a reproducible artifact, so it stays out of the manifest.
    std::ofstream(run.dir() / "timings.log") << timings;
    return pass ? 0 : 1;
}

// ---- report ------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char ch = line[k];
        if (quoted) {
            if (ch == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                cur += '"';
                ++k;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvTable read_csv(const fs::path& p) {
    std::ifstream in(p);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + p.string());
    CsvTable t;
    std::string line;
    if (std::getline(in, line)) t.header = split_csv_line(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split_csv_line(line));
    return t;
}

/// Hashes claimed by an artifact (JSON key or CSV column); empty when it carries none.
inline std::set<std::string> claimed_hashes(const fs::path& p) {
    std::set<std::string> out;
    if (p.extension() == ".json") {
        std::ifstream in(p);
        json j;
        try {
            in >> j;
        } catch (const json::exception&) {
            fail(ErrorKind::io, "unreadable artifact " + p.string());
        }
        if (j.is_object() && j.contains("config_hash")) out.insert(j.at("config_hash").get<std::string>());
    } else if (p.extension() == ".csv") {
        const CsvTable t = read_csv(p);
        for (std::size_t c = 0; c < t.header.size(); ++c)
            if (t.header[c] == "config_hash")
                for (const auto& r : t.rows)
                    if (c < r.size()) out.insert(r[c]);
    }
    return out;
}

inline int cmd_report(const fs::path& run_dir) {
    const fs::path mpath = run_dir / "manifest.json";
    require(fs::exists(mpath), ErrorKind::io, "no manifest.json in " + run_dir.string());
    json m;
    {
        std::ifstream in(mpath);
        try {
            in >> m;
        } catch (const json::exception&) {
            fail(ErrorKind::schema, "unreadable manifest in " + run_dir.string());
        }
    }
    require(m.value("format", "") == "driftlab-manifest", ErrorKind::schema, "not a driftlab manifest");
    const std::string hash = m.at("config_hash").get<std::string>();
    for (const auto& e : fs::directory_iterator(run_dir)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        for (const auto& h : claimed_hashes(e.path()))
            require(h == hash, ErrorKind::configuration,
                    "mixed run directory: " + e.path().filename().string() + " carries config hash " + h + ", manifest " + hash);
    }
    for (const auto& a : m.at("artifacts"))
        require(fs::exists(run_dir / a.at("path").get<std::string>()), ErrorKind::io,
                "artifact listed in manifest is missing: " + a.at("path").get<std::string>());

    const fs::path out = run_dir / "report";
    fs::create_directories(out);
    std::ostringstream txt;
    txt << "run: " << run_dir.filename().string() << "\n"
        << "command: " << m.at("command").get<std::string>() << "\n"
        << "config hash: " << hash << "\n"
        << "status: " << m.value("status", -1) << "\n"
        << "seeds: " << m.at("seeds").dump() << "\n";
    for (const char* table : {"gate_sweep", "krylov", "convergence", "verify", "classify", "martingale", "tail", "terms"}) {
        const fs::path src = run_dir / (std::string(table) + ".csv");
        if (!fs::exists(src)) continue;
        const CsvTable t = read_csv(src);
        std::string flat = "run,command";
        for (const auto& h : t.header) flat += "," + h;
        flat += "\n";
        for (const auto& r : t.rows) {
            flat += csv_escape(run_dir.filename().string()) + "," + m.at("command").get<std::string>();
            for (const auto& cell : r) flat += "," + csv_escape(cell);
            flat += "\n";
        }
        std::ofstream(out / (std::string(table) + ".csv"), std::ios::binary) << flat;
        txt << "\n" << table << " (" << t.rows.size() << " rows)\n";
        for (const auto& r : t.rows) {
            txt << " ";
            for (std::size_t c = 0; c + 1 < r.size() && c < t.header.size(); ++c) txt << " " << t.header[c] << "=" << r[c];
            txt << "\n";
        }
    }
    const fs::path gate = run_dir / "gate_report.json";
    if (fs::exists(gate)) {
        std::ifstream in(gate);
        json g;
        in >> g;
        txt << "\ngate refused: probed |T_p| = " << num(g.at("probe").at("max_ratio").get<double>()) << " at lambda "
            << num(g.at("probe").at("lambda").get<double>()) << "\n";
    }
    std::ofstream(out / "summary.txt", std::ios::binary) << txt.str();
    std::cout << txt.str();
    return 0;
}

// ---- entry -------------------------------------------------------------------------

inline int exit_status(ErrorKind k) {
    switch (k) {
        case ErrorKind::schema:
        case ErrorKind::configuration:
        case ErrorKind::io: return 2;
        case ErrorKind::gate_refused: return 3;
        case ErrorKind::divergence:
        case ErrorKind::numerical: return 4;
        default: return 1;
    }
}

inline json load_config(const fs::path& p) {
    std::ifstream in(p);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::schema, std::string("config is not valid JSON: ") + e.what());
    }
}

/// Runs one config; relative paths inside it resolve against base_dir. Returns the exit status.
inline int run(json config, const fs::path& base_dir, const std::optional<fs::path>& output = std::nullopt,
               std::ostream& err = std::cerr) {
    std::optional<Run> r;
    try {
        validate(config, schema());
        const std::string command = config.at("command").get<std::string>();
        if (command == "report") {
            require(config.contains("run"), ErrorKind::schema, "$: report needs 'run'");
            fs::path rd = config.at("run").get<std::string>();
            if (rd.is_relative()) rd = base_dir / rd;
            return cmd_report(rd);
        }
        fs::path dir = output ? *output : fs::path(config.value("output", ""));
        require(!dir.empty(), ErrorKind::schema, "$: missing required key 'output'");
        r.emplace(dir, config);
        r->prepare();
        int status = 0;
        if (command == "classify") status = cmd_classify(*r, base_dir);
        else if (command == "solve") status = cmd_solve(*r, base_dir);
        else if (command == "propagate") status = cmd_propagate(*r, base_dir);
        else if (command == "simulate") status = cmd_simulate(*r, base_dir);
        else status = cmd_verify(*r, base_dir);
        r->finish(status);
        return status;
    } catch (const Error& e) {
        err << e.what() << "\n";
        const int status = exit_status(e.kind());
        if (r && (status == 3 || status == 4)) r->finish(status);
        return status;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace driftlab::cli
