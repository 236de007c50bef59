// Acceptance runner: `acceptance <id> [artifact_dir]`, one PASS/FAIL line per criterion.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "driftlab/checks.hpp"

using namespace driftlab;
namespace fs = std::filesystem;

namespace {

checks::Check c01() {
    return checks::kernel_normalization(checks::kernel_grid(), {0.5, 1.0, 1.5, 2.0}, {1.0, 4.0});
}

checks::Check c02() {
    return checks::semigroup_composition(checks::kernel_grid(), {{0.5, 0.5}, {0.5, 1.0}, {1.0, 1.0}}, {1.0, 4.0});
}

checks::Check c03() { return checks::zero_drift_degeneration({3, 2.0, 0.25, 0.0, 0.64, 0.02}); }

checks::Check c04() {
    return checks::gate_behavior(fields::hardy(0.04, 3, 1.0), checks::kernel_grid(), 2.0, {1.0, 4.0, 16.0, 64.0}, 64, 20240601);
}

checks::Check c05() { return checks::oracle_equivalence(fields::hardy(0.04, 3, 1.0), 2.0, checks::kernel_grid(), 1.0); }

checks::Check c06() { return checks::morrey_properties(3); }

checks::Check c07() { return checks::weight_inequalities({0.01, 0.1}, {2.0, 4.0}); }

checks::Check c08a() {
    return checks::rho_fin(fields::constant(Vec{1.0, 0.0, 0.0}), 1.5, 12.0, {1.0, 1.0, Vec(3)}, 1.0, 1e-2, false,
                           "rho_fin exponent, constant f");
}

checks::Check c08b() {
    return checks::rho_fin(fields::hardy(0.04, 3, 1.0), 1.5, 12.0, {1.0, 1.0, Vec(3)}, 1.0 / 3.0, 0.1, true,
                           "rho_fin exponent, Hardy f");
}

checks::Check c09() { return checks::sde_baseline(3, 100000, 1e-3, 1.0, 11); }

checks::Check c10() {
    const auto ens = checks::hardy_ensemble(10000, 1e-4, 5);
    return checks::krylov(ens, fields::hardy(0.04, 3, 1.0), {0.025, 0.05, 0.1, 0.2});
}

checks::Check c11() { return checks::martingale(checks::hardy_ensemble(10000, 1e-4, 5), {0.25, 0.5, 1.0}); }

checks::Check c12() {
    return checks::law_propagator(fields::hardy(0.04, 3, 1.0), 10.0, Vec{0.2, 0.0, 0.0}, 0.2, 0.3, 100000, 3,
                                  {0.25, 0.01, 0.01}, {0.125, 0.005, 0.005});
}

checks::Check c13() {
    // Fine enough that the smallest threshold radius spans several cells.
    const LatticeGrid g{3, 0.25, 1.0 / 64.0, 0.0, 64.0 / 4096.0, 1.0 / 4096.0};
    return checks::approximation_gaps(fields::hardy(0.04, 3, 1.0), g, {2.0, 5.0, 10.0, 20.0}, 2.0, 1.0, 0.05, 16, 20240601);
}

const std::map<std::string, std::function<checks::Check()>>& registry() {
    static const std::map<std::string, std::function<checks::Check()>> r{
        {"01", c01}, {"02", c02}, {"03", c03}, {"04", c04},   {"05", c05},   {"06", c06}, {"07", c07},
        {"08a", c08a}, {"08b", c08b}, {"09", c09}, {"10", c10}, {"11", c11}, {"12", c12}, {"13", c13}};
    return r;
}

std::string artifact_bytes(const checks::Check& c) { return checks::to_json(c).dump(2) + "\n"; }

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

int report(const std::string& id, bool pass, const std::string& name, const std::string& summary) {
    std::printf("[%s] %s %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), name.c_str(), summary.c_str());
    std::fflush(stdout);
    return pass ? 0 : 1;
}

// Reruns every criterion and compares against the artifact left by its own test, producing one if absent.
int reproducibility(const fs::path& dir) {
    std::string mismatched;
    int compared = 0;
    for (const auto& [id, fn] : registry()) {
        const fs::path p = dir / (id + ".json");
        if (!fs::exists(p)) write_file(p, artifact_bytes(fn()));
        const std::string before = read_file(p);
        const std::string again = artifact_bytes(fn());
        ++compared;
        if (before != again) mismatched += (mismatched.empty() ? "" : ", ") + id;
        std::printf("  %s %s\n", id.c_str(), before == again ? "identical" : "differs");
        std::fflush(stdout);
    }
    const bool pass = mismatched.empty();
    return report("14", pass, "reproducibility",
                  std::to_string(compared) + " artifacts rerun, " +
                      (pass ? std::string("all byte-identical") : "mismatched: " + mismatched));
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <id|all> [artifact_dir]\n");
        return 2;
    }
    const std::string id = argv[1];
    const fs::path dir = argc > 2 ? fs::path(argv[2]) : fs::path("acceptance_artifacts");
    fs::create_directories(dir);
    try {
        if (id == "14") return reproducibility(dir);
        if (id == "all") {
            int failures = 0;
            for (const auto& [k, fn] : registry()) {
                const checks::Check c = fn();
                write_file(dir / (k + ".json"), artifact_bytes(c));
                failures += report(k, c.pass, c.name, c.summary);
            }
            failures += reproducibility(dir);
            return failures == 0 ? 0 : 1;
        }
        const auto it = registry().find(id);
        if (it == registry().end()) {
            std::fprintf(stderr, "unknown criterion %s\n", id.c_str());
            return 2;
        }
        const checks::Check c = it->second();
        write_file(dir / (id + ".json"), artifact_bytes(c));
        return report(id, c.pass, c.name, c.summary);
    } catch (const std::exception& e) {
        return report(id, false, "error", e.what());
    }
}
