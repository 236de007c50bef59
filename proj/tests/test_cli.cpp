#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "driftlab/cli.hpp"

using namespace driftlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "driftlab_cli_test" / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json classify_config() {
    return {{"command", "classify"},
            {"field", {{"kind", "hardy"}, {"delta", 1}, {"dimension", 3}}},
            {"params", {{"q", {1.2, 1.5, 2.0}}}},
            {"sampling", {{"r_min", 0.125}, {"r_max", 2}, {"anchor_half", 0.5}, {"anchor_step", 0.25}, {"times", {0}}}}};
}

int run_quiet(const json& c, const fs::path& out) {
    std::ostringstream err;
    return cli::run(c, fs::current_path(), out, err);
}

}  // namespace

TEST(Cli, NumbersRoundTrip) {
    for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0}) {
        const std::string s = cli::num(v);
        double back = 0.0;
        std::from_chars(s.data(), s.data() + s.size(), back);
        EXPECT_EQ(back, v);
    }
    EXPECT_EQ(cli::num(0.5), "0.5");
}

TEST(Cli, ConfigHashIgnoresOutput) {
    json a = classify_config(), b = classify_config();
    a["output"] = "x";
    b["output"] = "y";
    EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
    b["seed"] = 3;
    EXPECT_NE(cli::config_hash(a), cli::config_hash(b));
}

TEST(Cli, SchemaViolationsExitTwo) {
    json c = classify_config();
    c["bogus"] = 1;
    EXPECT_EQ(run_quiet(c, scratch("bogus")), 2);
    c = classify_config();
    c["command"] = "launch";
    EXPECT_EQ(run_quiet(c, scratch("launch")), 2);
    c = classify_config();
    c["sampling"]["r_min"] = -1;
    EXPECT_EQ(run_quiet(c, scratch("rmin")), 2);
}

TEST(Cli, PublishedSchemaMatchesEmbedded) {
    std::ifstream in(fs::path(DRIFTLAB_SOURCE_DIR) / "docs" / "config.schema.json");
    ASSERT_TRUE(in);
    EXPECT_EQ(json::parse(in), cli::schema());
}

TEST(Cli, ClassifyWritesHashedArtifactsAndIsReproducible) {
    const fs::path out = scratch("classify");
    ASSERT_EQ(run_quiet(classify_config(), out), 0);
    const std::string hash = cli::config_hash(classify_config());
    const auto t = cli::read_csv(out / "classify.csv");
    EXPECT_EQ(t.header.back(), "config_hash");
    ASSERT_EQ(t.rows.size(), 3u);
    double prev = 0.0;
    for (const auto& r : t.rows) {
        EXPECT_EQ(r.back(), hash);
        const double v = std::stod(r[1]);
        EXPECT_GE(v, prev);
        prev = v;
    }
    const std::string first = slurp(out / "manifest.json");
    ASSERT_EQ(run_quiet(classify_config(), out), 0);
    EXPECT_EQ(slurp(out / "manifest.json"), first);
    EXPECT_TRUE(fs::exists(out / "data_dictionary.csv"));
}

TEST(Cli, ForeignOutputDirectoryRefused) {
    const fs::path out = scratch("foreign");
    ASSERT_EQ(run_quiet(classify_config(), out), 0);
    json c = classify_config();
    c["params"]["q"] = {1.5};
    EXPECT_EQ(run_quiet(c, out), 2);
}

TEST(Cli, ReportRequiresManifest) {
    const fs::path dir = scratch("empty");
    fs::create_directories(dir);
    std::ostringstream err;
    EXPECT_EQ(cli::run({{"command", "report"}, {"run", dir.string()}}, fs::current_path(), std::nullopt, err), 2);
}

TEST(Cli, ReportRefusesMixedHashes) {
    const fs::path out = scratch("mixed");
    ASSERT_EQ(run_quiet(classify_config(), out), 0);
    std::ostringstream err;
    const json rep = {{"command", "report"}, {"run", out.string()}};
    std::ostringstream sink;
    auto* old = std::cout.rdbuf(sink.rdbuf());
    EXPECT_EQ(cli::run(rep, fs::current_path(), std::nullopt, err), 0);
    std::cout.rdbuf(old);
    EXPECT_TRUE(fs::exists(out / "report" / "summary.txt"));
    const auto collated = cli::read_csv(out / "report" / "classify.csv");
    EXPECT_EQ(collated.header[0], "run");
    EXPECT_EQ(collated.header[1], "command");
    fs::remove_all(out / "report");
    std::ofstream(out / "stray.csv") << "x,config_hash\n1,0123456789abcdef\n";
    EXPECT_EQ(cli::run(rep, fs::current_path(), std::nullopt, err), 2);
}

TEST(Cli, GateRefusalExitsThreeWithoutSolution) {
    const json c = {{"command", "solve"},
                    {"seed", 7},
                    {"field", {{"kind", "hardy"}, {"delta", 100}, {"dimension", 3}}},
                    {"grid", {{"dimension", 3}, {"half_width", 2.0}, {"dx", 0.25}, {"t0", 0.0}, {"t1", 0.32}, {"dt", 0.02}}},
                    {"params", {{"p", 2}, {"lambda", 1}, {"gate_probes", 16}}},
                    {"source", {{"kind", "bump"}}}};
    const fs::path out = scratch("refused");
    EXPECT_EQ(run_quiet(c, out), 3);
    EXPECT_TRUE(fs::exists(out / "gate_report.json"));
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    EXPECT_FALSE(fs::exists(out / "u.bin"));
}

TEST(Cli, VerifyMorreySuitePasses) {
    const fs::path out = scratch("verify");
    testing::internal::CaptureStdout();
    EXPECT_EQ(run_quiet({{"command", "verify"}, {"suite", "morrey"}}, out), 0);
    EXPECT_NE(testing::internal::GetCapturedStdout().find("[PASS] morrey"), std::string::npos);
    const json m = json::parse(slurp(out / "manifest.json"));
    for (const auto& a : m.at("artifacts")) EXPECT_NE(a.at("path").get<std::string>(), "timings.log");
}

TEST(Cli, ExitStatusMapping) {
    EXPECT_EQ(cli::exit_status(ErrorKind::schema), 2);
    EXPECT_EQ(cli::exit_status(ErrorKind::io), 2);
    EXPECT_EQ(cli::exit_status(ErrorKind::gate_refused), 3);
    EXPECT_EQ(cli::exit_status(ErrorKind::divergence), 4);
    EXPECT_EQ(cli::exit_status(ErrorKind::domain), 1);
}
