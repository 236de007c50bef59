#include <iostream>

#include <CLI11.hpp>

#include "driftlab/cli.hpp"

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    CLI::App app{"driftlab: parabolic equations and SDEs with singular drift"};
    app.require_subcommand(1);

    std::string config_path, output, run_dir;
    auto* run = app.add_subcommand("run", "run the experiment described by a JSON config");
    run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--output", output, "output directory (overrides the config)");

    auto* report = app.add_subcommand("report", "summarize a run directory into <run>/report/");
    report->add_option("run", run_dir, "run directory")->required();

    auto* schema = app.add_subcommand("schema", "print the config JSON schema");

    CLI11_PARSE(app, argc, argv);

    if (schema->parsed()) {
        std::cout << driftlab::cli::schema().dump(2) << "\n";
        return 0;
    }
    if (report->parsed())
        return driftlab::cli::run({{"command", "report"}, {"run", run_dir}}, fs::current_path());

    try {
        const auto config = driftlab::cli::load_config(config_path);
        const fs::path base = fs::absolute(config_path).parent_path();
        return driftlab::cli::run(config, base, output.empty() ? std::nullopt : std::optional<fs::path>(output));
    } catch (const driftlab::Error& e) {
        std::cerr << e.what() << "\n";
        return driftlab::cli::exit_status(e.kind());
    }
}
