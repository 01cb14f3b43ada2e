#include <CLI11.hpp>

#include <iostream>

#include "gossipvar/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"gossipvar: gossip / federated learning simulator with variance-corrected averaging"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    auto* run = app.add_subcommand("run", "run an experiment described by a config file");
    run->add_option("config", config_path, "experiment config (JSON with comments)")->required();
    run->add_option("-o,--out", out_dir, "output directory (overrides output.directory)");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "render SVG charts for a finished run");
    report->add_option("run_dir", report_dir, "run output directory")->required();

    std::string dir_a, dir_b, compare_out = "compare.json";
    auto* compare = app.add_subcommand("compare", "compare convergence milestones of two runs");
    compare->add_option("run_a", dir_a, "baseline run directory")->required();
    compare->add_option("run_b", dir_b, "candidate run directory")->required();
    compare->add_option("-o,--out", compare_out, "where to write compare.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : gossipvar::kExitInvalid;
    }

    if (*run) {
        std::optional<std::filesystem::path> override;
        if (!out_dir.empty()) override = out_dir;
        return gossipvar::cmd_run(config_path, std::cout, std::cerr, override);
    }
    if (*report) return gossipvar::cmd_report(report_dir, std::cout, std::cerr);
    return gossipvar::cmd_compare(dir_a, dir_b, compare_out, std::cout, std::cerr);
}
