#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "uqsr/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"uqsr: reconstruction-risk experiments driven by key=value configs"};
    app.require_subcommand(1);

    uqsr::RunOptions options;
    CLI::App* run = app.add_subcommand("run", "run one experiment and write its artifacts");
    run->add_option("--config", options.config_path, "experiment config file (key = value lines)")
        ->required();
    run->add_option("--out", options.out_dir, "output directory (default: out)");
    run->add_option("--jobs", options.jobs, "worker threads; 0 keeps the library default")
        ->check(CLI::NonNegativeNumber);
    run->add_flag("--quiet", options.quiet, "suppress progress output");
    std::uint64_t seed = 0;
    CLI::Option* seed_opt =
        run->add_option("--seed", seed, "override the config's seed for this run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& error) {
        // Usage problems share the bad-config exit code; --help exits cleanly.
        const int code = app.exit(error);
        return code == 0 ? 0 : 2;
    }

    options.have_seed_override = seed_opt->count() > 0;
    options.seed_override = seed;
    return uqsr::run_experiment(options);
}
