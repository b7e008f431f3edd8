#pragma once

#include <cstdint>
#include <string>

namespace uqsr {

/// Command-line invocation of one experiment run.
struct RunOptions {
    std::string config_path;
    std::string out_dir = "out";
    bool quiet = false;            // suppress progress output (failures still go to stderr)
    int jobs = 0;                  // worker threads; 0 leaves the library default
    bool have_seed_override = false;
    std::uint64_t seed_override = 0;
};

/// Runs the experiment named by the config's `experiment` key and writes
/// results.csv, manifest.txt, and any rasters under out_dir.  Returns the
/// process exit code: 0 every check passed, 1 a check failed, 2 the
/// configuration is invalid, 3 an I/O or internal failure.
int run_experiment(const RunOptions& options);

/// RFC-4180 CSV quoting: the field is quoted iff it contains a comma, quote,
/// or newline; embedded quotes are doubled.  Exposed for tests.
std::string csv_field(const std::string& raw);

}  // namespace uqsr
