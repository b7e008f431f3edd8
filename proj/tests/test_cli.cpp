#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct ToolResult {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "uqsr_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Runs the command-line tool with the given arguments, capturing both
/// streams and the exit code.
ToolResult run_tool(const std::string& args) {
    static int invocation = 0;
    const fs::path out_path = scratch_root() / ("stdout_" + std::to_string(invocation) + ".txt");
    const fs::path err_path = scratch_root() / ("stderr_" + std::to_string(invocation) + ".txt");
    ++invocation;
    const std::string command = std::string("\"") + UQSR_TOOL + "\" " + args + " >" +
                                out_path.string() + " 2>" + err_path.string();
    const int status = std::system(command.c_str());
    ToolResult result;
    result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out_path);
    result.err = slurp(err_path);
    return result;
}

fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path path = scratch_root() / name;
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path;
}

const std::string kSmokeConfig =
    "experiment = gradcheck\n"
    "hr_height = 2\n"
    "hr_width = 2\n"
    "instances = 3\n"
    "frozen_draws = 200\n"
    "seed = 5\n";

// A reference frame noisier than every other frame inverts the phase-error
// ordering, so the reference-dominates check fails for certain.
const std::string kFailingConfig =
    "experiment = subgrid_study\n"
    "hr_height = 4\n"
    "hr_width = 4\n"
    "instances = 3\n"
    "frames = 4\n"
    "burst.sigma_ref = 0.5\n"
    "burst.sigma_lo = 0.01\n"
    "burst.sigma_hi = 0.01\n"
    "seed = 5\n";

}  // namespace

TEST_CASE("usage problems exit with the bad-config code") {
    CHECK(run_tool("").code == 2);
    CHECK(run_tool("run").code == 2);  // --config is required
    CHECK(run_tool("frobnicate --config x").code == 2);
}

TEST_CASE("a missing config file is an io failure") {
    const ToolResult r = run_tool("run --config " + (scratch_root() / "absent.cfg").string());
    CHECK(r.code == 3);
    CHECK(r.err.find("absent.cfg") != std::string::npos);
}

TEST_CASE("config problems exit with code 2 and name the offender") {
    const fs::path odd = write_config("odd.cfg",
                                      "experiment = gradcheck\n"
                                      "hr_height = 3\n");
    ToolResult r = run_tool("run --config " + odd.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("hr_height") != std::string::npos);

    const fs::path unknown_key = write_config("unknown_key.cfg",
                                              "experiment = gradcheck\n"
                                              "instances = 1\n"
                                              "frozen_drawz = 10\n");
    r = run_tool("run --config " + unknown_key.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("frozen_drawz") != std::string::npos);
    CHECK(r.err.find("line 3") != std::string::npos);

    const fs::path unknown_exp = write_config("unknown_exp.cfg", "experiment = warp_drive\n");
    r = run_tool("run --config " + unknown_exp.string());
    CHECK(r.code == 2);
    CHECK(r.err.find("warp_drive") != std::string::npos);
}

TEST_CASE("a passing run writes results, manifest, and a consistent hash") {
    const fs::path cfg = write_config("smoke.cfg", kSmokeConfig);
    const fs::path out = scratch_root() / "smoke_out";
    const ToolResult r = run_tool("run --config " + cfg.string() + " --out " + out.string());
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    REQUIRE(fs::exists(out / "results.csv"));
    REQUIRE(fs::exists(out / "manifest.txt"));

    const std::string csv = slurp(out / "results.csv");
    REQUIRE(csv.rfind("config_hash,experiment,instance,scope,metric,value\n", 0) == 0);
    CHECK(csv.find("\r") == std::string::npos);

    // Every row carries the same hash, and the manifest records it.
    const std::size_t row_start = csv.find('\n') + 1;
    const std::string hash = csv.substr(row_start, csv.find(',', row_start) - row_start);
    CHECK(hash.size() == 16);
    std::istringstream rows(csv.substr(row_start));
    std::string line;
    int row_count = 0;
    while (std::getline(rows, line)) {
        if (line.empty()) continue;
        CHECK(line.rfind(hash + ",gradcheck,", 0) == 0);
        ++row_count;
    }
    CHECK(row_count == 3 * 5 + 1);  // five gradient ops per instance plus the summary
    const std::string manifest = slurp(out / "manifest.txt");
    CHECK(manifest.find("config_hash: " + hash) != std::string::npos);
    CHECK(manifest.find("status: pass") != std::string::npos);
    CHECK(manifest.find("seed_override: none") != std::string::npos);
    CHECK(manifest.find("results.csv") != std::string::npos);
}

TEST_CASE("results are byte-identical across worker counts") {
    const fs::path cfg = write_config("jobs.cfg",
                                      "experiment = stationarity\n"
                                      "hr_max = 4\n"
                                      "instances = 4\n");
    const fs::path out1 = scratch_root() / "jobs1";
    const fs::path out4 = scratch_root() / "jobs4";
    CHECK(run_tool("run --config " + cfg.string() + " --out " + out1.string() + " --jobs 1").code == 0);
    CHECK(run_tool("run --config " + cfg.string() + " --out " + out4.string() + " --jobs 4").code == 0);
    const std::string csv1 = slurp(out1 / "results.csv");
    const std::string csv4 = slurp(out4 / "results.csv");
    REQUIRE(!csv1.empty());
    CHECK(csv1 == csv4);
}

TEST_CASE("the seed override is recorded and changes the hash") {
    const fs::path cfg = write_config("seed.cfg", kSmokeConfig);
    const fs::path out_a = scratch_root() / "seed_base";
    const fs::path out_b = scratch_root() / "seed_override";
    CHECK(run_tool("run --config " + cfg.string() + " --out " + out_a.string()).code == 0);
    CHECK(run_tool("run --config " + cfg.string() + " --out " + out_b.string() + " --seed 7").code == 0);
    const std::string manifest = slurp(out_b / "manifest.txt");
    CHECK(manifest.find("seed_override: 7") != std::string::npos);

    const auto hash_of = [](const std::string& csv) {
        const std::size_t start = csv.find('\n') + 1;
        return csv.substr(start, csv.find(',', start) - start);
    };
    CHECK(hash_of(slurp(out_a / "results.csv")) != hash_of(slurp(out_b / "results.csv")));
}

TEST_CASE("a failed check exits with code 1 but still writes artifacts") {
    const fs::path cfg = write_config("strict.cfg", kFailingConfig);
    const fs::path out = scratch_root() / "strict_out";
    const ToolResult r = run_tool("run --config " + cfg.string() + " --out " + out.string());
    CHECK(r.code == 1);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(fs::exists(out / "results.csv"));
    const std::string manifest = slurp(out / "manifest.txt");
    CHECK(manifest.find("status: fail") != std::string::npos);
}

TEST_CASE("quiet runs print nothing on success and still report failures") {
    const fs::path cfg = write_config("quiet.cfg", kSmokeConfig);
    const fs::path out = scratch_root() / "quiet_out";
    ToolResult r = run_tool("run --quiet --config " + cfg.string() + " --out " + out.string());
    CHECK(r.code == 0);
    CHECK(r.out.empty());

    const fs::path failing = write_config("quiet_fail.cfg", kFailingConfig);
    r = run_tool("run --quiet --config " + failing.string() + " --out " +
                 (scratch_root() / "quiet_fail_out").string());
    CHECK(r.code == 1);
    CHECK(r.out.empty());
    CHECK(r.err.find("FAIL") != std::string::npos);
}
