#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>

#include "uqsr/config.hpp"
#include "uqsr/errors.hpp"
#include "uqsr/experiments.hpp"

using uqsr::Config;
using uqsr::ConfigError;
using uqsr::csv_field;
using uqsr::IoError;

TEST_CASE("parsing trims whitespace and skips comments and blank lines") {
    Config cfg = Config::parse_text(
        "# experiment settings\n"
        "\n"
        "experiment = gradcheck\n"
        "  noise.b=0.25  \n"
        "\t instances =\t 12 \r\n"
        "flag = true\n"
        "label = left = right\n");
    CHECK(cfg.get_string("experiment") == "gradcheck");
    CHECK(cfg.get_real("noise.b") == 0.25);
    CHECK(cfg.get_int("instances") == 12);
    CHECK(cfg.get_bool("flag", false));
    // Only the first '=' splits the line.
    CHECK(cfg.get_string("label") == "left = right");
    CHECK_NOTHROW(cfg.finish());
}

TEST_CASE("typed getters fall back only when the key is absent") {
    Config cfg = Config::parse_text("present = 3\n");
    CHECK(cfg.get_int("present", 7) == 3);
    CHECK(cfg.get_int("absent", 7) == 7);
    CHECK(cfg.get_real("absent", 1.5) == 1.5);
    CHECK(cfg.get_string("absent", "d") == "d");
    CHECK(cfg.get_u64("absent", 9) == 9);
    CHECK_FALSE(cfg.get_bool("absent", false));
    CHECK_NOTHROW(cfg.finish());
}

TEST_CASE("missing required keys and malformed values are reported with context") {
    Config cfg = Config::parse_text(
        "real = 3.5x\n"
        "int = 7.5\n"
        "bool = yes\n"
        "u64 = -3\n"
        "empty =\n");
    CHECK_THROWS_AS((void)cfg.get_string("nope"), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_real("real"), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_int("int"), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_bool("bool", true), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_u64("u64", 0), ConfigError);
    CHECK_THROWS_AS((void)cfg.get_real("empty"), ConfigError);
    // The error names the key and carries the line number.
    try {
        (void)cfg.get_real("real");
        FAIL("expected ConfigError");
    } catch (const ConfigError& error) {
        CHECK(error.line_number == 1);
        CHECK(std::string(error.what()).find("real") != std::string::npos);
    }
}

TEST_CASE("grammar violations carry their line numbers") {
    try {
        (void)Config::parse_text("good = 1\nno equals sign here\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& error) {
        CHECK(error.line_number == 2);
    }
    CHECK_THROWS_AS((void)Config::parse_text("Upper = 1\n"), ConfigError);
    CHECK_THROWS_AS((void)Config::parse_text("with space = 1\n"), ConfigError);
    CHECK_THROWS_AS((void)Config::parse_text("= 1\n"), ConfigError);
}

TEST_CASE("duplicate keys report both line numbers") {
    try {
        (void)Config::parse_text("a = 1\nb = 2\na = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& error) {
        CHECK(error.line_number == 3);
        const std::string what = error.what();
        CHECK(what.find("duplicate") != std::string::npos);
        CHECK(what.find("line 1") != std::string::npos);
    }
}

TEST_CASE("finish rejects keys no getter consumed") {
    Config cfg = Config::parse_text("used = 1\nmisspelled_optoin = 2\n");
    CHECK(cfg.get_int("used") == 1);
    try {
        cfg.finish();
        FAIL("expected ConfigError");
    } catch (const ConfigError& error) {
        CHECK(error.line_number == 2);
        CHECK(std::string(error.what()).find("misspelled_optoin") != std::string::npos);
    }
    // has() also counts as consumption, whatever the answer.
    Config probed = Config::parse_text("probed = 1\n");
    CHECK(probed.has("probed"));
    CHECK_NOTHROW(probed.finish());
}

TEST_CASE("canonical text is sorted and drives the hash") {
    Config a = Config::parse_text("b = 2\na = 1\n");
    Config b = Config::parse_text("a = 1\nb = 2\n");
    CHECK(a.canonical_text() == "a=1\nb=2\n");
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    for (char c : a.hash()) CHECK(std::isxdigit(static_cast<unsigned char>(c)));

    Config c = Config::parse_text("a = 1\nb = 3\n");
    CHECK(c.hash() != a.hash());
}

TEST_CASE("overrides replace values and change the hash") {
    Config cfg = Config::parse_text("seed = 1\nkeep = x\n");
    const std::string before = cfg.hash();
    cfg.override_value("seed", "2");
    CHECK(cfg.get_u64("seed", 0) == 2);
    CHECK(cfg.hash() != before);
    CHECK(cfg.canonical_text() == "keep=x\nseed=2\n");
    CHECK_THROWS_AS(cfg.override_value("BAD", "1"), ConfigError);
    // Overridden values must still be consumed before finish().
    (void)cfg.get_string("keep");
    CHECK_NOTHROW(cfg.finish());
}

TEST_CASE("parse_file reads disk configs and reports unreadable paths") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "uqsr_config_roundtrip.cfg";
    {
        std::ofstream out(path);
        out << "experiment = prop1\nseed = 42\n";
    }
    Config cfg = Config::parse_file(path.string());
    CHECK(cfg.get_string("experiment") == "prop1");
    CHECK(cfg.get_u64("seed", 0) == 42);
    fs::remove(path);

    CHECK_THROWS_AS((void)Config::parse_file((fs::temp_directory_path() / "uqsr_no_such.cfg").string()),
                    IoError);
}

TEST_CASE("csv fields are quoted exactly when they need to be") {
    CHECK(csv_field("plain") == "plain");
    CHECK(csv_field("") == "");
    CHECK(csv_field("with space") == "with space");
    CHECK(csv_field("a,b") == "\"a,b\"");
    CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(csv_field("two\nlines") == "\"two\nlines\"");
}
