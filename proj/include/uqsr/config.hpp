#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uqsr/errors.hpp"

namespace uqsr {

/// Flat key=value configuration with strict validation.
///
/// Grammar (line oriented):
///   - blank lines and lines whose first non-space character is '#' are
///     ignored;
///   - every other line must be `key = value`; the first '=' splits the
///     line, surrounding whitespace is trimmed on both sides;
///   - keys are lowercase words from [a-z0-9_.], e.g. `noise.b`;
///   - duplicate keys are an error (both line numbers are reported).
///
/// Typed access goes through the get_* methods, which parse the stored
/// string strictly (the whole token must be consumed).  Every key that is
/// read or probed is marked as used; finish() then rejects any key that no
/// getter ever asked for, so misspelled options fail loudly instead of
/// silently falling back to defaults.
class Config {
 public:
    Config() = default;

    /// Parse a file from disk.  Throws IoError if the file cannot be read
    /// and ConfigError (with a line number) on grammar violations.
    static Config parse_file(const std::string& path);

    /// Parse configuration text directly (used by tests).
    static Config parse_text(const std::string& text);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& fallback);

    double get_real(const std::string& key);
    double get_real(const std::string& key, double fallback);

    long get_int(const std::string& key);
    long get_int(const std::string& key, long fallback);

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);

    bool get_bool(const std::string& key, bool fallback);

    /// Insert or replace a value after parsing (command-line overrides).
    void override_value(const std::string& key, const std::string& value);

    /// Reject any key that was never consumed by a getter.  Call once after
    /// an experiment has pulled everything it understands.
    void finish() const;

    /// The configuration in canonical form: sorted `key=value` lines, one
    /// per entry, '\n' separated.  Overrides are included, so two runs hash
    /// equal exactly when they received identical effective settings.
    std::string canonical_text() const;

    /// FNV-1a (64-bit) over canonical_text(), rendered as 16 hex digits.
    std::string hash() const;

 private:
    struct Entry {
        std::string value;
        int line = 0;          // 0 for values injected via override_value
        mutable bool used = false;
    };

    const Entry& require(const std::string& key) const;

    std::map<std::string, Entry> entries_;
};

}  // namespace uqsr
