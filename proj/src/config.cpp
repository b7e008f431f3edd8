#include "uqsr/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace uqsr {

namespace {

std::string trim(const std::string& s) {
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

bool valid_key(const std::string& key) {
    if (key.empty()) return false;
    for (char c : key) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
        if (!ok) return false;
    }
    return true;
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw IoError("failed reading config file: " + path);
    return parse_text(buffer.str());
}

Config Config::parse_text(const std::string& text) {
    Config config;
    std::istringstream in(text);
    std::string raw;
    int line_number = 0;
    while (std::getline(in, raw)) {
        ++line_number;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected `key = value`, got \"" + line + "\"", line_number);
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) {
            throw ConfigError("invalid key \"" + key + "\" (allowed: [a-z0-9_.])", line_number);
        }
        auto [it, inserted] = config.entries_.emplace(key, Entry{value, line_number, false});
        if (!inserted) {
            throw ConfigError("duplicate key \"" + key + "\" (first set on line " +
                                  std::to_string(it->second.line) + ")",
                              line_number);
        }
    }
    return config;
}

bool Config::has(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    it->second.used = true;
    return true;
}

const Config::Entry& Config::require(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("missing required key \"" + key + "\"");
    it->second.used = true;
    return it->second;
}

std::string Config::get_string(const std::string& key) { return require(key).value; }

std::string Config::get_string(const std::string& key, const std::string& fallback) {
    return has(key) ? require(key).value : fallback;
}

double Config::get_real(const std::string& key) {
    const Entry& entry = require(key);
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(entry.value.c_str(), &end);
    if (entry.value.empty() || end != entry.value.c_str() + entry.value.size() || errno == ERANGE) {
        throw ConfigError("key \"" + key + "\": cannot parse \"" + entry.value + "\" as a real number",
                          entry.line);
    }
    return value;
}

double Config::get_real(const std::string& key, double fallback) {
    return has(key) ? get_real(key) : fallback;
}

long Config::get_int(const std::string& key) {
    const Entry& entry = require(key);
    errno = 0;
    char* end = nullptr;
    const long value = std::strtol(entry.value.c_str(), &end, 10);
    if (entry.value.empty() || end != entry.value.c_str() + entry.value.size() || errno == ERANGE) {
        throw ConfigError("key \"" + key + "\": cannot parse \"" + entry.value + "\" as an integer",
                          entry.line);
    }
    return value;
}

long Config::get_int(const std::string& key, long fallback) {
    return has(key) ? get_int(key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Entry& entry = require(key);
    errno = 0;
    char* end = nullptr;
    const unsigned long long value = std::strtoull(entry.value.c_str(), &end, 10);
    if (entry.value.empty() || end != entry.value.c_str() + entry.value.size() ||
        errno == ERANGE || entry.value[0] == '-') {
        throw ConfigError("key \"" + key + "\": cannot parse \"" + entry.value +
                              "\" as an unsigned integer",
                          entry.line);
    }
    return static_cast<std::uint64_t>(value);
}

bool Config::get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Entry& entry = require(key);
    if (entry.value == "true" || entry.value == "1") return true;
    if (entry.value == "false" || entry.value == "0") return false;
    throw ConfigError("key \"" + key + "\": expected true/false/1/0, got \"" + entry.value + "\"",
                      entry.line);
}

void Config::override_value(const std::string& key, const std::string& value) {
    if (!valid_key(key)) throw ConfigError("invalid override key \"" + key + "\"");
    entries_[key] = Entry{value, 0, false};
}

void Config::finish() const {
    for (const auto& [key, entry] : entries_) {
        if (!entry.used) {
            throw ConfigError("unknown key \"" + key + "\"", entry.line);
        }
    }
}

std::string Config::canonical_text() const {
    std::string out;
    for (const auto& [key, entry] : entries_) {  // std::map iterates in key order
        out += key;
        out += '=';
        out += entry.value;
        out += '\n';
    }
    return out;
}

std::string Config::hash() const {
    const std::string text = canonical_text();
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string hex(16, '0');
    for (int i = 15; i >= 0; --i) {
        hex[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return hex;
}

}  // namespace uqsr
