#include "cwgf/config.hpp"

#include <climits>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cwgf/errors.hpp"

namespace cwgf {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& text, int line, const std::string& field) {
    const std::string t = trim(text);
    if (t.empty())
        throw ConfigError("empty numeric value", line, field);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size())
        throw ConfigError("invalid numeric value '" + t + "'", line, field);
    return v;
}

long long parse_integer(const std::string& text, int line, const std::string& field) {
    const std::string t = trim(text);
    if (t.empty())
        throw ConfigError("empty integer value", line, field);
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (end != t.c_str() + t.size())
        throw ConfigError("invalid integer value '" + t + "'", line, field);
    return v;
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> parts;
    std::string current;
    for (char ch : text) {
        if (ch == ',') {
            parts.push_back(current);
            current.clear();
        } else {
            current += ch;
        }
    }
    parts.push_back(current);
    return parts;
}

} // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str());
}

Config Config::parse_string(const std::string& text) {
    Config config;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("unterminated section header", line_no, line);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("empty section name", line_no, line);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected 'key = value'", line_no, line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("empty key", line_no, line);
        if (section.empty())
            throw ConfigError("key outside of any [section]", line_no, key);
        const std::string dotted = section + "." + key;
        auto [it, inserted] = config.entries_.try_emplace(dotted, Entry{value, line_no, false});
        if (!inserted)
            throw ConfigError("duplicate key (first defined at line " +
                                  std::to_string(it->second.line) + ")",
                              line_no, dotted);
    }
    return config;
}

bool Config::has(const std::string& section, const std::string& key) const {
    return entries_.count(section + "." + key) > 0;
}

const Config::Entry* Config::find(const std::string& section, const std::string& key) const {
    auto it = entries_.find(section + "." + key);
    return it == entries_.end() ? nullptr : &it->second;
}

Config::Entry& Config::fetch(const std::string& section, const std::string& key) {
    auto it = entries_.find(section + "." + key);
    if (it == entries_.end())
        throw ConfigError("missing required field '" + section + "." + key + "'");
    it->second.consumed = true;
    return it->second;
}

std::string Config::get_string(const std::string& section, const std::string& key) {
    return fetch(section, key).value;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) {
    if (!has(section, key))
        return fallback;
    return fetch(section, key).value;
}

double Config::get_double(const std::string& section, const std::string& key) {
    Entry& e = fetch(section, key);
    return parse_double(e.value, e.line, section + "." + key);
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) {
    if (!has(section, key))
        return fallback;
    return get_double(section, key);
}

int Config::get_int(const std::string& section, const std::string& key) {
    Entry& e = fetch(section, key);
    const long long v = parse_integer(e.value, e.line, section + "." + key);
    if (v < INT_MIN || v > INT_MAX)
        throw ConfigError("integer out of range", e.line, section + "." + key);
    return static_cast<int>(v);
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) {
    if (!has(section, key))
        return fallback;
    return get_int(section, key);
}

std::uint64_t Config::get_uint64(const std::string& section, const std::string& key,
                                 std::uint64_t fallback) {
    if (!has(section, key))
        return fallback;
    Entry& e = fetch(section, key);
    const std::string t = trim(e.value);
    if (t.empty() || t.front() == '-')
        throw ConfigError("expected unsigned integer", e.line, section + "." + key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (end != t.c_str() + t.size())
        throw ConfigError("invalid unsigned integer '" + t + "'", e.line, section + "." + key);
    return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) {
    if (!has(section, key))
        return fallback;
    Entry& e = fetch(section, key);
    const std::string t = trim(e.value);
    if (t == "true" || t == "1")
        return true;
    if (t == "false" || t == "0")
        return false;
    throw ConfigError("expected true/false", e.line, section + "." + key);
}

std::vector<double> Config::get_double_list(const std::string& section, const std::string& key) {
    Entry& e = fetch(section, key);
    std::vector<double> out;
    for (const std::string& part : split_commas(e.value))
        out.push_back(parse_double(part, e.line, section + "." + key));
    return out;
}

std::vector<double> Config::get_double_list(const std::string& section, const std::string& key,
                                            const std::vector<double>& fallback) {
    if (!has(section, key))
        return fallback;
    return get_double_list(section, key);
}

std::vector<int> Config::get_int_list(const std::string& section, const std::string& key,
                                      const std::vector<int>& fallback) {
    if (!has(section, key))
        return fallback;
    Entry& e = fetch(section, key);
    std::vector<int> out;
    for (const std::string& part : split_commas(e.value)) {
        const long long v = parse_integer(part, e.line, section + "." + key);
        if (v < INT_MIN || v > INT_MAX)
            throw ConfigError("integer out of range", e.line, section + "." + key);
        out.push_back(static_cast<int>(v));
    }
    return out;
}

void Config::override_value(const std::string& dotted_key, const std::string& value) {
    if (dotted_key.find('.') == std::string::npos)
        throw ConfigError("override key must be section.key, got '" + dotted_key + "'");
    entries_[dotted_key] = Entry{value, 0, false};
}

void Config::require_consumed() const {
    std::string unknown;
    for (const auto& [dotted, entry] : entries_) {
        if (!entry.consumed) {
            if (!unknown.empty())
                unknown += ", ";
            unknown += "'" + dotted + "'";
            if (entry.line > 0)
                unknown += " (line " + std::to_string(entry.line) + ")";
        }
    }
    if (!unknown.empty())
        throw ConfigError("unknown config keys: " + unknown);
}

} // namespace cwgf
