#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cwgf {

// Sectioned key-value configuration:
//
//   # comment
//   [section]
//   key = value
//
// Lookups are by (section, key). Every key must be consumed by the time
// require_consumed() runs; leftovers are reported as unknown keys with
// their line numbers. Typed getters raise ConfigError with the offending
// line and field on parse failures.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key);
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback);

    double get_double(const std::string& section, const std::string& key);
    double get_double(const std::string& section, const std::string& key, double fallback);

    int get_int(const std::string& section, const std::string& key);
    int get_int(const std::string& section, const std::string& key, int fallback);

    std::uint64_t get_uint64(const std::string& section, const std::string& key,
                             std::uint64_t fallback);

    bool get_bool(const std::string& section, const std::string& key, bool fallback);

    std::vector<double> get_double_list(const std::string& section, const std::string& key);
    std::vector<double> get_double_list(const std::string& section, const std::string& key,
                                        const std::vector<double>& fallback);
    std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                  const std::vector<int>& fallback);

    // Inserts or replaces section.key (dotted form), as an unconsumed entry.
    // Used by sweep and seed overrides before the experiment reads the config.
    void override_value(const std::string& dotted_key, const std::string& value);

    // Throws ConfigError naming every entry that was never read.
    void require_consumed() const;

private:
    struct Entry {
        std::string value;
        int line = 0;
        bool consumed = false;
    };

    const Entry* find(const std::string& section, const std::string& key) const;
    Entry& fetch(const std::string& section, const std::string& key);

    std::map<std::string, Entry> entries_; // keyed by "section.key"
};

} // namespace cwgf
