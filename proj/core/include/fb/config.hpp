#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fb {

// Line-oriented config text: `[section]` headers group `key = value` lines,
// '#' starts a comment, blank lines are ignored. Keys are unique within a
// section; values keep inner whitespace.
struct ConfigFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string &section, const std::string &key) const;
    const std::string &get(const std::string &section, const std::string &key) const;
    std::string get_or(const std::string &section, const std::string &key,
                       const std::string &dflt) const;
    int64_t get_int(const std::string &section, const std::string &key) const;
    int64_t get_int_or(const std::string &section, const std::string &key, int64_t dflt) const;
    uint64_t get_u64(const std::string &section, const std::string &key) const;
    double get_double(const std::string &section, const std::string &key) const;
    double get_double_or(const std::string &section, const std::string &key, double dflt) const;
};

ConfigFile config_parse(const std::string &text);
ConfigFile config_load(const std::string &path);

// "1,2,3" -> {1,2,3}; spaces around commas are fine.
std::vector<int64_t> parse_int_list(const std::string &s);
std::vector<uint64_t> parse_u64_list(const std::string &s);
std::vector<double> parse_double_list(const std::string &s);
std::vector<std::string> parse_name_list(const std::string &s);

}  // namespace fb
