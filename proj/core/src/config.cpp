#include "fb/config.hpp"

#include <fstream>
#include <sstream>

#include "fb/tensor.hpp"

namespace fb {

namespace {

std::string trim(const std::string &s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile config_parse(const std::string &text) {
    ConfigFile f;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "config line " + std::to_string(lineno) +
                                            ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            require(!section.empty(), "config line " + std::to_string(lineno) + ": empty section");
            f.sections[section];
            continue;
        }
        auto eq = line.find('=');
        require(eq != std::string::npos,
                "config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        require(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
        auto &sec = f.sections[section];
        require(!sec.count(key), "config line " + std::to_string(lineno) + ": duplicate key " +
                                     key + " in section [" + section + "]");
        sec[key] = val;
    }
    return f;
}

ConfigFile config_load(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return config_parse(buf.str());
}

bool ConfigFile::has(const std::string &section, const std::string &key) const {
    auto it = sections.find(section);
    return it != sections.end() && it->second.count(key) > 0;
}

const std::string &ConfigFile::get(const std::string &section, const std::string &key) const {
    auto it = sections.find(section);
    require(it != sections.end(), "config missing section [" + section + "]");
    auto kt = it->second.find(key);
    require(kt != it->second.end(), "config missing key " + key + " in section [" + section + "]");
    return kt->second;
}

std::string ConfigFile::get_or(const std::string &section, const std::string &key,
                               const std::string &dflt) const {
    return has(section, key) ? get(section, key) : dflt;
}

int64_t ConfigFile::get_int(const std::string &section, const std::string &key) const {
    return std::stoll(get(section, key));
}

int64_t ConfigFile::get_int_or(const std::string &section, const std::string &key,
                               int64_t dflt) const {
    return has(section, key) ? get_int(section, key) : dflt;
}

uint64_t ConfigFile::get_u64(const std::string &section, const std::string &key) const {
    return std::stoull(get(section, key));
}

double ConfigFile::get_double(const std::string &section, const std::string &key) const {
    return std::stod(get(section, key));
}

double ConfigFile::get_double_or(const std::string &section, const std::string &key,
                                 double dflt) const {
    return has(section, key) ? get_double(section, key) : dflt;
}

namespace {

std::vector<std::string> split_commas(const std::string &s) {
    std::vector<std::string> parts;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) {
        part = trim(part);
        if (!part.empty()) parts.push_back(part);
    }
    return parts;
}

}  // namespace

std::vector<int64_t> parse_int_list(const std::string &s) {
    std::vector<int64_t> v;
    for (const std::string &p : split_commas(s)) v.push_back(std::stoll(p));
    return v;
}

std::vector<uint64_t> parse_u64_list(const std::string &s) {
    std::vector<uint64_t> v;
    for (const std::string &p : split_commas(s)) v.push_back(std::stoull(p));
    return v;
}

std::vector<double> parse_double_list(const std::string &s) {
    std::vector<double> v;
    for (const std::string &p : split_commas(s)) v.push_back(std::stod(p));
    return v;
}

std::vector<std::string> parse_name_list(const std::string &s) { return split_commas(s); }

}  // namespace fb
