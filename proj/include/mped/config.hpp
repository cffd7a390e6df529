#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mped {

/// Flat key = value configuration. Lines starting with '#' and blank lines
/// are ignored; repeated keys accumulate (used for anomaly lists).
class Config {
    std::map<std::string, std::vector<std::string>> values_;

    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

public:
    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config " + path);
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected key = value");
            cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        values_[key].push_back(value);
    }

    void override_single(const std::string& key, const std::string& value) {
        values_[key] = {value};
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second.back();
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second.back());
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key +
                                     "': not a number: " + it->second.back());
        }
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoll(it->second.back());
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key +
                                     "': not an integer: " + it->second.back());
        }
    }

    std::vector<std::string> get_all(const std::string& key) const {
        auto it = values_.find(key);
        return it == values_.end() ? std::vector<std::string>{} : it->second;
    }

    const std::map<std::string, std::vector<std::string>>& entries() const {
        return values_;
    }
};

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(part);
    return out;
}

}  // namespace mped
