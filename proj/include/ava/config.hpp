#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ava/errors.hpp"
#include "ava/io.hpp"

namespace ava {

/// Minimal reader for the flat TOML files this project uses: `key = value`
/// pairs with numbers, booleans, quoted strings, and arrays of strings.
/// Section headers and comments are tolerated and ignored.
class TomlTable {
public:
    static TomlTable parse_file(const std::filesystem::path& path) {
        TomlTable t;
        for (const std::string& raw : read_lines(path)) {
            std::string line = strip(raw);
            if (line.empty() || line[0] == '#' || line[0] == '[') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ValidationError("config line without '=': " + raw);
            std::string key = strip(line.substr(0, eq));
            std::string val = strip(line.substr(eq + 1));
            auto hash = find_comment(val);
            if (hash != std::string::npos) val = strip(val.substr(0, hash));
            t.values_[key] = val;
        }
        return t;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    double number(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        double v = 0.0;
        auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (ec != std::errc() || p != it->second.data() + it->second.size())
            throw ValidationError("config key '" + key + "' is not a number: " + it->second);
        return v;
    }

    long integer(const std::string& key, long fallback) const {
        return long(number(key, double(fallback)));
    }

    bool boolean(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw ValidationError("config key '" + key + "' is not a boolean: " + it->second);
    }

    std::string string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        return unquote(it->second, key);
    }

    std::vector<std::string> string_array(const std::string& key,
                                          std::vector<std::string> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::string v = strip(it->second);
        if (v.size() < 2 || v.front() != '[' || v.back() != ']')
            throw ValidationError("config key '" + key + "' is not an array: " + v);
        std::vector<std::string> out;
        std::string inner = v.substr(1, v.size() - 2);
        std::string cur;
        for (std::size_t i = 0; i <= inner.size(); ++i) {
            if (i == inner.size() || inner[i] == ',') {
                std::string item = strip(cur);
                if (!item.empty()) out.push_back(unquote(item, key));
                cur.clear();
            } else {
                cur += inner[i];
            }
        }
        return out;
    }

private:
    static std::string strip(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }
    static std::size_t find_comment(const std::string& s) {
        bool in_str = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') in_str = !in_str;
            if (s[i] == '#' && !in_str) return i;
        }
        return std::string::npos;
    }
    static std::string unquote(const std::string& s, const std::string& key) {
        if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
            return s.substr(1, s.size() - 2);
        throw ValidationError("config key '" + key + "' is not a string: " + s);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace ava
