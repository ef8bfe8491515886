#pragma once

// Reader for the subset of TOML used by scenario files: [tables], [[arrays
// of tables]] (dotted names allowed), key = value with strings, integers,
// floats, booleans and single-line arrays of those, and # comments. The
// result is a JSON tree plus the source line of every key, so schema errors
// can point at the offending line.

#include "kgconn/common.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace kgconn::toml {

using json = nlohmann::ordered_json;

struct Document {
    json root = json::object();
    std::map<std::string, int> lines;  // "/grid/n_x" style pointer -> line

    int line_of(const std::string& pointer) const {
        auto it = lines.find(pointer);
        return it == lines.end() ? 0 : it->second;
    }
};

inline std::string at_line(int line, const std::string& what) {
    return line > 0 ? "line " + std::to_string(line) + ": " + what : what;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

// Drop a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

inline bool bare_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

inline std::vector<std::string> split_dotted(const std::string& name, int line) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    std::string p;
    while (std::getline(ss, p, '.')) {
        p = trim(p);
        if (!bare_key(p)) throw ConfigError("CFG_SYNTAX", at_line(line, "bad table name '" + name + "'"));
        parts.push_back(p);
    }
    if (parts.empty()) throw ConfigError("CFG_SYNTAX", at_line(line, "empty table name"));
    return parts;
}

class ValueParser {
public:
    ValueParser(const std::string& s, int line) : s_(s), line_(line) {}

    json parse_all() {
        json v = value();
        skip_ws();
        if (i_ != s_.size()) fail("trailing characters after value");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError("CFG_SYNTAX", at_line(line_, what)); }

    void skip_ws() {
        while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
    }

    json value() {
        skip_ws();
        if (i_ >= s_.size()) fail("missing value");
        char c = s_[i_];
        if (c == '"') return string();
        if (c == '[') return array();
        if (s_.compare(i_, 4, "true") == 0) {
            i_ += 4;
            return true;
        }
        if (s_.compare(i_, 5, "false") == 0) {
            i_ += 5;
            return false;
        }
        return number();
    }

    json string() {
        std::string out;
        ++i_;
        while (i_ < s_.size() && s_[i_] != '"') {
            char c = s_[i_++];
            if (c == '\\') {
                if (i_ >= s_.size()) fail("unterminated escape");
                char e = s_[i_++];
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        if (i_ >= s_.size()) fail("unterminated string");
        ++i_;
        return out;
    }

    json array() {
        json a = json::array();
        ++i_;
        skip_ws();
        if (i_ < s_.size() && s_[i_] == ']') {
            ++i_;
            return a;
        }
        while (true) {
            json v = value();
            if (v.is_array()) fail("nested arrays are not supported");
            a.push_back(v);
            skip_ws();
            if (i_ >= s_.size()) fail("unterminated array");
            if (s_[i_] == ',') {
                ++i_;
                skip_ws();
                if (i_ < s_.size() && s_[i_] == ']') {
                    ++i_;
                    return a;
                }
                continue;
            }
            if (s_[i_] == ']') {
                ++i_;
                return a;
            }
            fail("expected ',' or ']' in array");
        }
    }

    json number() {
        std::size_t start = i_;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '+' ||
                                  s_[i_] == '-' || s_[i_] == '.' || s_[i_] == '_'))
            ++i_;
        std::string tok = s_.substr(start, i_ - start);
        std::string clean;
        for (char c : tok)
            if (c != '_') clean += c;
        if (clean.empty()) fail("missing value");
        bool is_float = clean.find_first_of(".eE") != std::string::npos || clean == "inf" || clean == "nan" ||
                        clean == "+inf" || clean == "-inf";
        try {
            std::size_t used = 0;
            if (is_float) {
                double d = std::stod(clean, &used);
                if (used != clean.size()) fail("malformed number '" + tok + "'");
                return d;
            }
            long long v = std::stoll(clean, &used, 10);
            if (used != clean.size()) fail("malformed number '" + tok + "'");
            return v;
        } catch (const std::logic_error&) {
            fail("malformed value '" + tok + "'");
        }
    }

    const std::string& s_;
    std::size_t i_ = 0;
    int line_;
};

}  // namespace detail

inline Document parse(const std::string& text) {
    Document doc;
    json::json_pointer current("");
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = detail::trim(detail::strip_comment(raw));
        if (s.empty()) continue;
        if (s.rfind("[[", 0) == 0) {
            if (s.size() < 4 || s.substr(s.size() - 2) != "]]")
                throw ConfigError("CFG_SYNTAX", at_line(line, "unterminated array-of-tables header"));
            auto parts = detail::split_dotted(s.substr(2, s.size() - 4), line);
            json::json_pointer p("");
            for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
                p /= parts[k];
                if (!doc.root.contains(p)) doc.root[p] = json::object();
                if (doc.root[p].is_array()) p /= doc.root[p].size() - 1;
            }
            p /= parts.back();
            if (!doc.root.contains(p)) {
                doc.root[p] = json::array();
                doc.lines[p.to_string()] = line;
            }
            if (!doc.root[p].is_array())
                throw ConfigError("CFG_SYNTAX", at_line(line, "'" + parts.back() + "' is not an array of tables"));
            doc.root[p].push_back(json::object());
            current = p / (doc.root[p].size() - 1);
            doc.lines[current.to_string()] = line;
            continue;
        }
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError("CFG_SYNTAX", at_line(line, "unterminated table header"));
            auto parts = detail::split_dotted(s.substr(1, s.size() - 2), line);
            json::json_pointer p("");
            for (const auto& part : parts) {
                p /= part;
                if (!doc.root.contains(p)) doc.root[p] = json::object();
                if (doc.root[p].is_array()) p /= doc.root[p].size() - 1;
            }
            if (!doc.root[p].is_object())
                throw ConfigError("CFG_SYNTAX", at_line(line, "'" + parts.back() + "' is not a table"));
            if (doc.lines.count(p.to_string()) && !doc.root[p].empty())
                throw ConfigError("CFG_DUPLICATE", at_line(line, "table defined twice"));
            doc.lines[p.to_string()] = line;
            current = p;
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("CFG_SYNTAX", at_line(line, "expected key = value"));
        std::string key = detail::trim(s.substr(0, eq));
        if (!detail::bare_key(key)) throw ConfigError("CFG_SYNTAX", at_line(line, "bad key '" + key + "'"));
        json::json_pointer p = current / key;
        if (doc.root.contains(p)) throw ConfigError("CFG_DUPLICATE", at_line(line, "key '" + key + "' given twice"));
        std::string rhs = detail::trim(s.substr(eq + 1));
        doc.root[p] = detail::ValueParser(rhs, line).parse_all();
        doc.lines[p.to_string()] = line;
    }
    return doc;
}

}  // namespace kgconn::toml
