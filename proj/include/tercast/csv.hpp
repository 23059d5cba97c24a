#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tercast/error.hpp"
#include "tercast/stats.hpp"

namespace tercast::csv {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline double parse_double(const std::string& field, const std::string& file, long line) {
    const std::string t = trim(field);
    if (t == "NA" || t == "nan" || t == "NaN") return missing_value;
    double v = 0;
    const char* begin = t.data();
    const char* end = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw parse_error(file, line, "malformed numeric field '" + field + "'");
    return v;
}

inline long parse_int(const std::string& field, const std::string& file, long line) {
    const std::string t = trim(field);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size())
        throw parse_error(file, line, "malformed integer field '" + field + "'");
    return v;
}

/// Shortest decimal form that round-trips the double exactly.
inline std::string format_double(double v) {
    if (is_missing(v)) return "NA";
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return std::string(buf);
}

/// Reads all lines of a CSV file, checks the header, and hands data rows to a
/// callback as (fields, line_number).
template <typename RowFn>
void read_rows(const std::string& path, const std::string& expected_header, RowFn&& fn) {
    std::ifstream in(path);
    if (!in) throw parse_error(path + ": cannot open file");
    std::string line;
    long line_no = 0;
    const auto want = split(expected_header);
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (line_no == 1) {
            auto got = split(t);
            for (auto& f : got) f = trim(f);
            if (got != want)
                throw parse_error(path, 1, "expected header '" + expected_header + "', got '" + t + "'");
            continue;
        }
        auto fields = split(t);
        if (fields.size() != want.size())
            throw parse_error(path, line_no,
                              "expected " + std::to_string(want.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        fn(fields, line_no);
    }
    if (line_no == 0) throw parse_error(path, 0, "empty file");
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw error("cannot open for writing: " + path);
    return out;
}

}  // namespace tercast::csv
