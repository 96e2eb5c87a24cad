#pragma once

#include <charconv>
#include <istream>
#include <limits>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "glesens/error.hpp"

/// Minimal CSV support for the frozen numeric schemas: comma separated, no
/// quoting, first line is the header.
namespace glesens::csv {

/// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        // from_chars rejects "inf"/"nan" spellings of some writers; accept ours.
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
        throw InvalidArgument("not a number: '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return i;
        }
        throw InvalidArgument("missing CSV column '" + std::string(name) + "'");
    }
};

inline Table read(std::istream& is) {
    Table t;
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("empty CSV input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split(line);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split(line);
        if (row.size() != t.header.size())
            throw InvalidArgument("CSV line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(t.header.size()) + " fields");
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace glesens::csv
