#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace gridcast::detail {

/// Shortest decimal that parses back to the same binary64.
inline std::string shortest_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

/// Fixed 17 significant digits, also lossless.
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace gridcast::detail
