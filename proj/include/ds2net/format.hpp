#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace ds2net {

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[32];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

} // namespace ds2net
