#pragma once

#include <charconv>
#include <string>

namespace reer {

/// Shortest text with 17 significant digits; parses back to the same double.
inline std::string format_real(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

}  // namespace reer
