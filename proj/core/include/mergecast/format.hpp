#pragma once

#include <string>
#include <string_view>

namespace mergecast {

/// Shortest round-trip decimal representation of v. Stable across runs, so
/// text artifacts built from it compare byte-for-byte.
std::string fmt_double(double v);

/// Strict double parse of a full token; returns false on any trailing junk.
bool parse_double(std::string_view token, double& out);

/// Strict integer parse of a full token.
bool parse_int(std::string_view token, long& out);

}  // namespace mergecast
