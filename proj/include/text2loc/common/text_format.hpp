#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace text2loc {

/* Shortest decimal form that parses back to the same double */
std::string format_double(double value);

/* Whole-string parses; ValueError on trailing junk or overflow */
double parse_double(std::string_view text);
std::uint64_t parse_u64(std::string_view text);
bool parse_bool(std::string_view text);

/* Comma-joined format_double values and the inverse; "" is the empty list */
std::string join_doubles(const std::vector<double>& values);
std::vector<double> split_doubles(std::string_view text);

} // namespace text2loc
