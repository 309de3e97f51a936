#include "text2loc/common/text_format.hpp"

#include <charconv>

#include "text2loc/common/errors.hpp"

namespace text2loc {

std::string format_double(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text)
{
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ValueError("not a number: '" + std::string(text) + "'");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view text)
{
    std::uint64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw ValueError("not an unsigned integer: '" + std::string(text) + "'");
    }
    return v;
}

bool parse_bool(std::string_view text)
{
    if (text == "true" || text == "1") {
        return true;
    }
    if (text == "false" || text == "0") {
        return false;
    }
    throw ValueError("not a boolean: '" + std::string(text) + "'");
}

std::string join_doubles(const std::vector<double>& values)
{
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) {
            s += ',';
        }
        s += format_double(values[i]);
    }
    return s;
}

std::vector<double> split_doubles(std::string_view text)
{
    std::vector<double> out;
    if (text.empty()) {
        return out;
    }
    std::size_t begin = 0;
    while (true) {
        const auto comma = text.find(',', begin);
        out.push_back(parse_double(text.substr(begin, comma - begin)));
        if (comma == std::string_view::npos) {
            return out;
        }
        begin = comma + 1;
    }
}

} // namespace text2loc
