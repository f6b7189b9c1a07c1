#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace das {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses "key = value" lines. Blank lines and lines starting with '#' are
/// ignored; anything else without '=' or with a repeated key is an error.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::string& path);

/// One "key=value" line per entry, in the given order.
std::string format_key_values(const KeyValues& kv);

bool parse_bool(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);

}  // namespace das
