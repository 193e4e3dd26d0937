// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the JSON / JSON-lines readers. Internal to the library.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hetserve::detail {

using json = nlohmann::json;

/// Parses `text`, turning nlohmann's byte offset into a ParseError with a
/// line/column position. `first_line` shifts the reported line number.
json parse_json(std::string_view text, std::size_t first_line = 1);

/// Throws ValidationError naming `where` if `obj` is not an object or has a
/// key outside `allowed`.
void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                std::string_view where);

const json& require(const json& obj, std::string_view key, std::string_view where);

std::int64_t get_int(const json& obj, std::string_view key, std::string_view where);
double get_number(const json& obj, std::string_view key, std::string_view where);
std::string get_string(const json& obj, std::string_view key, std::string_view where);

/// Accepts an integer or a suffixed string ("32GB").
std::int64_t get_bytes(const json& obj, std::string_view key, std::string_view where);

/// Calls `fn(line_number, line)` for every non-blank line (1-based numbers).
void for_each_line(std::string_view text,
                   const std::function<void(std::size_t, std::string_view)>& fn);

}  // namespace hetserve::detail
