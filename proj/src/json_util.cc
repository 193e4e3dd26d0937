// SPDX-License-Identifier: Apache-2.0

#include "json_util.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "hetserve/cluster_spec.h"
#include "hetserve/errors.h"

namespace hetserve::detail {

json parse_json(std::string_view text, std::size_t first_line) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    std::size_t offset = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = first_line;
    std::size_t column = 1;
    for (std::size_t i = 0; i < offset; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError(fmt::format("syntax error at line {}, column {}: {}", line,
                                 column, e.what()),
                     line, column);
  }
}

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                std::string_view where) {
  if (!obj.is_object()) {
    throw ValidationError(fmt::format("{}: expected an object", where));
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(fmt::format("{}: unknown field '{}'", where, key));
    }
  }
}

const json& require(const json& obj, std::string_view key, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ValidationError(fmt::format("{}: missing field '{}'", where, key));
  }
  return *it;
}

std::int64_t get_int(const json& obj, std::string_view key, std::string_view where) {
  const json& v = require(obj, key, where);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::fabs(d) < 9.0e18) {
      return static_cast<std::int64_t>(d);
    }
  }
  throw ValidationError(fmt::format("{}: field '{}' must be an integer", where, key));
}

double get_number(const json& obj, std::string_view key, std::string_view where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) {
    throw ValidationError(fmt::format("{}: field '{}' must be a number", where, key));
  }
  return v.get<double>();
}

std::string get_string(const json& obj, std::string_view key, std::string_view where) {
  const json& v = require(obj, key, where);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ValidationError(fmt::format("{}: field '{}' must be a string", where, key));
}

std::int64_t get_bytes(const json& obj, std::string_view key, std::string_view where) {
  const json& v = require(obj, key, where);
  if (v.is_string()) {
    try {
      return parse_byte_size(v.get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(fmt::format("{}: field '{}': {}", where, key, e.what()));
    }
  }
  return get_int(obj, key, where);
}

void for_each_line(std::string_view text,
                   const std::function<void(std::size_t, std::string_view)>& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) fn(line_no, line);
    if (end == text.size()) break;
    pos = end + 1;
  }
}

}  // namespace hetserve::detail
