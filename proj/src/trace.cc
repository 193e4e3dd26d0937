// SPDX-License-Identifier: Apache-2.0

#include "hetserve/trace.h"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <unordered_set>

#include "hetserve/errors.h"
#include "hetserve/io.h"
#include "json_util.h"

namespace hetserve {

using detail::json;

std::vector<Request> parse_trace(std::string_view text) {
  std::vector<Request> requests;
  std::unordered_set<std::string> ids;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    std::string where = fmt::format("trace line {}", line_no);
    Request r;
    try {
      json rec = detail::parse_json(line, line_no);
      detail::check_keys(rec, {"id", "input_len", "output_len"}, where);
      r.id = detail::get_string(rec, "id", where);
      r.input_len = detail::get_int(rec, "input_len", where);
      r.output_len = detail::get_int(rec, "output_len", where);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    r.predicted_output_len = r.output_len;
    if (r.input_len < 1 || r.output_len < 1) {
      throw ParseError(fmt::format("{}: input_len and output_len must be >= 1", where),
                       line_no);
    }
    if (!ids.insert(r.id).second) {
      throw ParseError(fmt::format("{}: duplicate request id '{}'", where, r.id), line_no);
    }
    requests.push_back(std::move(r));
  });
  return requests;
}

std::string serialize_trace(const std::vector<Request>& requests) {
  std::string out;
  for (const auto& r : requests) {
    json rec = {{"id", r.id}, {"input_len", r.input_len}, {"output_len", r.output_len}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<Request> load_trace(const std::filesystem::path& path) {
  return parse_trace(read_file(path));
}

void LengthDistribution::validate() const {
  if (!std::isfinite(first) || !std::isfinite(second)) {
    throw ValidationError("length distribution parameters must be finite");
  }
  if (kind == Kind::kLognormal) {
    if (!(first > 0.0) || second < 0.0) {
      throw ValidationError(fmt::format(
          "lognormal lengths need mean > 0 and stddev >= 0, got {}, {}", first, second));
    }
  } else if (!(first >= 1.0) || second < first) {
    throw ValidationError(
        fmt::format("uniform lengths need 1 <= low <= high, got {}, {}", first, second));
  }
}

LengthDistribution parse_length_distribution(std::string_view text) {
  LengthDistribution d;
  const auto colon = text.find(':');
  const auto comma = text.find(',', colon == std::string_view::npos ? 0 : colon);
  if (colon == std::string_view::npos || comma == std::string_view::npos) {
    throw ValidationError(fmt::format(
        "distribution '{}' must look like lognormal:<mean>,<stddev> or uniform:<low>,<high>",
        text));
  }
  const std::string_view kind = text.substr(0, colon);
  if (kind == "lognormal") {
    d.kind = LengthDistribution::Kind::kLognormal;
  } else if (kind == "uniform") {
    d.kind = LengthDistribution::Kind::kUniform;
  } else {
    throw ValidationError(fmt::format("unknown distribution kind '{}'", kind));
  }
  auto number = [&](std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError(fmt::format("invalid number '{}' in distribution '{}'", s, text));
    }
    return v;
  };
  d.first = number(text.substr(colon + 1, comma - colon - 1));
  d.second = number(text.substr(comma + 1));
  d.validate();
  return d;
}

namespace {

class LengthSampler {
 public:
  LengthSampler(const LengthDistribution& d, Tokens limit) : dist_(d), limit_(limit) {
    if (d.kind == LengthDistribution::Kind::kLognormal) {
      // Match the requested mean/stddev of the lengths themselves.
      const double var_log = std::log1p((d.second * d.second) / (d.first * d.first));
      lognormal_ = std::lognormal_distribution<double>(std::log(d.first) - var_log / 2.0,
                                                       std::sqrt(var_log));
    } else {
      uniform_ = std::uniform_int_distribution<Tokens>(static_cast<Tokens>(d.first),
                                                       static_cast<Tokens>(d.second));
    }
  }

  Tokens operator()(std::mt19937_64& rng) {
    double v = dist_.kind == LengthDistribution::Kind::kLognormal
                   ? std::round(lognormal_(rng))
                   : static_cast<double>(uniform_(rng));
    return static_cast<Tokens>(std::clamp(v, 1.0, static_cast<double>(limit_)));
  }

 private:
  LengthDistribution dist_;
  Tokens limit_;
  std::lognormal_distribution<double> lognormal_;
  std::uniform_int_distribution<Tokens> uniform_;
};

}  // namespace

std::vector<Request> generate_trace(std::size_t count, const LengthDistribution& input,
                                    const LengthDistribution& output,
                                    const WorkloadLimits& limits, std::uint64_t seed) {
  input.validate();
  output.validate();
  limits.validate();
  std::mt19937_64 rng(seed);
  LengthSampler in(input, limits.max_input_len);
  LengthSampler out(output, limits.max_output_len);
  std::vector<Request> trace;
  trace.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Request r;
    r.id = fmt::format("r{}", i);
    r.input_len = in(rng);
    r.output_len = out(rng);
    r.predicted_output_len = r.output_len;
    trace.push_back(std::move(r));
  }
  return trace;
}

}  // namespace hetserve
