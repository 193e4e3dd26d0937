// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hetserve/types.h"

namespace hetserve {

/// One JSON object per line: {"id", "input_len", "output_len"}. Blank lines
/// are skipped. predicted_output_len starts equal to output_len.
std::vector<Request> parse_trace(std::string_view text);

std::string serialize_trace(const std::vector<Request>& requests);

std::vector<Request> load_trace(const std::filesystem::path& path);

/// Token-length distribution for synthetic traces.
struct LengthDistribution {
  enum class Kind { kLognormal, kUniform };
  Kind kind = Kind::kLognormal;
  double first = 0.0;   // lognormal: mean of the lengths; uniform: low
  double second = 0.0;  // lognormal: stddev of the lengths; uniform: high

  void validate() const;
};

/// "lognormal:<mean>,<stddev>" or "uniform:<low>,<high>".
LengthDistribution parse_length_distribution(std::string_view text);

/// Reproducible synthetic trace with ids "r0", "r1", ...; lengths are
/// rounded and clamped to [1, limit].
std::vector<Request> generate_trace(std::size_t count, const LengthDistribution& input,
                                    const LengthDistribution& output,
                                    const WorkloadLimits& limits, std::uint64_t seed);

}  // namespace hetserve
