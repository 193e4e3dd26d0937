// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "hetserve/types.h"

namespace hetserve {

/// Parses a cluster spec document (JSON). Byte quantities may be plain
/// integers or strings with a unit suffix ("32GB", "2GiB", "512MB").
/// Unknown keys are rejected so typos do not silently fall back to defaults.
ClusterSpec parse_cluster_spec(std::string_view text);

/// Canonical serialization; parse_cluster_spec(serialize_cluster_spec(s)) == s.
std::string serialize_cluster_spec(const ClusterSpec& spec);

ClusterSpec load_cluster_spec(const std::filesystem::path& path);

/// "32GB" -> 32e9, "2GiB" -> 2^31, "100" -> 100. Throws ValidationError.
std::int64_t parse_byte_size(std::string_view text);

}  // namespace hetserve
