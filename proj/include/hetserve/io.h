// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace hetserve {

/// Reads a whole file; throws IoError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes (truncating) a whole file; throws IoError on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace hetserve
