// SPDX-License-Identifier: Apache-2.0

#include "hetserve/io.h"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "hetserve/errors.h"

namespace hetserve {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace hetserve
