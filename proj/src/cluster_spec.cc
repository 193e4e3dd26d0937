// SPDX-License-Identifier: Apache-2.0

#include "hetserve/cluster_spec.h"

#include <fmt/format.h>

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <utility>

#include "hetserve/errors.h"
#include "hetserve/io.h"
#include "json_util.h"

namespace hetserve {

using detail::json;

std::int64_t parse_byte_size(std::string_view text) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);

  std::size_t split = 0;
  while (split < text.size() &&
         (std::isdigit(static_cast<unsigned char>(text[split])) || text[split] == '.' ||
          text[split] == 'e' || text[split] == 'E' || text[split] == '+' ||
          text[split] == '-')) {
    ++split;
  }
  std::string number(text.substr(0, split));
  std::string_view unit = text.substr(split);
  while (!unit.empty() && is_space(unit.front())) unit.remove_prefix(1);

  double value = 0.0;
  auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
  if (number.empty() || ec != std::errc() || ptr != number.data() + number.size()) {
    throw ValidationError(fmt::format("invalid byte quantity '{}'", text));
  }

  static constexpr std::array<std::pair<std::string_view, double>, 10> kUnits{{
      {"", 1.0},
      {"B", 1.0},
      {"KB", 1e3},
      {"MB", 1e6},
      {"GB", 1e9},
      {"TB", 1e12},
      {"KiB", 1024.0},
      {"MiB", 1024.0 * 1024.0},
      {"GiB", 1024.0 * 1024.0 * 1024.0},
      {"TiB", 1024.0 * 1024.0 * 1024.0 * 1024.0},
  }};
  for (const auto& [name, scale] : kUnits) {
    if (unit == name) {
      double bytes = value * scale;
      if (!std::isfinite(bytes) || std::fabs(bytes) > 9.0e18) {
        throw ValidationError(fmt::format("byte quantity '{}' out of range", text));
      }
      return static_cast<std::int64_t>(std::llround(bytes));
    }
  }
  throw ValidationError(fmt::format("unknown byte unit '{}' in '{}'", unit, text));
}

ClusterSpec parse_cluster_spec(std::string_view text) {
  json doc = detail::parse_json(text);
  detail::check_keys(doc, {"model", "engine", "machines", "limits"}, "cluster spec");

  ClusterSpec spec;

  const json& model = detail::require(doc, "model", "cluster spec");
  detail::check_keys(model, {"layers", "hidden_dim", "param_count", "bytes_per_param"},
                     "model");
  spec.model.layers = detail::get_int(model, "layers", "model");
  spec.model.hidden_dim = detail::get_int(model, "hidden_dim", "model");
  spec.model.param_count = detail::get_int(model, "param_count", "model");
  spec.model.bytes_per_param = detail::get_int(model, "bytes_per_param", "model");

  const json& engine = detail::require(doc, "engine", "cluster spec");
  detail::check_keys(engine, {"mem_utilization_fraction", "static_overhead_bytes"},
                     "engine");
  spec.engine.mem_utilization_fraction =
      detail::get_number(engine, "mem_utilization_fraction", "engine");
  spec.engine.static_overhead =
      detail::get_bytes(engine, "static_overhead_bytes", "engine");

  const json& machines = detail::require(doc, "machines", "cluster spec");
  if (!machines.is_array()) {
    throw ValidationError("cluster spec: field 'machines' must be an array");
  }
  for (std::size_t i = 0; i < machines.size(); ++i) {
    std::string where = fmt::format("machines[{}]", i);
    const json& m = machines[i];
    detail::check_keys(m, {"name", "accelerator_count", "accelerator_mem_bytes",
                           "accelerator_type"},
                       where);
    MachineSpec machine;
    machine.name = detail::get_string(m, "name", where);
    machine.accelerator_count = detail::get_int(m, "accelerator_count", where);
    machine.accelerator_mem = detail::get_bytes(m, "accelerator_mem_bytes", where);
    machine.accelerator_type = detail::get_string(m, "accelerator_type", where);
    spec.machines.push_back(std::move(machine));
  }

  const json& limits = detail::require(doc, "limits", "cluster spec");
  detail::check_keys(limits, {"max_input_len", "max_output_len"}, "limits");
  spec.limits.max_input_len = detail::get_int(limits, "max_input_len", "limits");
  spec.limits.max_output_len = detail::get_int(limits, "max_output_len", "limits");

  spec.validate();
  return spec;
}

std::string serialize_cluster_spec(const ClusterSpec& spec) {
  json doc;
  doc["model"] = {{"layers", spec.model.layers},
                  {"hidden_dim", spec.model.hidden_dim},
                  {"param_count", spec.model.param_count},
                  {"bytes_per_param", spec.model.bytes_per_param}};
  doc["engine"] = {{"mem_utilization_fraction", spec.engine.mem_utilization_fraction},
                   {"static_overhead_bytes", spec.engine.static_overhead}};
  json machines = json::array();
  for (const auto& m : spec.machines) {
    machines.push_back({{"name", m.name},
                        {"accelerator_count", m.accelerator_count},
                        {"accelerator_mem_bytes", m.accelerator_mem},
                        {"accelerator_type", m.accelerator_type}});
  }
  doc["machines"] = std::move(machines);
  doc["limits"] = {{"max_input_len", spec.limits.max_input_len},
                   {"max_output_len", spec.limits.max_output_len}};
  return doc.dump(2) + "\n";
}

ClusterSpec load_cluster_spec(const std::filesystem::path& path) {
  return parse_cluster_spec(read_file(path));
}

}  // namespace hetserve
