// SPDX-License-Identifier: Apache-2.0

#include "hetserve/types.h"

#include <fmt/format.h>

#include <unordered_set>

#include "hetserve/errors.h"

namespace hetserve {

namespace {

void require_positive(std::int64_t value, std::string_view field) {
  if (value <= 0) {
    throw ValidationError(
        fmt::format("{} must be a positive integer, got {}", field, value));
  }
}

}  // namespace

void ModelSpec::validate() const {
  require_positive(layers, "model.layers");
  require_positive(hidden_dim, "model.hidden_dim");
  require_positive(param_count, "model.param_count");
  require_positive(bytes_per_param, "model.bytes_per_param");
}

void MachineSpec::validate() const {
  if (name.empty()) throw ValidationError("machine name must not be empty");
  if (accelerator_count < 1) {
    throw ValidationError(fmt::format(
        "machine '{}': accelerator_count must be >= 1, got {}", name,
        accelerator_count));
  }
  if (accelerator_mem <= 0) {
    throw ValidationError(fmt::format(
        "machine '{}': accelerator_mem_bytes must be > 0, got {}", name,
        accelerator_mem));
  }
}

void EngineOverheads::validate() const {
  if (!(mem_utilization_fraction > 0.0 && mem_utilization_fraction <= 1.0)) {
    throw ValidationError(fmt::format(
        "engine.mem_utilization_fraction must be in (0, 1], got {}",
        mem_utilization_fraction));
  }
  if (static_overhead < 0) {
    throw ValidationError(fmt::format(
        "engine.static_overhead_bytes must be >= 0, got {}", static_overhead));
  }
}

void WorkloadLimits::validate() const {
  require_positive(max_input_len, "limits.max_input_len");
  require_positive(max_output_len, "limits.max_output_len");
}

void Request::validate() const {
  if (input_len < 1 || output_len < 1 || predicted_output_len < 1) {
    throw ValidationError(fmt::format(
        "request '{}': lengths must be >= 1 (input_len={}, output_len={}, "
        "predicted_output_len={})",
        id, input_len, output_len, predicted_output_len));
  }
}

const MachineSpec& ClusterSpec::machine(std::string_view name) const {
  for (const auto& m : machines) {
    if (m.name == name) return m;
  }
  throw ValidationError(fmt::format("unknown machine '{}'", name));
}

void ClusterSpec::validate() const {
  model.validate();
  engine.validate();
  limits.validate();
  std::unordered_set<std::string> names;
  for (const auto& m : machines) {
    m.validate();
    if (!names.insert(m.name).second) {
      throw ValidationError(fmt::format("duplicate machine name '{}'", m.name));
    }
  }
}

void validate_deployment(const DeploymentConfig& config,
                         const ClusterSpec& cluster) {
  std::unordered_set<std::string> seen;
  for (const auto& entry : config.per_machine) {
    const MachineSpec& m = cluster.machine(entry.machine);
    if (!seen.insert(entry.machine).second) {
      throw ValidationError(
          fmt::format("machine '{}' appears twice in deployment", m.name));
    }
    if (entry.tp_degree < 1 || m.accelerator_count % entry.tp_degree != 0) {
      throw ValidationError(
          fmt::format("machine '{}': tp_degree {} does not divide {}", m.name,
                      entry.tp_degree, m.accelerator_count));
    }
    if (entry.instance_count * entry.tp_degree != m.accelerator_count) {
      throw ValidationError(fmt::format(
          "machine '{}': instance_count {} * tp_degree {} != {} accelerators",
          m.name, entry.instance_count, entry.tp_degree, m.accelerator_count));
    }
  }
}

MachineDeployment make_deployment(const MachineSpec& machine,
                                  std::int64_t tp_degree) {
  if (tp_degree < 1 || machine.accelerator_count % tp_degree != 0) {
    throw ValidationError(fmt::format("machine '{}': tp_degree {} does not divide {}",
                                      machine.name, tp_degree,
                                      machine.accelerator_count));
  }
  return {machine.name, tp_degree, machine.accelerator_count / tp_degree};
}

std::vector<std::int64_t> enumerate_tp_degrees(const MachineSpec& machine) {
  std::vector<std::int64_t> degrees;
  for (std::int64_t t = 1; t <= machine.accelerator_count; t *= 2) {
    if (machine.accelerator_count % t == 0) degrees.push_back(t);
  }
  return degrees;
}

}  // namespace hetserve
