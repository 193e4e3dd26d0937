// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hetserve {

using Tokens = std::int64_t;

/// Architecture constants of the served model.
struct ModelSpec {
  std::int64_t layers = 0;
  std::int64_t hidden_dim = 0;
  std::int64_t param_count = 0;
  std::int64_t bytes_per_param = 0;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// One machine of the cluster. Every machine holds a single accelerator type.
struct MachineSpec {
  std::string name;
  std::int64_t accelerator_count = 0;
  std::int64_t accelerator_mem = 0;  // bytes per accelerator
  std::string accelerator_type;

  void validate() const;
  bool operator==(const MachineSpec&) const = default;
};

/// Memory the inference engine may use (fraction) and what it keeps for
/// itself regardless of load (bytes).
struct EngineOverheads {
  double mem_utilization_fraction = 0.9;
  std::int64_t static_overhead = 0;

  void validate() const;
  bool operator==(const EngineOverheads&) const = default;
};

struct WorkloadLimits {
  Tokens max_input_len = 0;
  Tokens max_output_len = 0;

  void validate() const;
  bool operator==(const WorkloadLimits&) const = default;
};

/// An inference request reduced to its lengths. `output_len` is the ground
/// truth used for execution; `predicted_output_len` is what schedulers see.
struct Request {
  std::string id;
  Tokens input_len = 0;
  Tokens output_len = 0;
  Tokens predicted_output_len = 0;

  Tokens total_tokens() const { return input_len + output_len; }
  void validate() const;
  bool operator==(const Request&) const = default;
};

/// Tensor-parallel degree chosen for one machine and the resulting number of
/// instances on it.
struct MachineDeployment {
  std::string machine;
  std::int64_t tp_degree = 1;
  std::int64_t instance_count = 1;

  bool operator==(const MachineDeployment&) const = default;
};

struct DeploymentConfig {
  std::vector<MachineDeployment> per_machine;

  bool operator==(const DeploymentConfig&) const = default;
};

/// Everything read from a cluster spec document.
struct ClusterSpec {
  ModelSpec model;
  EngineOverheads engine;
  std::vector<MachineSpec> machines;
  WorkloadLimits limits;

  /// Throws ValidationError for unknown names.
  const MachineSpec& machine(std::string_view name) const;
  void validate() const;
  bool operator==(const ClusterSpec&) const = default;
};

/// Checks p_i * t_i = u_i and that every named machine exists.
void validate_deployment(const DeploymentConfig& config,
                         const ClusterSpec& cluster);

/// Builds a deployment entry with instance_count = u / t.
MachineDeployment make_deployment(const MachineSpec& machine,
                                  std::int64_t tp_degree);

/// Power-of-two divisors of the accelerator count, ascending.
std::vector<std::int64_t> enumerate_tp_degrees(const MachineSpec& machine);

}  // namespace hetserve
