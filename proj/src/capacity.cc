// SPDX-License-Identifier: Apache-2.0

#include "hetserve/capacity.h"

#include <fmt/format.h>

#include "hetserve/errors.h"

namespace hetserve {

void RunningTokens::add(Tokens input_len, Tokens predicted_output_len) {
  input_sum += input_len;
  predicted_output_sum += predicted_output_len;
}

void RunningTokens::remove(Tokens input_len, Tokens predicted_output_len) {
  if (input_len > input_sum || predicted_output_len > predicted_output_sum) {
    throw StateError(fmt::format(
        "running tokens underflow: removing ({}, {}) from ({}, {})", input_len,
        predicted_output_len, input_sum, predicted_output_sum));
  }
  input_sum -= input_len;
  predicted_output_sum -= predicted_output_len;
}

std::int64_t kv_bytes_per_token(const ModelSpec& model) {
  return 2 * model.layers * model.hidden_dim * model.bytes_per_param;
}

KvBudget kv_budget(const MachineSpec& machine, std::int64_t tp_degree,
                   const ModelSpec& model, const EngineOverheads& overheads) {
  if (tp_degree < 1 || machine.accelerator_count % tp_degree != 0) {
    throw ValidationError(fmt::format("machine '{}': tp_degree {} does not divide {}",
                                      machine.name, tp_degree, machine.accelerator_count));
  }
  const double pool = static_cast<double>(tp_degree) *
                      static_cast<double>(machine.accelerator_mem) *
                      overheads.mem_utilization_fraction;
  const double weights =
      static_cast<double>(model.param_count) * static_cast<double>(model.bytes_per_param);
  return {pool - static_cast<double>(overheads.static_overhead) - weights};
}

MemoryVerdict check_memory_constraint(const KvBudget& budget, const WorkloadLimits& limits,
                                      const ModelSpec& model) {
  MemoryVerdict v;
  v.required_bytes = static_cast<double>(kv_bytes_per_token(model)) *
                     static_cast<double>(limits.max_input_len + limits.max_output_len);
  v.slack_bytes = budget.total_bytes - v.required_bytes;
  v.feasible = budget.total_bytes >= v.required_bytes;
  return v;
}

double kv_usage(const RunningTokens& running, const ModelSpec& model, const KvBudget& budget) {
  if (!(budget.total_bytes > 0.0)) {
    throw ValidationError(
        fmt::format("kv_usage needs a positive budget, got {} bytes", budget.total_bytes));
  }
  return static_cast<double>(kv_bytes_per_token(model)) *
         static_cast<double>(running.total()) / budget.total_bytes;
}

}  // namespace hetserve
