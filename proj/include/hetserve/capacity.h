// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "hetserve/types.h"

namespace hetserve {

/// Bytes an instance can spend on KV cache. May be negative: a negative or
/// too-small budget is reported by check_memory_constraint, not clamped.
struct KvBudget {
  double total_bytes = 0.0;
};

/// Input and predicted-output tokens of the requests running on an instance.
struct RunningTokens {
  Tokens input_sum = 0;
  Tokens predicted_output_sum = 0;

  Tokens total() const { return input_sum + predicted_output_sum; }
  void add(Tokens input_len, Tokens predicted_output_len);
  /// Throws StateError if either sum would go negative.
  void remove(Tokens input_len, Tokens predicted_output_len);
  bool operator==(const RunningTokens&) const = default;
};

/// 2 * layers * hidden_dim * bytes_per_param.
std::int64_t kv_bytes_per_token(const ModelSpec& model);

/// t*d*phi - delta - Phi*bytes for an instance of `tp_degree` accelerators.
/// Throws ValidationError if tp_degree does not divide the accelerator count.
KvBudget kv_budget(const MachineSpec& machine, std::int64_t tp_degree,
                   const ModelSpec& model, const EngineOverheads& overheads);

struct MemoryVerdict {
  bool feasible = false;
  double required_bytes = 0.0;  // one request of I_max + O_max tokens
  double slack_bytes = 0.0;     // budget - required; negative when infeasible
};

/// An instance must hold the KV cache of at least one maximal request.
MemoryVerdict check_memory_constraint(const KvBudget& budget, const WorkloadLimits& limits,
                                      const ModelSpec& model);

/// Fraction of the budget claimed by `running`; may exceed 1.
/// Throws ValidationError for a non-positive budget.
double kv_usage(const RunningTokens& running, const ModelSpec& model, const KvBudget& budget);

}  // namespace hetserve
