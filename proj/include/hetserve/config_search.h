// SPDX-License-Identifier: Apache-2.0
//
// Static-batching throughput estimate of a deployment and exhaustive search
// over per-machine tensor-parallel degrees.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hetserve/capacity.h"
#include "hetserve/latency_model.h"
#include "hetserve/types.h"

namespace hetserve {

/// Half-open range [begin, end) of request indices.
struct BatchRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const BatchRange&) const = default;
};

struct BatchPlan {
  std::vector<BatchRange> batches;
  std::vector<double> per_batch_time;  // filled by estimate_instance
};

/// KV bytes a static batch reserves: inputs plus |batch| copies of its
/// longest output.
double static_batch_kv_bytes(std::span<const Request> batch, const ModelSpec& model);

/// Greedy contiguous grouping in input order using the true output lengths.
/// A batch closes at the first request that would overflow the budget.
/// Throws InfeasibleError naming a request that cannot fit on its own.
BatchPlan plan_static_batches(std::span<const Request> requests, const KvBudget& budget,
                              const ModelSpec& model);

/// Prefill plus decode time at b = |batch|, I = longest input, O = longest
/// output.
double estimate_batch_time(std::span<const Request> batch, const LatencyParams& params);

struct InstanceEstimate {
  BatchPlan plan;
  Tokens token_count = 0;
  double total_time = 0.0;
  double tokens_per_sec = 0.0;
};

InstanceEstimate estimate_instance(std::span<const Request> requests, const KvBudget& budget,
                                   const ModelSpec& model, const LatencyParams& params);

/// tokens / total batch time for one instance processing all `requests`.
double estimate_instance_throughput(std::span<const Request> requests,
                                    const KvBudget& budget, const ModelSpec& model,
                                    const LatencyParams& params);

struct MachineEstimate {
  MachineDeployment deployment;
  KvBudget budget;
  MemoryVerdict verdict;
  double instance_tokens_per_sec = 0.0;
  double machine_tokens_per_sec = 0.0;  // instance rate * u / t
};

struct ThroughputEstimate {
  std::vector<MachineEstimate> machines;
  double system_tokens_per_sec = 0.0;
};

/// Throws InfeasibleError naming the machine and its memory slack when any
/// machine violates the memory constraint, and ValidationError when params
/// are missing.
ThroughputEstimate estimate_system_throughput(const ClusterSpec& cluster,
                                              const DeploymentConfig& config,
                                              std::span<const Request> requests,
                                              const ParamsTable& params);

struct RankedConfig {
  DeploymentConfig config;
  ThroughputEstimate estimate;
};

struct RejectedConfig {
  DeploymentConfig config;
  std::vector<std::string> reasons;
};

struct SearchResult {
  std::vector<RankedConfig> ranked;  // best first
  std::vector<RejectedConfig> infeasible;
  std::size_t candidates = 0;
};

/// Evaluates every combination of enumerate_tp_degrees across machines.
/// Ranking is by system throughput, descending, ties by tp degrees ascending.
/// Throws InfeasibleError listing every violation when nothing is feasible.
SearchResult search_optimal_config(const ClusterSpec& cluster,
                                   std::span<const Request> requests,
                                   const ParamsTable& params);

/// Line-delimited records (one per candidate, feasible first).
std::string serialize_plan_report(const SearchResult& result);

/// Aligned human-readable table; the first line names the best config.
std::string format_plan_table(const SearchResult& result);

}  // namespace hetserve
