// SPDX-License-Identifier: Apache-2.0
//
// Deterministic discrete-event simulation of a cluster of instances serving a
// request trace under a scheduling policy.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetserve/latency_model.h"
#include "hetserve/scheduler.h"
#include "hetserve/types.h"

namespace hetserve {

/// Poisson arrivals at `rate` requests/s, or everything at t=0 when unset.
struct ArrivalProcess {
  std::optional<double> rate;

  bool is_infinite() const { return !rate.has_value(); }
  std::string describe() const;
};

/// Arrival time of each of `count` requests, nondecreasing. Exponential gaps
/// with mean 1/rate drawn from a generator seeded with `seed`.
std::vector<double> generate_arrivals(std::size_t count, const ArrivalProcess& arrival,
                                      std::uint64_t seed);

enum class BatchingMode { kStatic, kContinuous };

std::string_view mode_name(BatchingMode mode);
BatchingMode parse_mode(std::string_view name);

/// Seed of the output-length predictor when the policy record sets none.
std::uint64_t derive_predictor_seed(std::uint64_t seed);

struct Scenario {
  ClusterSpec cluster;
  DeploymentConfig config;
  ParamsTable params;
  std::vector<Request> trace;
  ArrivalProcess arrival;
  PolicyConfig policy;
  BatchingMode mode = BatchingMode::kContinuous;
  std::uint64_t seed = 42;
};

/// Scenario document (JSON). Paths are resolved relative to `base_dir`:
/// {"cluster_spec", "params", "trace", "deployment": [{"machine",
/// "tp_degree", "instance_count"?}], "arrival": {"rate": <number>|"inf"},
/// "policy": <policy record>, "mode": "static"|"continuous", "seed"}.
Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

/// Instances in deployment order; ids are "<machine>/<index>". Throws
/// InfeasibleError if an instance violates the memory constraint.
std::vector<InstanceHandle> build_instances(const ClusterSpec& cluster,
                                            const DeploymentConfig& config,
                                            const ParamsTable& params);

/// The trace with predicted_output_len filled by the scenario's predictor.
std::vector<Request> predicted_trace(const Scenario& scenario);

struct InstanceMetrics {
  std::string id;
  double completion_time = 0.0;
  std::int64_t request_count = 0;
  Tokens token_count = 0;
  double peak_kv_usage = 0.0;
};

struct RequestOutcome {
  std::size_t instance = 0;
  double arrival = 0.0;
  double departure = 0.0;
};

struct SimMetrics {
  Policy policy = Policy::kOS;
  ArrivalProcess arrival;
  BatchingMode mode = BatchingMode::kContinuous;
  double system_throughput = 0.0;  // tokens / makespan
  double makespan = 0.0;
  double completion_time_spread = 0.0;  // max - min instance completion time
  std::vector<InstanceMetrics> per_instance;
  std::vector<std::size_t> assignments;   // instance per request, dispatch order
  std::vector<RequestOutcome> requests;   // indexed like the trace
  double residual_load = 0.0;             // max |load| after all completions
  Tokens residual_tokens = 0;             // sum of running tokens after the run
  std::size_t oversized_dispatches = 0;
};

/// Static batching: every request is dispatched at t=0, each instance runs its
/// queue as greedy static batches back to back. Requires infinite arrival rate.
SimMetrics run_static(const Scenario& scenario);

/// Continuous batching with arrivals, scheduling decisions and completion
/// hooks interleaved in time. Events at equal times run step completions
/// before arrivals, then by instance index and request index.
SimMetrics run_continuous(const Scenario& scenario);

SimMetrics simulate(const Scenario& scenario);

/// Runs each policy on the same arrivals and predictions.
std::vector<SimMetrics> run_policy_comparison(const Scenario& scenario,
                                              std::span<const PolicyConfig> policies);

/// The policies compared by default: RR, SI, MB, OS, WRR. Shares theta and
/// predictor with `base`; WRR weights come from `base` or, when absent, from
/// each instance's tensor-parallel degree.
std::vector<PolicyConfig> default_comparison_policies(const PolicyConfig& base,
                                                      const std::vector<InstanceHandle>& instances);

/// One JSON line per run.
std::string serialize_metrics(const SimMetrics& metrics);
std::string format_metrics_table(std::span<const SimMetrics> runs);

}  // namespace hetserve
