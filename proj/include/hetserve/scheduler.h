// SPDX-License-Identifier: Apache-2.0
//
// Runtime request scheduling across instances of unequal capability.
//
// For each request r and instance s the scheduler computes a workload
//
//   w = T * exp(theta * kv_usage(s))
//
// where T is the per-request share of the time instance s would need to run
// a batch of identical copies of r that exactly fills its KV budget, and
// kv_usage counts the inputs plus predicted outputs of requests still
// running on s. The request goes to the instance that minimizes the maximum
// accumulated workload; the recorded w is subtracted again when the request
// completes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hetserve/capacity.h"
#include "hetserve/latency_model.h"
#include "hetserve/predictor.h"
#include "hetserve/types.h"

namespace hetserve {

enum class Policy {
  kOS,   // workload-based min-max (capacity and memory aware)
  kRR,   // round robin
  kWRR,  // smooth weighted round robin
  kSI,   // everything to the first instance
  kMB,   // min-max with the time term fixed at 1 (memory only)
};

std::string_view policy_name(Policy policy);
/// Accepts "OS", "RR", "WRR", "SI", "MB" (case-insensitive).
Policy parse_policy(std::string_view name);

struct PolicyConfig {
  Policy policy = Policy::kOS;
  double theta = 2.0;
  std::vector<double> wrr_weights;
  PredictorConfig predictor;

  /// Throws ValidationError (theta <= 0, missing or non-positive weights).
  void validate(std::size_t instance_count) const;
};

/// Policy record: {"policy", "theta", "wrr_weights"?, "predictor": {"mode":
/// "oracle"|"mean"|"normal", "mean"?, "stddev"?, "seed"?}}.
PolicyConfig parse_policy_record(std::string_view text);
std::string serialize_policy_record(const PolicyConfig& config);

struct InstanceHandle {
  std::string id;
  std::string machine;
  std::int64_t tp_degree = 1;
  LatencyParams params;
  KvBudget budget;
};

struct IdealBatch {
  std::int64_t size = 1;
  bool oversized = false;  // the request alone exceeds the budget
};

/// floor(budget / (bytes per token * (I + predicted O))), at least 1.
IdealBatch ideal_batch_size(const Request& request, const KvBudget& budget,
                            const ModelSpec& model);

/// (prefill + decode time of the ideal batch) / batch size. Throws
/// ValidationError when the model yields a non-positive time.
double per_request_cost(const LatencyParams& params, const Request& request,
                        std::int64_t ideal_batch);

double workload(double cost, double kv_usage, double theta);

/// Index s minimizing max_j(loads[j] + (j == s ? increments[s] : 0)), ties to
/// the lowest index. Instances with allowed[s] == false are skipped when
/// `allowed` is nonempty. Throws ValidationError when nothing is eligible.
std::size_t choose_min_max(std::span<const double> loads, std::span<const double> increments,
                           const std::vector<bool>& allowed = {});

struct Dispatch {
  std::size_t instance = 0;
  double workload = 0.0;
  Tokens tokens = 0;  // I + predicted O recorded for the completion hook
  bool oversized = false;
};

struct SchedulerSnapshot {
  std::vector<double> loads;
  std::vector<RunningTokens> running;
  std::vector<double> kv_usage;
  std::size_t in_flight = 0;
};

/// Thread-safe: decisions and completions are serialized by one mutex.
class Scheduler {
 public:
  Scheduler(std::vector<InstanceHandle> instances, ModelSpec model, PolicyConfig policy);

  /// w of `request` on every instance for the current state, using the
  /// configured policy's time term (1 for MB).
  std::vector<double> candidate_workloads(const Request& request) const;

  /// Picks an instance for `request` (using predicted_output_len) and commits
  /// the bookkeeping. Instances listed in `excluded` are not eligible.
  /// Throws StateError for an id already in flight.
  Dispatch dispatch(const Request& request, std::span<const std::size_t> excluded = {});

  /// Completion hook: subtracts exactly what dispatch recorded.
  void complete(const std::string& request_id);

  /// Same reversal as complete(), for a request that failed.
  void abort(const std::string& request_id);

  bool is_in_flight(const std::string& request_id) const;
  SchedulerSnapshot snapshot() const;

  const std::vector<InstanceHandle>& instances() const { return instances_; }
  const PolicyConfig& policy() const { return policy_; }
  const ModelSpec& model() const { return model_; }

 private:
  struct InFlight {
    std::size_t instance;
    double workload;
    Tokens input_len;
    Tokens predicted_output_len;
  };

  std::vector<double> workloads_locked(const Request& request, bool unit_cost) const;
  std::size_t choose_locked(const std::vector<double>& workloads,
                            const std::vector<bool>& allowed);
  void release(const std::string& request_id);
  void add_load(std::size_t instance, double delta);

  const std::vector<InstanceHandle> instances_;
  const ModelSpec model_;
  const PolicyConfig policy_;

  mutable std::mutex mu_;
  // loads_ = load_sum_ + load_comp_ (Neumaier summation), reset to exactly 0
  // whenever an instance has nothing in flight.
  std::vector<double> loads_;
  std::vector<double> load_sum_;
  std::vector<double> load_comp_;
  std::vector<std::size_t> instance_in_flight_;
  std::vector<RunningTokens> running_;
  std::unordered_map<std::string, InFlight> in_flight_;
  std::size_t rr_next_ = 0;
  std::vector<double> wrr_current_;
};

}  // namespace hetserve
