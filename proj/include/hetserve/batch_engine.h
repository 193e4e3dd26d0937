// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "hetserve/capacity.h"
#include "hetserve/latency_model.h"
#include "hetserve/types.h"

namespace hetserve {

/// Iteration-level (continuous) batching on one instance, independent of any
/// clock. The caller alternates begin_step() / finish_step() and advances its
/// own time by Step::duration in between.
///
/// Admission is FCFS: at each step boundary queued jobs are admitted while
/// the KV reservation of all admitted jobs, each counted at its full
/// input + output length, stays within the budget. Newly admitted jobs are
/// prefilled together in one step; otherwise every admitted job generates one
/// token per decode step, priced at the batch size and the longest cached
/// length. A job departs after its last output token.
class ContinuousBatchEngine {
 public:
  struct Job {
    std::size_t key = 0;
    Tokens input_len = 0;
    Tokens output_len = 0;
  };

  enum class StepKind { kPrefill, kDecode };

  struct Step {
    StepKind kind = StepKind::kDecode;
    double duration = 0.0;
    std::size_t batch_size = 0;
  };

  ContinuousBatchEngine(LatencyParams params, KvBudget budget, const ModelSpec& model);

  /// Throws InfeasibleError when the job alone exceeds the budget.
  void enqueue(const Job& job);

  /// Admits what fits and describes the next step; nullopt when there is
  /// nothing to run. Must be followed by finish_step() before the next call.
  std::optional<Step> begin_step();

  /// Completes the step from begin_step(); returns departed keys in
  /// admission order.
  std::vector<std::size_t> finish_step();

  bool idle() const { return queue_.empty() && active_.empty(); }
  bool stepping() const { return current_.has_value(); }
  std::size_t queued() const { return queue_.size(); }
  std::size_t active() const { return active_.size(); }
  double reserved_bytes() const;
  double peak_usage() const { return peak_usage_; }
  double budget_bytes() const { return budget_.total_bytes; }

 private:
  struct Active {
    Job job;
    Tokens generated = 0;
    bool prefilled = false;
  };

  LatencyParams params_;
  KvBudget budget_;
  double bytes_per_token_;
  std::deque<Job> queue_;
  std::vector<Active> active_;
  Tokens reserved_tokens_ = 0;
  std::optional<Step> current_;
  double peak_usage_ = 0.0;
};

}  // namespace hetserve
