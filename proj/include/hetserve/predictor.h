// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "hetserve/types.h"

namespace hetserve {

enum class PredictorMode {
  kOracle,  // the true output length
  kMean,    // round(mean) for every request
  kNormal,  // round(N(mean, stddev)), clamped to [1, O_max]
};

struct PredictorConfig {
  PredictorMode mode = PredictorMode::kOracle;
  std::optional<double> mean;
  std::optional<double> stddev;
  std::optional<std::uint64_t> seed;
};

/// Fills an unset mean/stddev from the output lengths of `trace`.
PredictorConfig with_trace_statistics(PredictorConfig config, std::span<const Request> trace);

/// round(value) clamped to [1, max_output_len].
Tokens clamp_prediction(double value, Tokens max_output_len);

/// Output-length predictor. Normal-mode draws come from one seeded engine, so
/// a fixed call order reproduces the same predictions.
class OutputLengthPredictor {
 public:
  OutputLengthPredictor(PredictorConfig config, Tokens max_output_len,
                        std::uint64_t default_seed);

  Tokens predict(const Request& request);

  /// Overwrites predicted_output_len of every request, in order.
  void apply(std::vector<Request>& requests);

 private:
  PredictorConfig config_;
  Tokens max_output_len_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

}  // namespace hetserve
