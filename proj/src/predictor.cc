// SPDX-License-Identifier: Apache-2.0

#include "hetserve/predictor.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "hetserve/errors.h"

namespace hetserve {

PredictorConfig with_trace_statistics(PredictorConfig config, std::span<const Request> trace) {
  if ((config.mean && config.stddev) || trace.empty()) return config;
  double sum = 0.0;
  for (const auto& r : trace) sum += static_cast<double>(r.output_len);
  const double mean = sum / static_cast<double>(trace.size());
  double sq = 0.0;
  for (const auto& r : trace) {
    const double d = static_cast<double>(r.output_len) - mean;
    sq += d * d;
  }
  if (!config.mean) config.mean = mean;
  if (!config.stddev) config.stddev = std::sqrt(sq / static_cast<double>(trace.size()));
  return config;
}

Tokens clamp_prediction(double value, Tokens max_output_len) {
  if (!std::isfinite(value)) return 1;
  const double rounded = std::round(value);
  if (rounded < 1.0) return 1;
  if (rounded > static_cast<double>(max_output_len)) return max_output_len;
  return static_cast<Tokens>(rounded);
}

OutputLengthPredictor::OutputLengthPredictor(PredictorConfig config, Tokens max_output_len,
                                             std::uint64_t default_seed)
    : config_(config),
      max_output_len_(max_output_len),
      rng_(config.seed.value_or(default_seed)) {
  if (max_output_len_ < 1) throw ValidationError("predictor needs max_output_len >= 1");
  if (config_.mode != PredictorMode::kOracle) {
    if (!config_.mean) throw ValidationError("predictor: mean is required");
    if (config_.mode == PredictorMode::kNormal) {
      if (!config_.stddev || *config_.stddev < 0.0) {
        throw ValidationError("predictor: normal mode needs stddev >= 0");
      }
      normal_ = std::normal_distribution<double>(*config_.mean, *config_.stddev);
    }
  }
}

Tokens OutputLengthPredictor::predict(const Request& request) {
  switch (config_.mode) {
    case PredictorMode::kOracle:
      return request.output_len;
    case PredictorMode::kMean:
      return clamp_prediction(*config_.mean, max_output_len_);
    case PredictorMode::kNormal:
      if (*config_.stddev == 0.0) return clamp_prediction(*config_.mean, max_output_len_);
      return clamp_prediction(normal_(rng_), max_output_len_);
  }
  return request.output_len;
}

void OutputLengthPredictor::apply(std::vector<Request>& requests) {
  for (auto& r : requests) r.predicted_output_len = predict(r);
}

}  // namespace hetserve
