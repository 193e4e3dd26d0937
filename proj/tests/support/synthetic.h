// SPDX-License-Identifier: Apache-2.0
//
// Synthetic clusters and latency models shared by the test suites.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hetserve/cluster_spec.h"
#include "hetserve/latency_model.h"
#include "hetserve/trace.h"
#include "hetserve/types.h"

namespace hetserve::testing {

// 8B-parameter FP16 model with 32 layers and hidden size 4096.
inline ModelSpec llama8b() { return {32, 4096, 8'000'000'000, 2}; }

// One 8x32GB machine; 90% memory fraction and 2 GB engine overhead.
inline ClusterSpec single_v100_machine() {
  ClusterSpec c;
  c.model = llama8b();
  c.engine = {0.9, 2'000'000'000};
  c.machines = {{"v100x8", 8, 32'000'000'000, "V100"}};
  c.limits = {2048, 2048};
  return c;
}

// Latency model of one instance at tensor-parallel degree 1: compute-bound
// prefill, weight-streaming decode with per-request and per-cached-token
// terms.
inline LatencyParams base_params() {
  return LatencyParams::from(2.7e-4, 1.0e-3, 1.0e-5, 1.0e-2,  //
                             5.8e-7, 2.7e-4, 1.0e-6, 1.8e-2);
}

// Coefficients sized so every term contributes a comparable share of the
// timings on the profiling grid (b up to 8, I up to 512, O up to 256).
inline LatencyParams fit_truth_params() {
  return LatencyParams::from(1.0e-5, 2.5e-3, 4.0e-5, 1.0e-2,  //
                             2.5e-7, 8.0e-5, 1.0e-6, 3.0e-4);
}

// Tensor parallelism speeds every term up sublinearly (t^0.7).
inline LatencyParams params_for_tp(std::int64_t tp) {
  return base_params().scaled(std::pow(static_cast<double>(tp), -0.7));
}

inline ParamsTable v100_params_table() {
  ParamsTable table;
  for (std::int64_t t : {1, 2, 4, 8}) table.set("v100x8", t, params_for_tp(t));
  return table;
}

// Chat-like lengths: long-tailed inputs and outputs.
inline std::vector<Request> chat_trace(std::size_t count, std::uint64_t seed,
                                       WorkloadLimits limits = {2048, 2048}) {
  return generate_trace(count, {LengthDistribution::Kind::kLognormal, 250.0, 300.0},
                        {LengthDistribution::Kind::kLognormal, 200.0, 200.0}, limits, seed);
}

// Tensor-parallel ranking fixture: a 12.6B-parameter model that leaves t=1
// short of KV memory, per-request decode cost, and an all-reduce term that
// grows with log2(t).
inline ClusterSpec ranking_machine() {
  ClusterSpec c = single_v100_machine();
  c.model = {40, 5120, 12'600'000'000, 2};
  c.limits = {768, 768};
  return c;
}

inline LatencyParams ranking_params_for_tp(std::int64_t tp) {
  const double t = static_cast<double>(tp);
  LatencyParams p = LatencyParams::from(1.0e-5, 1.0e-3, 1.0e-5, 1.0e-2,  //
                                        1.0e-7, 2.0e-3, 1.0e-6, 1.0e-2)
                        .scaled(std::pow(t, -0.8));
  const double comm = 0.002 * std::log2(t);
  p.coef[3] += 5.0 * comm;
  p.coef[7] += comm;
  return p;
}

inline ParamsTable ranking_params_table() {
  ParamsTable table;
  for (std::int64_t t : {1, 2, 4, 8}) table.set("v100x8", t, ranking_params_for_tp(t));
  return table;
}

// Output lengths with little spread, so static batches waste few decode slots.
inline std::vector<Request> ranking_trace(std::size_t count, std::uint64_t seed) {
  return generate_trace(count, {LengthDistribution::Kind::kLognormal, 250.0, 60.0},
                        {LengthDistribution::Kind::kLognormal, 200.0, 20.0},
                        ranking_machine().limits, seed);
}

// Two machines whose single instances differ 4:1 in both KV budget
// (14.4 GB vs 3.6 GB) and latency coefficients.
inline ClusterSpec two_tier_cluster() {
  ClusterSpec c;
  c.model = llama8b();
  c.engine = {0.9, 2'000'000'000};
  c.machines = {{"strong", 4, 9'000'000'000, "X"}, {"weak", 1, 24'000'000'000, "Y"}};
  c.limits = {2048, 2048};
  return c;
}

inline LatencyParams strong_params() {
  return LatencyParams::from(5.0e-5, 1.0e-4, 1.0e-7, 1.0e-4,  //
                             5.0e-7, 1.0e-5, 1.0e-8, 5.0e-4);
}

inline ParamsTable two_tier_params() {
  ParamsTable table;
  table.set("strong", 4, strong_params());
  table.set("weak", 1, strong_params().scaled(4.0));
  return table;
}

inline DeploymentConfig two_tier_deployment() {
  const ClusterSpec c = two_tier_cluster();
  DeploymentConfig config;
  config.per_machine = {make_deployment(c.machines[0], 4), make_deployment(c.machines[1], 1)};
  return config;
}

// Prompt-heavy requests with moderately sized answers.
inline std::vector<Request> two_tier_trace(std::size_t count, std::uint64_t seed) {
  return generate_trace(count, {LengthDistribution::Kind::kLognormal, 800.0, 600.0},
                        {LengthDistribution::Kind::kLognormal, 150.0, 50.0},
                        two_tier_cluster().limits, seed);
}

// Two roomy machines for the gateway: every request fits at once on either
// instance, and decode steps cost nearly the same at any batch size, so
// co-batched requests finish close together.
inline ClusterSpec gateway_cluster() {
  ClusterSpec c;
  c.model = llama8b();
  c.engine = {0.9, 2'000'000'000};
  c.machines = {{"fast", 4, 40'000'000'000, "X"}, {"slow", 1, 80'000'000'000, "Y"}};
  c.limits = {2048, 2048};
  return c;
}

// One decode step is about `step_seconds` at the trace's lengths.
inline ParamsTable gateway_params(double step_seconds) {
  const LatencyParams p = LatencyParams::from(1.0e-6, 1.0e-5, 1.0e-5, 1.0e-2,  //
                                              1.0e-9, 1.0e-6, 1.0e-6, 1.0e-2)
                              .scaled(step_seconds / 1.0e-2);
  ParamsTable table;
  table.set("fast", 4, p);
  table.set("slow", 1, p.scaled(2.0));
  return table;
}

inline DeploymentConfig gateway_deployment() {
  const ClusterSpec c = gateway_cluster();
  DeploymentConfig config;
  config.per_machine = {make_deployment(c.machines[0], 4), make_deployment(c.machines[1], 1)};
  return config;
}

inline std::vector<Request> gateway_trace(std::size_t count, std::uint64_t seed) {
  return generate_trace(count, {LengthDistribution::Kind::kLognormal, 200.0, 20.0},
                        {LengthDistribution::Kind::kLognormal, 100.0, 5.0},
                        gateway_cluster().limits, seed);
}

}  // namespace hetserve::testing
