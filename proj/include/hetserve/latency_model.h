// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hetserve/types.h"

namespace hetserve {

/// Coefficients of the linear batch-time models.
///
/// Prefill of a batch of `b` requests whose longest input is `I`:
///   coef[0]*b*I + coef[1]*b + coef[2]*I + coef[3]
/// One decode iteration at batch size `b` and cached length `L`:
///   coef[4]*b*L + coef[5]*b + coef[6]*L + coef[7]
struct LatencyParams {
  std::array<double, 8> coef{};

  static LatencyParams from(double p1, double p2, double p3, double p4, double p5,
                            double p6, double p7, double p8) {
    return {{p1, p2, p3, p4, p5, p6, p7, p8}};
  }

  LatencyParams scaled(double factor) const;
  bool all_finite() const;
  bool operator==(const LatencyParams&) const = default;
};

double prefill_time(const LatencyParams& params, std::int64_t batch_size,
                    Tokens input_len);

double decode_iteration_time(const LatencyParams& params, Tokens cached_len,
                             std::int64_t batch_size);

/// Total decode time for `output_len` iterations starting from `input_len`
/// cached tokens; closed form of summing decode_iteration_time(I + k, b).
double decode_time(const LatencyParams& params, std::int64_t batch_size,
                   Tokens input_len, Tokens output_len);

enum class Phase { kPrefill, kDecode };

/// One profiled batch. `seconds` is the prefill time or the whole-batch decode
/// time, depending on `phase`.
struct ProfilingSample {
  Phase phase = Phase::kPrefill;
  std::int64_t batch_size = 0;
  Tokens input_len = 0;
  Tokens output_len = 0;
  double seconds = 0.0;
};

struct FitResult {
  LatencyParams params;
  double prefill_residual_norm = 0.0;
  double decode_residual_norm = 0.0;
  double residual_norm = 0.0;  // sqrt of the summed squares of both phases
  double prefill_condition = 0.0;
  double decode_condition = 0.0;
  /// Set when the fitted model predicts a non-positive time somewhere on the
  /// profiled (b, I, O) grid. Consumers must treat such params as unusable.
  bool nonpositive_on_grid = false;
};

/// Least-squares fit of both phases. Throws FitError on too few samples or a
/// rank-deficient design.
FitResult fit_params(const std::vector<ProfilingSample>& prefill_samples,
                     const std::vector<ProfilingSample>& decode_samples);

/// Fitted parameters keyed by (machine name, tensor-parallel degree).
class ParamsTable {
 public:
  struct Entry {
    LatencyParams params;
    double residual_norm = 0.0;
  };

  void set(const std::string& machine, std::int64_t tp_degree, LatencyParams params,
           double residual_norm = 0.0);
  const LatencyParams* find(std::string_view machine, std::int64_t tp_degree) const;
  /// Throws ValidationError when absent.
  const LatencyParams& at(std::string_view machine, std::int64_t tp_degree) const;
  const std::map<std::pair<std::string, std::int64_t>, Entry>& entries() const {
    return entries_;
  }
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::pair<std::string, std::int64_t>, Entry> entries_;
};

/// Fitted-parameter file: one record per line
/// {"machine_name", "tp_degree", "p1".."p8", "residual_norm"}.
ParamsTable parse_params(std::string_view text);
std::string serialize_params(const ParamsTable& table);
ParamsTable load_params(const std::filesystem::path& path);

/// Profiling sample file: one record per line
/// {"phase": "prefill"|"decode", "batch_size", "input_len", "output_len",
///  "seconds"} with optional "machine_name" and "tp_degree" grouping keys.
struct SampleGroup {
  std::string machine_name = "default";
  std::int64_t tp_degree = 1;
  std::vector<ProfilingSample> prefill;
  std::vector<ProfilingSample> decode;
};
std::vector<SampleGroup> parse_samples(std::string_view text);
std::string serialize_samples(const std::vector<SampleGroup>& groups);

}  // namespace hetserve
