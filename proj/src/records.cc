// SPDX-License-Identifier: Apache-2.0

#include "records.h"

#include <fmt/format.h>

#include "hetserve/errors.h"

namespace hetserve::detail {

PolicyConfig policy_from_json(const json& rec, std::string_view where) {
  check_keys(rec, {"policy", "theta", "wrr_weights", "predictor"}, where);
  PolicyConfig config;
  if (rec.contains("policy")) config.policy = parse_policy(get_string(rec, "policy", where));
  if (rec.contains("theta")) config.theta = get_number(rec, "theta", where);
  if (rec.contains("wrr_weights")) {
    const json& w = rec.at("wrr_weights");
    if (!w.is_array()) throw ValidationError(fmt::format("{}: wrr_weights must be an array", where));
    for (const auto& v : w) {
      if (!v.is_number()) throw ValidationError(fmt::format("{}: wrr_weights must be numbers", where));
      config.wrr_weights.push_back(v.get<double>());
    }
  }
  if (rec.contains("predictor")) {
    const json& p = rec.at("predictor");
    std::string pw = fmt::format("{}.predictor", where);
    check_keys(p, {"mode", "mean", "stddev", "seed"}, pw);
    std::string mode = p.contains("mode") ? get_string(p, "mode", pw) : "oracle";
    if (mode == "oracle") {
      config.predictor.mode = PredictorMode::kOracle;
    } else if (mode == "mean") {
      config.predictor.mode = PredictorMode::kMean;
    } else if (mode == "normal") {
      config.predictor.mode = PredictorMode::kNormal;
    } else {
      throw ValidationError(
          fmt::format("{}: mode must be oracle, mean or normal, got '{}'", pw, mode));
    }
    if (p.contains("mean")) config.predictor.mean = get_number(p, "mean", pw);
    if (p.contains("stddev")) config.predictor.stddev = get_number(p, "stddev", pw);
    if (p.contains("seed")) {
      std::int64_t seed = get_int(p, "seed", pw);
      config.predictor.seed = static_cast<std::uint64_t>(seed);
    }
  }
  return config;
}

json policy_to_json(const PolicyConfig& config) {
  json rec;
  rec["policy"] = std::string(policy_name(config.policy));
  rec["theta"] = config.theta;
  if (!config.wrr_weights.empty()) rec["wrr_weights"] = config.wrr_weights;
  json p;
  switch (config.predictor.mode) {
    case PredictorMode::kOracle: p["mode"] = "oracle"; break;
    case PredictorMode::kMean: p["mode"] = "mean"; break;
    case PredictorMode::kNormal: p["mode"] = "normal"; break;
  }
  if (config.predictor.mean) p["mean"] = *config.predictor.mean;
  if (config.predictor.stddev) p["stddev"] = *config.predictor.stddev;
  if (config.predictor.seed) p["seed"] = *config.predictor.seed;
  rec["predictor"] = std::move(p);
  return rec;
}

}  // namespace hetserve::detail
