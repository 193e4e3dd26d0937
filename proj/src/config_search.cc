// SPDX-License-Identifier: Apache-2.0

#include "hetserve/config_search.h"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <optional>

#include "hetserve/errors.h"
#include "json_util.h"

namespace hetserve {

using detail::json;

double static_batch_kv_bytes(std::span<const Request> batch, const ModelSpec& model) {
  Tokens input_sum = 0;
  Tokens max_output = 0;
  for (const auto& r : batch) {
    input_sum += r.input_len;
    max_output = std::max(max_output, r.output_len);
  }
  const double per_token = static_cast<double>(kv_bytes_per_token(model));
  return per_token * static_cast<double>(input_sum) +
         static_cast<double>(batch.size()) * per_token * static_cast<double>(max_output);
}

BatchPlan plan_static_batches(std::span<const Request> requests, const KvBudget& budget,
                              const ModelSpec& model) {
  const double per_token = static_cast<double>(kv_bytes_per_token(model));
  BatchPlan plan;
  std::size_t begin = 0;
  while (begin < requests.size()) {
    Tokens input_sum = 0;
    Tokens max_output = 0;
    std::size_t end = begin;
    while (end < requests.size()) {
      const Request& r = requests[end];
      const Tokens next_input = input_sum + r.input_len;
      const Tokens next_max = std::max(max_output, r.output_len);
      const double kv = per_token * static_cast<double>(next_input) +
                        static_cast<double>(end - begin + 1) * per_token *
                            static_cast<double>(next_max);
      if (kv > budget.total_bytes) break;
      input_sum = next_input;
      max_output = next_max;
      ++end;
    }
    if (end == begin) {
      const Request& r = requests[begin];
      throw InfeasibleError(fmt::format(
          "request '{}' ({} input + {} output tokens) needs {:.0f} bytes of KV cache "
          "but the instance budget is {:.0f}",
          r.id, r.input_len, r.output_len, per_token * static_cast<double>(r.total_tokens()),
          budget.total_bytes));
    }
    plan.batches.push_back({begin, end});
    begin = end;
  }
  return plan;
}

double estimate_batch_time(std::span<const Request> batch, const LatencyParams& params) {
  if (batch.empty()) throw ValidationError("estimate_batch_time: empty batch");
  Tokens max_input = 0;
  Tokens max_output = 0;
  for (const auto& r : batch) {
    max_input = std::max(max_input, r.input_len);
    max_output = std::max(max_output, r.output_len);
  }
  const auto b = static_cast<std::int64_t>(batch.size());
  return prefill_time(params, b, max_input) + decode_time(params, b, max_input, max_output);
}

InstanceEstimate estimate_instance(std::span<const Request> requests, const KvBudget& budget,
                                   const ModelSpec& model, const LatencyParams& params) {
  InstanceEstimate est;
  est.plan = plan_static_batches(requests, budget, model);
  for (const auto& range : est.plan.batches) {
    const double t =
        estimate_batch_time(requests.subspan(range.begin, range.size()), params);
    est.plan.per_batch_time.push_back(t);
    est.total_time += t;
  }
  for (const auto& r : requests) est.token_count += r.total_tokens();
  if (!(est.total_time > 0.0)) {
    throw ValidationError(fmt::format(
        "estimated processing time {} is not positive; latency parameters are unusable",
        est.total_time));
  }
  est.tokens_per_sec = static_cast<double>(est.token_count) / est.total_time;
  return est;
}

double estimate_instance_throughput(std::span<const Request> requests,
                                    const KvBudget& budget, const ModelSpec& model,
                                    const LatencyParams& params) {
  return estimate_instance(requests, budget, model, params).tokens_per_sec;
}

namespace {

struct MachineOutcome {
  std::optional<MachineEstimate> estimate;
  std::string reason;
};

MachineOutcome evaluate_machine(const ClusterSpec& cluster, const MachineSpec& machine,
                                std::int64_t tp, std::span<const Request> requests,
                                const ParamsTable& params) {
  MachineOutcome out;
  MachineEstimate est;
  est.deployment = make_deployment(machine, tp);
  est.budget = kv_budget(machine, tp, cluster.model, cluster.engine);
  est.verdict = check_memory_constraint(est.budget, cluster.limits, cluster.model);
  if (!est.verdict.feasible) {
    out.reason = fmt::format(
        "machine '{}' tp={}: KV budget {:.0f} bytes < {:.0f} bytes needed for one "
        "maximal request (slack {:.0f})",
        machine.name, tp, est.budget.total_bytes, est.verdict.required_bytes,
        est.verdict.slack_bytes);
    return out;
  }
  const LatencyParams* p = params.find(machine.name, tp);
  if (p == nullptr) {
    out.reason =
        fmt::format("machine '{}' tp={}: no fitted latency parameters", machine.name, tp);
    return out;
  }
  try {
    est.instance_tokens_per_sec =
        estimate_instance_throughput(requests, est.budget, cluster.model, *p);
  } catch (const Error& e) {
    out.reason = fmt::format("machine '{}' tp={}: {}", machine.name, tp, e.what());
    return out;
  }
  est.machine_tokens_per_sec =
      est.instance_tokens_per_sec * static_cast<double>(machine.accelerator_count) /
      static_cast<double>(tp);
  out.estimate = est;
  return out;
}

}  // namespace

ThroughputEstimate estimate_system_throughput(const ClusterSpec& cluster,
                                              const DeploymentConfig& config,
                                              std::span<const Request> requests,
                                              const ParamsTable& params) {
  validate_deployment(config, cluster);
  ThroughputEstimate total;
  for (const auto& entry : config.per_machine) {
    const MachineSpec& machine = cluster.machine(entry.machine);
    KvBudget budget = kv_budget(machine, entry.tp_degree, cluster.model, cluster.engine);
    MemoryVerdict verdict = check_memory_constraint(budget, cluster.limits, cluster.model);
    if (!verdict.feasible) {
      throw InfeasibleError(fmt::format(
          "machine '{}' tp={} violates the memory constraint: budget {:.0f} bytes, "
          "required {:.0f}, slack {:.0f}",
          machine.name, entry.tp_degree, budget.total_bytes, verdict.required_bytes,
          verdict.slack_bytes));
    }
    const LatencyParams& p = params.at(machine.name, entry.tp_degree);
    MachineEstimate est;
    est.deployment = entry;
    est.budget = budget;
    est.verdict = verdict;
    est.instance_tokens_per_sec =
        estimate_instance_throughput(requests, budget, cluster.model, p);
    est.machine_tokens_per_sec = est.instance_tokens_per_sec *
                                 static_cast<double>(machine.accelerator_count) /
                                 static_cast<double>(entry.tp_degree);
    total.system_tokens_per_sec += est.machine_tokens_per_sec;
    total.machines.push_back(est);
  }
  return total;
}

SearchResult search_optimal_config(const ClusterSpec& cluster,
                                   std::span<const Request> requests,
                                   const ParamsTable& params) {
  if (requests.empty()) throw ValidationError("configuration search needs a nonempty trace");
  if (cluster.machines.empty()) throw ValidationError("cluster has no machines");

  // Machines are independent, so each (machine, t) is evaluated once and the
  // product below only composes cached outcomes.
  std::vector<std::vector<std::int64_t>> degrees;
  std::vector<std::map<std::int64_t, MachineOutcome>> outcomes(cluster.machines.size());
  for (std::size_t m = 0; m < cluster.machines.size(); ++m) {
    degrees.push_back(enumerate_tp_degrees(cluster.machines[m]));
    for (auto t : degrees.back()) {
      outcomes[m][t] = evaluate_machine(cluster, cluster.machines[m], t, requests, params);
    }
  }

  SearchResult result;
  std::vector<std::size_t> pick(cluster.machines.size(), 0);
  while (true) {
    ++result.candidates;
    DeploymentConfig config;
    ThroughputEstimate estimate;
    std::vector<std::string> reasons;
    for (std::size_t m = 0; m < cluster.machines.size(); ++m) {
      const std::int64_t t = degrees[m][pick[m]];
      config.per_machine.push_back(make_deployment(cluster.machines[m], t));
      const MachineOutcome& o = outcomes[m].at(t);
      if (o.estimate) {
        estimate.machines.push_back(*o.estimate);
        estimate.system_tokens_per_sec += o.estimate->machine_tokens_per_sec;
      } else {
        reasons.push_back(o.reason);
      }
    }
    if (reasons.empty()) {
      result.ranked.push_back({std::move(config), std::move(estimate)});
    } else {
      result.infeasible.push_back({std::move(config), std::move(reasons)});
    }

    std::size_t m = 0;
    for (; m < pick.size(); ++m) {
      if (++pick[m] < degrees[m].size()) break;
      pick[m] = 0;
    }
    if (m == pick.size()) break;
  }

  auto tp_vector = [](const DeploymentConfig& c) {
    std::vector<std::int64_t> v;
    for (const auto& e : c.per_machine) v.push_back(e.tp_degree);
    return v;
  };
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [&](const RankedConfig& a, const RankedConfig& b) {
                     if (a.estimate.system_tokens_per_sec != b.estimate.system_tokens_per_sec)
                       return a.estimate.system_tokens_per_sec >
                              b.estimate.system_tokens_per_sec;
                     return tp_vector(a.config) < tp_vector(b.config);
                   });

  if (result.ranked.empty()) {
    std::string msg = "no feasible deployment configuration:";
    for (const auto& rej : result.infeasible) {
      for (const auto& r : rej.reasons) msg += "\n  " + r;
    }
    throw InfeasibleError(msg);
  }
  return result;
}

std::string serialize_plan_report(const SearchResult& result) {
  std::string out;
  std::size_t rank = 0;
  for (const auto& rc : result.ranked) {
    json rec;
    rec["rank"] = ++rank;
    rec["feasible"] = true;
    rec["system_tokens_per_sec"] = rc.estimate.system_tokens_per_sec;
    json machines = json::array();
    for (const auto& m : rc.estimate.machines) {
      machines.push_back({{"machine", m.deployment.machine},
                          {"tp_degree", m.deployment.tp_degree},
                          {"instance_count", m.deployment.instance_count},
                          {"kv_budget_bytes", m.budget.total_bytes},
                          {"slack_bytes", m.verdict.slack_bytes},
                          {"instance_tokens_per_sec", m.instance_tokens_per_sec},
                          {"machine_tokens_per_sec", m.machine_tokens_per_sec}});
    }
    rec["machines"] = std::move(machines);
    out += rec.dump() + "\n";
  }
  for (const auto& rej : result.infeasible) {
    json rec;
    rec["rank"] = nullptr;
    rec["feasible"] = false;
    json machines = json::array();
    for (const auto& e : rej.config.per_machine) {
      machines.push_back({{"machine", e.machine},
                          {"tp_degree", e.tp_degree},
                          {"instance_count", e.instance_count}});
    }
    rec["machines"] = std::move(machines);
    rec["reasons"] = rej.reasons;
    out += rec.dump() + "\n";
  }
  return out;
}

std::string format_plan_table(const SearchResult& result) {
  auto describe = [](const DeploymentConfig& c) {
    std::string s;
    for (const auto& e : c.per_machine) {
      if (!s.empty()) s += ", ";
      s += fmt::format("{}:t={}x{}", e.machine, e.tp_degree, e.instance_count);
    }
    return s;
  };
  std::string out;
  const auto& best = result.ranked.front();
  out += fmt::format("best: {}  ({:.2f} tokens/s)\n", describe(best.config),
                     best.estimate.system_tokens_per_sec);
  out += fmt::format("{:>4}  {:<40} {:>16}\n", "rank", "configuration", "tokens/s");
  std::size_t rank = 0;
  for (const auto& rc : result.ranked) {
    out += fmt::format("{:>4}  {:<40} {:>16.2f}\n", ++rank, describe(rc.config),
                       rc.estimate.system_tokens_per_sec);
  }
  for (const auto& rej : result.infeasible) {
    out += fmt::format("{:>4}  {:<40} {:>16}\n", "-", describe(rej.config), "infeasible");
    for (const auto& r : rej.reasons) out += "        " + r + "\n";
  }
  out += fmt::format("{} candidates evaluated, {} feasible\n", result.candidates,
                     result.ranked.size());
  return out;
}

}  // namespace hetserve
