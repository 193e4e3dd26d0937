// SPDX-License-Identifier: Apache-2.0

#include "hetserve/simulator.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <queue>
#include <random>
#include <tuple>

#include "hetserve/batch_engine.h"
#include "hetserve/capacity.h"
#include "hetserve/cluster_spec.h"
#include "hetserve/config_search.h"
#include "hetserve/errors.h"
#include "hetserve/io.h"
#include "hetserve/trace.h"
#include "records.h"

namespace hetserve {

using detail::json;

std::string ArrivalProcess::describe() const {
  return rate ? fmt::format("{}", *rate) : std::string("inf");
}

std::vector<double> generate_arrivals(std::size_t count, const ArrivalProcess& arrival,
                                      std::uint64_t seed) {
  std::vector<double> times(count, 0.0);
  if (arrival.is_infinite()) return times;
  if (!(*arrival.rate > 0.0)) throw ValidationError("arrival rate must be > 0");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(*arrival.rate);
  double t = 0.0;
  for (auto& time : times) {
    t += gap(rng);
    time = t;
  }
  return times;
}

std::string_view mode_name(BatchingMode mode) {
  return mode == BatchingMode::kStatic ? "static" : "continuous";
}

BatchingMode parse_mode(std::string_view name) {
  if (name == "static") return BatchingMode::kStatic;
  if (name == "continuous") return BatchingMode::kContinuous;
  throw ValidationError(fmt::format("mode must be 'static' or 'continuous', got '{}'", name));
}

std::uint64_t derive_predictor_seed(std::uint64_t seed) {
  // splitmix64 finalizer: decorrelates the predictor stream from arrivals.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir) {
  json doc = detail::parse_json(text);
  detail::check_keys(doc, {"cluster_spec", "params", "trace", "deployment", "arrival",
                           "policy", "mode", "seed"},
                     "scenario");
  auto resolve = [&](std::string_view key) {
    std::filesystem::path p = detail::get_string(doc, key, "scenario");
    return p.is_absolute() ? p : base_dir / p;
  };
  Scenario s;
  s.cluster = load_cluster_spec(resolve("cluster_spec"));
  s.params = load_params(resolve("params"));
  s.trace = load_trace(resolve("trace"));

  const json& dep = detail::require(doc, "deployment", "scenario");
  if (!dep.is_array()) throw ValidationError("scenario: deployment must be an array");
  for (std::size_t i = 0; i < dep.size(); ++i) {
    std::string where = fmt::format("deployment[{}]", i);
    detail::check_keys(dep[i], {"machine", "tp_degree", "instance_count"}, where);
    const MachineSpec& m = s.cluster.machine(detail::get_string(dep[i], "machine", where));
    MachineDeployment entry = make_deployment(m, detail::get_int(dep[i], "tp_degree", where));
    if (dep[i].contains("instance_count")) {
      entry.instance_count = detail::get_int(dep[i], "instance_count", where);
    }
    s.config.per_machine.push_back(entry);
  }
  validate_deployment(s.config, s.cluster);

  if (doc.contains("arrival")) {
    const json& a = doc.at("arrival");
    detail::check_keys(a, {"rate"}, "arrival");
    const json& rate = detail::require(a, "rate", "arrival");
    if (rate.is_string() && rate.get<std::string>() == "inf") {
      s.arrival.rate.reset();
    } else if (rate.is_number() && rate.get<double>() > 0.0) {
      s.arrival.rate = rate.get<double>();
    } else {
      throw ValidationError("arrival.rate must be a positive number or \"inf\"");
    }
  }
  if (doc.contains("policy")) s.policy = detail::policy_from_json(doc.at("policy"), "policy");
  if (doc.contains("mode")) s.mode = parse_mode(detail::get_string(doc, "mode", "scenario"));
  if (doc.contains("seed")) {
    s.seed = static_cast<std::uint64_t>(detail::get_int(doc, "seed", "scenario"));
  }
  if (s.trace.empty()) throw ValidationError("scenario trace is empty");
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_file(path), path.parent_path());
}

std::vector<InstanceHandle> build_instances(const ClusterSpec& cluster,
                                            const DeploymentConfig& config,
                                            const ParamsTable& params) {
  validate_deployment(config, cluster);
  std::vector<InstanceHandle> instances;
  for (const auto& entry : config.per_machine) {
    const MachineSpec& m = cluster.machine(entry.machine);
    const KvBudget budget = kv_budget(m, entry.tp_degree, cluster.model, cluster.engine);
    const MemoryVerdict verdict = check_memory_constraint(budget, cluster.limits, cluster.model);
    if (!verdict.feasible) {
      throw InfeasibleError(fmt::format(
          "machine '{}' tp={}: KV budget {:.0f} bytes is below the {:.0f} bytes one "
          "maximal request needs",
          m.name, entry.tp_degree, budget.total_bytes, verdict.required_bytes));
    }
    const LatencyParams& p = params.at(m.name, entry.tp_degree);
    for (std::int64_t k = 0; k < entry.instance_count; ++k) {
      instances.push_back(
          InstanceHandle{fmt::format("{}/{}", m.name, k), m.name, entry.tp_degree, p, budget});
    }
  }
  if (instances.empty()) throw ValidationError("deployment has no instances");
  return instances;
}

std::vector<Request> predicted_trace(const Scenario& scenario) {
  std::vector<Request> trace = scenario.trace;
  PredictorConfig pc = with_trace_statistics(scenario.policy.predictor, trace);
  OutputLengthPredictor predictor(pc, scenario.cluster.limits.max_output_len,
                                  derive_predictor_seed(scenario.seed));
  predictor.apply(trace);
  return trace;
}

namespace {

Tokens trace_tokens(std::span<const Request> trace) {
  Tokens total = 0;
  for (const auto& r : trace) total += r.total_tokens();
  return total;
}

void finalize(SimMetrics& m, const Scheduler& scheduler, std::span<const Request> trace) {
  double lo = INFINITY;
  double hi = 0.0;
  for (const auto& inst : m.per_instance) {
    lo = std::min(lo, inst.completion_time);
    hi = std::max(hi, inst.completion_time);
  }
  m.makespan = hi;
  m.completion_time_spread = m.per_instance.empty() ? 0.0 : hi - lo;
  m.system_throughput =
      m.makespan > 0.0 ? static_cast<double>(trace_tokens(trace)) / m.makespan : 0.0;
  const SchedulerSnapshot snap = scheduler.snapshot();
  for (double load : snap.loads) m.residual_load = std::max(m.residual_load, std::fabs(load));
  for (const auto& rt : snap.running) m.residual_tokens += rt.total();
}

SimMetrics start_metrics(const Scenario& scenario, const std::vector<InstanceHandle>& instances) {
  SimMetrics m;
  m.policy = scenario.policy.policy;
  m.arrival = scenario.arrival;
  m.mode = scenario.mode;
  for (const auto& inst : instances) m.per_instance.push_back(InstanceMetrics{inst.id});
  m.requests.resize(scenario.trace.size());
  return m;
}

}  // namespace

SimMetrics run_static(const Scenario& scenario) {
  if (!scenario.arrival.is_infinite()) {
    throw ValidationError("static mode batches a known queue; arrival rate must be inf");
  }
  const std::vector<InstanceHandle> instances =
      build_instances(scenario.cluster, scenario.config, scenario.params);
  const std::vector<Request> trace = predicted_trace(scenario);
  Scheduler scheduler(instances, scenario.cluster.model, scenario.policy);

  SimMetrics m = start_metrics(scenario, instances);
  std::vector<std::vector<std::size_t>> queues(instances.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Dispatch d = scheduler.dispatch(trace[i]);
    if (d.oversized) ++m.oversized_dispatches;
    m.assignments.push_back(d.instance);
    queues[d.instance].push_back(i);
    m.requests[i].instance = d.instance;
  }

  // (departure, instance, request) for firing completion hooks in time order.
  std::vector<std::tuple<double, std::size_t, std::size_t>> departures;
  for (std::size_t s = 0; s < instances.size(); ++s) {
    if (queues[s].empty()) continue;
    std::vector<Request> assigned;
    for (std::size_t i : queues[s]) assigned.push_back(scenario.trace[i]);
    const InstanceEstimate est = estimate_instance(assigned, instances[s].budget,
                                                   scenario.cluster.model, instances[s].params);
    double clock = 0.0;
    InstanceMetrics& im = m.per_instance[s];
    for (std::size_t b = 0; b < est.plan.batches.size(); ++b) {
      const BatchRange& range = est.plan.batches[b];
      clock += est.plan.per_batch_time[b];
      const double kv = static_batch_kv_bytes(
          std::span<const Request>(assigned).subspan(range.begin, range.size()),
          scenario.cluster.model);
      im.peak_kv_usage = std::max(im.peak_kv_usage, kv / instances[s].budget.total_bytes);
      for (std::size_t k = range.begin; k < range.end; ++k) {
        const std::size_t idx = queues[s][k];
        m.requests[idx].departure = clock;
        departures.emplace_back(clock, s, idx);
      }
    }
    im.completion_time = clock;
    im.request_count = static_cast<std::int64_t>(assigned.size());
    im.token_count = est.token_count;
  }
  std::sort(departures.begin(), departures.end());
  for (const auto& [time, s, idx] : departures) scheduler.complete(trace[idx].id);

  finalize(m, scheduler, scenario.trace);
  return m;
}

SimMetrics run_continuous(const Scenario& scenario) {
  const std::vector<InstanceHandle> instances =
      build_instances(scenario.cluster, scenario.config, scenario.params);
  const std::vector<Request> trace = predicted_trace(scenario);
  const std::vector<double> arrivals =
      generate_arrivals(trace.size(), scenario.arrival, scenario.seed);
  Scheduler scheduler(instances, scenario.cluster.model, scenario.policy);

  std::vector<ContinuousBatchEngine> engines;
  for (const auto& inst : instances) {
    engines.emplace_back(inst.params, inst.budget, scenario.cluster.model);
  }

  enum Kind : int { kStepEnd = 0, kArrival = 1 };
  using Event = std::tuple<double, int, std::size_t, std::size_t>;  // time, kind, instance, seq
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  for (std::size_t i = 0; i < trace.size(); ++i) events.emplace(arrivals[i], kArrival, 0, i);

  SimMetrics m = start_metrics(scenario, instances);
  std::size_t step_seq = 0;

  while (!events.empty()) {
    const double now = std::get<0>(events.top());
    while (!events.empty() && std::get<0>(events.top()) == now) {
      const auto [time, kind, s, seq] = events.top();
      events.pop();
      if (kind == kArrival) {
        const Dispatch d = scheduler.dispatch(trace[seq]);
        if (d.oversized) ++m.oversized_dispatches;
        m.assignments.push_back(d.instance);
        m.requests[seq].instance = d.instance;
        m.requests[seq].arrival = time;
        engines[d.instance].enqueue({seq, trace[seq].input_len, trace[seq].output_len});
      } else {
        for (std::size_t idx : engines[s].finish_step()) {
          scheduler.complete(trace[idx].id);
          m.requests[idx].departure = time;
          InstanceMetrics& im = m.per_instance[s];
          im.completion_time = std::max(im.completion_time, time);
          ++im.request_count;
          im.token_count += trace[idx].total_tokens();
        }
      }
    }
    // Every idle instance starts its next step once all events at `now` ran,
    // so simultaneous arrivals share one admission round.
    for (std::size_t s = 0; s < engines.size(); ++s) {
      if (engines[s].stepping()) continue;
      if (auto step = engines[s].begin_step()) {
        events.emplace(now + step->duration, kStepEnd, s, step_seq++);
      }
    }
  }

  for (std::size_t s = 0; s < engines.size(); ++s) {
    m.per_instance[s].peak_kv_usage = engines[s].peak_usage();
  }
  finalize(m, scheduler, scenario.trace);
  return m;
}

SimMetrics simulate(const Scenario& scenario) {
  return scenario.mode == BatchingMode::kStatic ? run_static(scenario)
                                                : run_continuous(scenario);
}

std::vector<SimMetrics> run_policy_comparison(const Scenario& scenario,
                                              std::span<const PolicyConfig> policies) {
  if (policies.empty()) throw ValidationError("policy comparison needs at least one policy");
  std::vector<SimMetrics> runs;
  for (const auto& policy : policies) {
    Scenario s = scenario;
    s.policy = policy;
    runs.push_back(simulate(s));
  }
  return runs;
}

std::vector<PolicyConfig> default_comparison_policies(
    const PolicyConfig& base, const std::vector<InstanceHandle>& instances) {
  std::vector<PolicyConfig> out;
  for (Policy p : {Policy::kRR, Policy::kSI, Policy::kMB, Policy::kOS, Policy::kWRR}) {
    PolicyConfig c = base;
    c.policy = p;
    if (p == Policy::kWRR && c.wrr_weights.size() != instances.size()) {
      c.wrr_weights.clear();
      for (const auto& inst : instances) {
        c.wrr_weights.push_back(static_cast<double>(inst.tp_degree));
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string serialize_metrics(const SimMetrics& m) {
  json rec;
  rec["policy"] = std::string(policy_name(m.policy));
  if (m.arrival.rate) {
    rec["rate"] = *m.arrival.rate;
  } else {
    rec["rate"] = "inf";
  }
  rec["mode"] = std::string(mode_name(m.mode));
  rec["system_throughput"] = m.system_throughput;
  rec["makespan"] = m.makespan;
  rec["spread"] = m.completion_time_spread;
  json per = json::array();
  for (const auto& inst : m.per_instance) {
    per.push_back({{"id", inst.id},
                   {"completion_time", inst.completion_time},
                   {"request_count", inst.request_count},
                   {"token_count", inst.token_count},
                   {"peak_kv_usage", inst.peak_kv_usage}});
  }
  rec["per_instance"] = std::move(per);
  return rec.dump() + "\n";
}

std::string format_metrics_table(std::span<const SimMetrics> runs) {
  std::string out = fmt::format("{:<6} {:>8} {:>11} {:>14} {:>12} {:>12}  {}\n", "policy",
                                "rate", "mode", "tokens/s", "makespan_s", "spread_s",
                                "requests per instance");
  for (const auto& m : runs) {
    std::string counts;
    for (const auto& inst : m.per_instance) {
      if (!counts.empty()) counts += " ";
      counts += fmt::format("{}", inst.request_count);
    }
    out += fmt::format("{:<6} {:>8} {:>11} {:>14.2f} {:>12.3f} {:>12.3f}  {}\n",
                       policy_name(m.policy), m.arrival.describe(), mode_name(m.mode),
                       m.system_throughput, m.makespan, m.completion_time_spread, counts);
  }
  return out;
}

}  // namespace hetserve
