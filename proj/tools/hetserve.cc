// SPDX-License-Identifier: Apache-2.0
//
// hetserve: fit latency models, plan deployments, simulate and compare
// scheduling policies, and run the gateway or a mock backend.
//
// Exit codes: 0 success, 1 I/O error, 2 parse/validation/fit error,
// 3 no feasible configuration.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "hetserve/cluster_spec.h"
#include "hetserve/config_search.h"
#include "hetserve/errors.h"
#include "hetserve/gateway.h"
#include "hetserve/io.h"
#include "hetserve/latency_model.h"
#include "hetserve/mock_backend.h"
#include "hetserve/simulator.h"
#include "hetserve/trace.h"

namespace {

using namespace hetserve;

constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitInfeasible = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string policy;
  std::optional<double> theta;
  std::vector<std::string> rates;
  std::string mode;
};

std::optional<double> parse_rate(const std::string& text) {
  if (text == "inf") return std::nullopt;
  double rate = 0.0;
  try {
    std::size_t used = 0;
    rate = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("--rate: '{}' is not a number or 'inf'", text));
  }
  if (!(rate > 0.0)) throw ValidationError("--rate must be positive");
  return rate;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string::npos ? text.size() : comma;
    if (end > start) out.push_back(text.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

Scenario scenario_with(const std::string& path, const Overrides& o) {
  Scenario s = load_scenario(path);
  if (o.seed) s.seed = *o.seed;
  if (o.theta) s.policy.theta = *o.theta;
  if (!o.mode.empty()) s.mode = parse_mode(o.mode);
  return s;
}

std::vector<ArrivalProcess> arrivals_for(const Scenario& s, const Overrides& o) {
  if (o.rates.empty()) return {s.arrival};
  std::vector<ArrivalProcess> out;
  for (const auto& r : o.rates) out.push_back({parse_rate(r)});
  return out;
}

void write_records(const std::string& out, const std::string& records) {
  if (!out.empty()) write_file(out, records);
}

int cmd_fit(const std::string& samples_path, const std::string& out) {
  const auto groups = parse_samples(read_file(samples_path));
  if (groups.empty()) throw ValidationError("sample file has no samples");
  ParamsTable table;
  fmt::print("{:<16} {:>4} {:>12} {:>12} {:>12} {:>12}\n", "machine", "tp", "residual",
             "prefill_cond", "decode_cond", "samples");
  for (const auto& g : groups) {
    const FitResult fit = fit_params(g.prefill, g.decode);
    if (fit.nonpositive_on_grid) {
      throw FitError(fmt::format(
          "fit for ({}, t={}) predicts a non-positive time inside the profiled grid; "
          "profile more points or check the samples",
          g.machine_name, g.tp_degree));
    }
    table.set(g.machine_name, g.tp_degree, fit.params, fit.residual_norm);
    fmt::print("{:<16} {:>4} {:>12.4e} {:>12.3e} {:>12.3e} {:>12}\n", g.machine_name,
               g.tp_degree, fit.residual_norm, fit.prefill_condition, fit.decode_condition,
               g.prefill.size() + g.decode.size());
  }
  write_records(out, serialize_params(table));
  return 0;
}

int cmd_plan(const std::string& spec, const std::string& trace, const std::string& params,
             const std::string& out) {
  const ClusterSpec cluster = load_cluster_spec(spec);
  const std::vector<Request> requests = load_trace(trace);
  const ParamsTable table = load_params(params);
  const SearchResult result = search_optimal_config(cluster, requests, table);
  fmt::print("{}", format_plan_table(result));
  write_records(out, serialize_plan_report(result));
  return 0;
}

PolicyConfig with_policy(PolicyConfig base, const std::string& name,
                         const std::vector<InstanceHandle>& instances) {
  base.policy = parse_policy(name);
  if (base.policy == Policy::kWRR && base.wrr_weights.size() != instances.size()) {
    base.wrr_weights.clear();
    for (const auto& inst : instances) {
      base.wrr_weights.push_back(static_cast<double>(inst.tp_degree));
    }
  }
  return base;
}

int cmd_simulate(const std::string& scenario_path, const Overrides& o, const std::string& out) {
  Scenario s = scenario_with(scenario_path, o);
  const auto instances = build_instances(s.cluster, s.config, s.params);
  if (!o.policy.empty()) s.policy = with_policy(s.policy, o.policy, instances);
  std::vector<SimMetrics> runs;
  std::string records;
  for (const ArrivalProcess& a : arrivals_for(s, o)) {
    s.arrival = a;
    runs.push_back(simulate(s));
    records += serialize_metrics(runs.back());
  }
  fmt::print("{}", format_metrics_table(runs));
  write_records(out, records);
  return 0;
}

int cmd_compare(const std::string& scenario_path, const Overrides& o, const std::string& out) {
  Scenario s = scenario_with(scenario_path, o);
  const auto instances = build_instances(s.cluster, s.config, s.params);
  std::vector<PolicyConfig> policies;
  if (o.policy.empty()) {
    policies = default_comparison_policies(s.policy, instances);
  } else {
    for (const auto& name : split_list(o.policy)) {
      policies.push_back(with_policy(s.policy, name, instances));
    }
  }
  std::vector<SimMetrics> all;
  std::string records;
  for (const ArrivalProcess& a : arrivals_for(s, o)) {
    s.arrival = a;
    for (auto& m : run_policy_comparison(s, policies)) {
      records += serialize_metrics(m);
      all.push_back(std::move(m));
    }
  }
  fmt::print("{}", format_metrics_table(all));
  write_records(out, records);
  return 0;
}

int cmd_gen_trace(std::size_t count, const std::string& input_dist,
                  const std::string& output_dist, const std::string& spec,
                  std::optional<Tokens> max_input, std::optional<Tokens> max_output,
                  std::uint64_t seed, const std::string& out) {
  WorkloadLimits limits{2048, 2048};
  if (!spec.empty()) limits = load_cluster_spec(spec).limits;
  if (max_input) limits.max_input_len = *max_input;
  if (max_output) limits.max_output_len = *max_output;
  limits.validate();
  const auto trace = generate_trace(count, parse_length_distribution(input_dist),
                                    parse_length_distribution(output_dist), limits, seed);
  const std::string text = serialize_trace(trace);
  if (out.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    write_file(out, text);
    fmt::print("wrote {} requests to {}\n", trace.size(), out);
  }
  return 0;
}

// Blocks SIGINT/SIGTERM in every thread so the caller can sigwait for them.
sigset_t block_stop_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_stop_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("received signal {}, shutting down", sig);
}

int cmd_serve(const std::string& config_path) {
  const GatewayConfig config = load_gateway_config(config_path);
  spdlog::set_level(spdlog::level::from_str(config.log_level));
  const ClusterSpec cluster = load_cluster_spec(config.cluster_spec_path);
  const ParamsTable params = load_params(config.params_path);
  auto backends = resolve_backends(config, cluster, params);
  const auto [host, port] = split_address(config.listen_addr);

  const sigset_t signals = block_stop_signals();
  GatewayServer server(std::move(backends), cluster.model, cluster.limits, config.policy,
                       config.seed, config.health_interval_s,
                       http_forwarder(config.backend_timeout_s));
  server.start(host, port);
  wait_for_stop_signal(signals);
  server.stop();
  return 0;
}

int cmd_mock_backend(const std::string& spec, const std::string& params_path,
                     const std::string& machine, std::int64_t tp, const std::string& listen,
                     double time_scale) {
  const ClusterSpec cluster = load_cluster_spec(spec);
  const ParamsTable params = load_params(params_path);
  const MachineSpec& m = cluster.machine(machine);
  const KvBudget budget = kv_budget(m, tp, cluster.model, cluster.engine);
  const auto [host, port] = split_address(listen);

  const sigset_t signals = block_stop_signals();
  MockBackendServer server(params.at(machine, tp), budget, cluster.model, time_scale);
  server.start(host, port);
  wait_for_stop_signal(signals);
  server.stop();
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const InfeasibleError*>(&e)) return kExitInfeasible;
  return kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Plan, simulate and serve LLM inference on heterogeneous clusters"};
  app.require_subcommand(1);
  spdlog::set_pattern("[%H:%M:%S.%e] [%l] %v");

  std::string samples, out, spec, trace, params, scenario, config, machine, listen;
  std::string input_dist = "lognormal:250,300", output_dist = "lognormal:200,200";
  Overrides o;
  std::int64_t tp = 1;
  double time_scale = 1.0;
  std::size_t count = 0;
  std::uint64_t seed = 42;
  std::optional<Tokens> max_input, max_output;

  auto* fit = app.add_subcommand("fit", "Fit latency parameters from profiling samples");
  fit->add_option("--samples", samples, "Profiling sample file (JSON lines)")->required();
  fit->add_option("--out", out, "Fitted-parameter file to write")->required();

  auto* plan = app.add_subcommand("plan", "Rank tensor-parallel configurations");
  plan->add_option("--spec", spec, "Cluster spec file")->required();
  plan->add_option("--trace", trace, "Request trace file")->required();
  plan->add_option("--params", params, "Fitted-parameter file")->required();
  plan->add_option("--out", out, "Plan report to write (JSON lines)");

  auto add_sim_flags = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", scenario, "Scenario file")->required();
    cmd->add_option("--out", out, "Metrics file to write (JSON lines)");
    cmd->add_option("--seed", o.seed, "Override the scenario seed");
    cmd->add_option("--theta", o.theta, "Override theta");
    cmd->add_option("--rate", o.rates, "Arrival rate(s) in requests/s, or 'inf'");
    cmd->add_option("--mode", o.mode, "static or continuous");
  };
  auto* simulate_cmd = app.add_subcommand("simulate", "Simulate one policy");
  add_sim_flags(simulate_cmd);
  simulate_cmd->add_option("--policy", o.policy, "OS, RR, WRR, SI or MB");
  auto* compare = app.add_subcommand("compare", "Simulate several policies on one scenario");
  add_sim_flags(compare);
  compare->add_option("--policy", o.policy, "Comma-separated policies (default RR,SI,MB,OS,WRR)");

  auto* serve = app.add_subcommand("serve", "Run the scheduling gateway");
  serve->add_option("--config", config, "Gateway config file")->required();

  auto* mock = app.add_subcommand("mock-backend", "Run a mock inference backend");
  mock->add_option("--spec", spec, "Cluster spec file")->required();
  mock->add_option("--params", params, "Fitted-parameter file")->required();
  mock->add_option("--machine", machine, "Machine name in the cluster spec")->required();
  mock->add_option("--tp", tp, "Tensor-parallel degree")->required();
  mock->add_option("--listen", listen, "host:port")->required();
  mock->add_option("--time-scale", time_scale, "Wall seconds per model second")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-trace", "Generate a synthetic request trace");
  gen->add_option("--count", count, "Number of requests")->required();
  gen->add_option("--input-dist", input_dist, "lognormal:mean,sd or uniform:lo,hi");
  gen->add_option("--output-dist", output_dist, "lognormal:mean,sd or uniform:lo,hi");
  gen->add_option("--spec", spec, "Take length limits from this cluster spec");
  gen->add_option("--max-input", max_input, "Input length limit");
  gen->add_option("--max-output", max_output, "Output length limit");
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("--out", out, "Trace file to write (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*fit) return cmd_fit(samples, out);
    if (*plan) return cmd_plan(spec, trace, params, out);
    if (*simulate_cmd) return cmd_simulate(scenario, o, out);
    if (*compare) return cmd_compare(scenario, o, out);
    if (*serve) return cmd_serve(config);
    if (*mock) return cmd_mock_backend(spec, params, machine, tp, listen, time_scale);
    if (*gen) {
      return cmd_gen_trace(count, input_dist, output_dist, spec, max_input, max_output, seed,
                           out);
    }
  } catch (const std::exception& e) {
    std::cerr << "hetserve: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
