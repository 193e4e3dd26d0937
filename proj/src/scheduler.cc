// SPDX-License-Identifier: Apache-2.0

#include "hetserve/scheduler.h"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "hetserve/errors.h"
#include "records.h"

namespace hetserve {

using detail::json;

std::string_view policy_name(Policy policy) {
  switch (policy) {
    case Policy::kOS: return "OS";
    case Policy::kRR: return "RR";
    case Policy::kWRR: return "WRR";
    case Policy::kSI: return "SI";
    case Policy::kMB: return "MB";
  }
  return "?";
}

Policy parse_policy(std::string_view name) {
  std::string upper;
  for (char c : name) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Policy p : {Policy::kOS, Policy::kRR, Policy::kWRR, Policy::kSI, Policy::kMB}) {
    if (upper == policy_name(p)) return p;
  }
  throw ValidationError(fmt::format("unknown policy '{}' (expected OS, RR, WRR, SI or MB)", name));
}

void PolicyConfig::validate(std::size_t instance_count) const {
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw ValidationError(fmt::format("theta must be > 0, got {}", theta));
  }
  if (policy == Policy::kWRR) {
    if (wrr_weights.size() != instance_count) {
      throw ValidationError(fmt::format("WRR needs {} weights, got {}", instance_count,
                                        wrr_weights.size()));
    }
    for (double w : wrr_weights) {
      if (!(w > 0.0) || !std::isfinite(w)) {
        throw ValidationError("WRR weights must be positive");
      }
    }
  }
}

PolicyConfig parse_policy_record(std::string_view text) {
  return detail::policy_from_json(detail::parse_json(text), "policy");
}

std::string serialize_policy_record(const PolicyConfig& config) {
  return detail::policy_to_json(config).dump();
}

IdealBatch ideal_batch_size(const Request& request, const KvBudget& budget,
                            const ModelSpec& model) {
  const double per_request = static_cast<double>(kv_bytes_per_token(model)) *
                             static_cast<double>(request.input_len +
                                                 request.predicted_output_len);
  const double copies = std::floor(budget.total_bytes / per_request);
  IdealBatch out;
  if (copies < 1.0) {
    out.size = 1;
    out.oversized = true;
  } else {
    out.size = static_cast<std::int64_t>(copies);
  }
  return out;
}

double per_request_cost(const LatencyParams& params, const Request& request,
                        std::int64_t ideal_batch) {
  if (ideal_batch < 1) throw ValidationError("ideal batch size must be >= 1");
  const double total = prefill_time(params, ideal_batch, request.input_len) +
                       decode_time(params, ideal_batch, request.input_len,
                                   request.predicted_output_len);
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw ValidationError(fmt::format(
        "latency parameters give a non-positive batch time ({}) for request '{}'", total,
        request.id));
  }
  return total / static_cast<double>(ideal_batch);
}

double workload(double cost, double kv_usage, double theta) {
  return cost * std::exp(theta * kv_usage);
}

std::size_t choose_min_max(std::span<const double> loads, std::span<const double> increments,
                           const std::vector<bool>& allowed) {
  const std::size_t n = loads.size();
  if (n == 0 || increments.size() != n || (!allowed.empty() && allowed.size() != n)) {
    throw ValidationError("choose_min_max: no instances or mismatched sizes");
  }
  // Largest and second-largest current load give max over j != s in O(1).
  std::size_t top = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (loads[j] > loads[top]) top = j;
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    if (j != top) second = std::max(second, loads[j]);

  double best = std::numeric_limits<double>::infinity();
  std::size_t choice = n;
  for (std::size_t s = 0; s < n; ++s) {
    if (!allowed.empty() && !allowed[s]) continue;
    const double others = s == top ? second : loads[top];
    const double peak = std::max(others, loads[s] + increments[s]);
    if (peak < best) {
      best = peak;
      choice = s;
    }
  }
  if (choice == n) throw ValidationError("choose_min_max: no eligible instance");
  return choice;
}

Scheduler::Scheduler(std::vector<InstanceHandle> instances, ModelSpec model,
                     PolicyConfig policy)
    : instances_(std::move(instances)), model_(model), policy_(std::move(policy)) {
  if (instances_.empty()) throw ValidationError("scheduler needs at least one instance");
  policy_.validate(instances_.size());
  for (const auto& inst : instances_) {
    if (!(inst.budget.total_bytes > 0.0)) {
      throw ValidationError(
          fmt::format("instance '{}' has a non-positive KV budget", inst.id));
    }
  }
  loads_.assign(instances_.size(), 0.0);
  load_sum_.assign(instances_.size(), 0.0);
  load_comp_.assign(instances_.size(), 0.0);
  instance_in_flight_.assign(instances_.size(), 0);
  running_.assign(instances_.size(), RunningTokens{});
  wrr_current_.assign(instances_.size(), 0.0);
}

std::vector<double> Scheduler::workloads_locked(const Request& request, bool unit_cost) const {
  std::vector<double> w(instances_.size());
  for (std::size_t s = 0; s < instances_.size(); ++s) {
    const InstanceHandle& inst = instances_[s];
    double cost = 1.0;
    if (!unit_cost) {
      const IdealBatch b = ideal_batch_size(request, inst.budget, model_);
      cost = per_request_cost(inst.params, request, b.size);
    }
    const double usage = kv_usage(running_[s], model_, inst.budget);
    w[s] = workload(cost, usage, policy_.theta);
  }
  return w;
}

std::vector<double> Scheduler::candidate_workloads(const Request& request) const {
  std::lock_guard lock(mu_);
  return workloads_locked(request, policy_.policy == Policy::kMB);
}

std::size_t Scheduler::choose_locked(const std::vector<double>& workloads,
                                     const std::vector<bool>& allowed) {
  const std::size_t n = instances_.size();
  switch (policy_.policy) {
    case Policy::kOS:
    case Policy::kMB:
      return choose_min_max(loads_, workloads, allowed);
    case Policy::kSI:
      for (std::size_t s = 0; s < n; ++s)
        if (allowed[s]) return s;
      break;
    case Policy::kRR:
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t s = (rr_next_ + k) % n;
        if (allowed[s]) {
          rr_next_ = (s + 1) % n;
          return s;
        }
      }
      break;
    case Policy::kWRR: {
      double total = 0.0;
      std::size_t pick = n;
      for (std::size_t s = 0; s < n; ++s) {
        if (!allowed[s]) continue;
        wrr_current_[s] += policy_.wrr_weights[s];
        total += policy_.wrr_weights[s];
        if (pick == n || wrr_current_[s] > wrr_current_[pick]) pick = s;
      }
      if (pick != n) {
        wrr_current_[pick] -= total;
        return pick;
      }
      break;
    }
  }
  throw ValidationError("no eligible instance");
}

Dispatch Scheduler::dispatch(const Request& request, std::span<const std::size_t> excluded) {
  request.validate();
  std::lock_guard lock(mu_);
  if (in_flight_.contains(request.id)) {
    throw StateError(fmt::format("request '{}' is already in flight", request.id));
  }
  std::vector<bool> allowed(instances_.size(), true);
  for (std::size_t s : excluded) {
    if (s < allowed.size()) allowed[s] = false;
  }

  const bool unit_cost = policy_.policy == Policy::kMB;
  const std::vector<double> w = workloads_locked(request, unit_cost);
  const std::size_t s = choose_locked(w, allowed);

  Dispatch d;
  d.instance = s;
  d.workload = w[s];
  d.tokens = request.input_len + request.predicted_output_len;
  d.oversized = ideal_batch_size(request, instances_[s].budget, model_).oversized;

  ++instance_in_flight_[s];
  add_load(s, d.workload);
  running_[s].add(request.input_len, request.predicted_output_len);
  in_flight_.emplace(request.id,
                     InFlight{s, d.workload, request.input_len, request.predicted_output_len});
  return d;
}

void Scheduler::add_load(std::size_t s, double delta) {
  const double sum = load_sum_[s] + delta;
  if (std::fabs(load_sum_[s]) >= std::fabs(delta)) {
    load_comp_[s] += (load_sum_[s] - sum) + delta;
  } else {
    load_comp_[s] += (delta - sum) + load_sum_[s];
  }
  load_sum_[s] = sum;
  loads_[s] = sum + load_comp_[s];
}

void Scheduler::release(const std::string& request_id) {
  std::lock_guard lock(mu_);
  auto it = in_flight_.find(request_id);
  if (it == in_flight_.end()) {
    throw StateError(fmt::format("request '{}' is not in flight", request_id));
  }
  const InFlight& rec = it->second;
  if (--instance_in_flight_[rec.instance] == 0) {
    load_sum_[rec.instance] = 0.0;
    load_comp_[rec.instance] = 0.0;
    loads_[rec.instance] = 0.0;
  } else {
    add_load(rec.instance, -rec.workload);
  }
  running_[rec.instance].remove(rec.input_len, rec.predicted_output_len);
  in_flight_.erase(it);
}

void Scheduler::complete(const std::string& request_id) { release(request_id); }

void Scheduler::abort(const std::string& request_id) { release(request_id); }

bool Scheduler::is_in_flight(const std::string& request_id) const {
  std::lock_guard lock(mu_);
  return in_flight_.contains(request_id);
}

SchedulerSnapshot Scheduler::snapshot() const {
  std::lock_guard lock(mu_);
  SchedulerSnapshot snap;
  snap.loads = loads_;
  snap.running = running_;
  for (std::size_t s = 0; s < instances_.size(); ++s) {
    snap.kv_usage.push_back(kv_usage(running_[s], model_, instances_[s].budget));
  }
  snap.in_flight = in_flight_.size();
  return snap;
}

}  // namespace hetserve
