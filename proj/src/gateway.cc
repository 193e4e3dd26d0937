// SPDX-License-Identifier: Apache-2.0

#include "hetserve/gateway.h"

#include <algorithm>
#include <cstdlib>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "hetserve/capacity.h"
#include "hetserve/errors.h"
#include "hetserve/io.h"
#include "hetserve/simulator.h"
#include "http_util.h"
#include "json_util.h"
#include "records.h"

namespace hetserve {

using detail::json;

std::pair<std::string, int> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    throw ValidationError(fmt::format("address '{}' is not host:port", address));
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(address.substr(colon + 1), &used);
    if (used != address.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("address '{}' has a bad port", address));
  }
  if (port < 0 || port > 65535) {
    throw ValidationError(fmt::format("address '{}' has a bad port", address));
  }
  return {address.substr(0, colon), port};
}

GatewayConfig parse_gateway_config(std::string_view text, const std::filesystem::path& base_dir) {
  const json doc = detail::parse_json(text);
  detail::check_keys(doc,
                     {"listen_addr", "backends", "policy", "params", "cluster_spec", "seed",
                      "health_interval_s", "backend_timeout_s", "log_level"},
                     "gateway config");
  auto resolve = [&](std::string_view key) {
    std::filesystem::path p = detail::get_string(doc, key, "gateway config");
    return p.is_absolute() ? p : base_dir / p;
  };
  GatewayConfig c;
  if (doc.contains("listen_addr")) {
    c.listen_addr = detail::get_string(doc, "listen_addr", "gateway config");
    split_address(c.listen_addr);
  }
  c.params_path = resolve("params");
  c.cluster_spec_path = resolve("cluster_spec");

  const json& backends = detail::require(doc, "backends", "gateway config");
  if (!backends.is_array() || backends.empty()) {
    throw ValidationError("gateway config: backends must be a nonempty array");
  }
  for (std::size_t i = 0; i < backends.size(); ++i) {
    const std::string where = fmt::format("backends[{}]", i);
    detail::check_keys(backends[i], {"id", "addr", "machine", "tp"}, where);
    BackendEntry e;
    e.id = detail::get_string(backends[i], "id", where);
    e.address = detail::get_string(backends[i], "addr", where);
    e.machine = detail::get_string(backends[i], "machine", where);
    e.tp_degree = detail::get_int(backends[i], "tp", where);
    split_address(e.address);
    for (const auto& prev : c.backends) {
      if (prev.id == e.id) throw ValidationError(fmt::format("{}: duplicate id '{}'", where, e.id));
    }
    c.backends.push_back(std::move(e));
  }
  if (doc.contains("policy")) c.policy = detail::policy_from_json(doc.at("policy"), "policy");
  if (c.policy.policy == Policy::kWRR && c.policy.wrr_weights.empty()) {
    for (const auto& b : c.backends) c.policy.wrr_weights.push_back(static_cast<double>(b.tp_degree));
  }
  c.policy.validate(c.backends.size());
  if (doc.contains("seed")) {
    c.seed = static_cast<std::uint64_t>(detail::get_int(doc, "seed", "gateway config"));
  }
  if (doc.contains("health_interval_s")) {
    c.health_interval_s = detail::get_number(doc, "health_interval_s", "gateway config");
  }
  if (doc.contains("backend_timeout_s")) {
    c.backend_timeout_s = detail::get_number(doc, "backend_timeout_s", "gateway config");
    if (!(c.backend_timeout_s > 0.0)) {
      throw ValidationError("gateway config: backend_timeout_s must be positive");
    }
  }
  if (doc.contains("log_level")) {
    c.log_level = detail::get_string(doc, "log_level", "gateway config");
  }
  return c;
}

GatewayConfig load_gateway_config(const std::filesystem::path& path) {
  GatewayConfig c = parse_gateway_config(read_file(path), path.parent_path());
  if (const char* addr = std::getenv("HETSERVE_LISTEN_ADDR"); addr && *addr) {
    split_address(addr);
    c.listen_addr = addr;
  }
  if (const char* level = std::getenv("HETSERVE_LOG_LEVEL"); level && *level) {
    c.log_level = level;
  }
  return c;
}

std::vector<BackendDescriptor> resolve_backends(const GatewayConfig& config,
                                                const ClusterSpec& cluster,
                                                const ParamsTable& params) {
  std::vector<BackendDescriptor> out;
  for (const auto& e : config.backends) {
    const MachineSpec& m = cluster.machine(e.machine);
    const auto* entry = params.find(e.machine, e.tp_degree);
    if (entry == nullptr) {
      throw ValidationError(
          fmt::format("backend '{}': no latency params for ({}, t={})", e.id, e.machine,
                      e.tp_degree));
    }
    const KvBudget budget = kv_budget(m, e.tp_degree, cluster.model, cluster.engine);
    const MemoryVerdict verdict = check_memory_constraint(budget, cluster.limits, cluster.model);
    if (!verdict.feasible) {
      throw InfeasibleError(fmt::format(
          "backend '{}': ({}, t={}) cannot hold the largest request (short by {:.0f} bytes)",
          e.id, e.machine, e.tp_degree, -verdict.slack_bytes));
    }
    BackendDescriptor d;
    d.id = e.id;
    d.address = e.address;
    d.machine = e.machine;
    d.tp_degree = e.tp_degree;
    d.params = *entry;
    d.budget = budget;
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

std::vector<InstanceHandle> to_handles(const std::vector<BackendDescriptor>& backends) {
  std::vector<InstanceHandle> handles;
  for (const auto& b : backends) {
    handles.push_back({b.id, b.machine, b.tp_degree, b.params, b.budget});
  }
  return handles;
}

}  // namespace

GatewayCore::GatewayCore(std::vector<BackendDescriptor> backends, ModelSpec model,
                         WorkloadLimits limits, PolicyConfig policy, std::uint64_t seed,
                         ForwardFn forward)
    : backends_(std::move(backends)),
      limits_(limits),
      forward_(std::move(forward)),
      scheduler_(to_handles(backends_), model, policy),
      started_(std::chrono::steady_clock::now()),
      predictor_(policy.predictor, limits.max_output_len, derive_predictor_seed(seed)),
      healthy_(backends_.size(), true) {
  if (!forward_) throw ValidationError("gateway needs a forward function");
  for (std::size_t i = 0; i < backends_.size(); ++i) healthy_[i] = backends_[i].healthy;
}

SubmitResult GatewayCore::submit(const SubmitRequest& submitted) {
  SubmitResult result;
  auto reject = [&](int status, std::string message) {
    result.status = status;
    result.error = std::move(message);
    return result;
  };
  if (submitted.id.empty()) return reject(400, "request id is empty");
  if (submitted.input_len < 1 || submitted.input_len > limits_.max_input_len) {
    return reject(400, fmt::format("input_len must be in [1, {}]", limits_.max_input_len));
  }
  if (submitted.output_len &&
      (*submitted.output_len < 1 || *submitted.output_len > limits_.max_output_len)) {
    return reject(400, fmt::format("output_len must be in [1, {}]", limits_.max_output_len));
  }
  if (!submitted.output_len && scheduler_.policy().predictor.mode == PredictorMode::kOracle) {
    return reject(400, "output_len is required with the oracle predictor");
  }

  Request request;
  request.id = submitted.id;
  request.input_len = submitted.input_len;
  request.output_len = submitted.output_len.value_or(0);

  std::vector<std::size_t> failed;  // backends that failed this request
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::size_t chosen = 0;
    {
      std::lock_guard lock(mu_);
      if (attempt == 0) {
        if (!seen_.insert(request.id).second) {
          return reject(409, fmt::format("request '{}' was already submitted", request.id));
        }
        request.predicted_output_len = predictor_.predict(request);
        if (request.output_len == 0) request.output_len = request.predicted_output_len;
      }
      std::vector<std::size_t> excluded = failed;
      for (std::size_t s = 0; s < backends_.size(); ++s) {
        if (!healthy_[s] && std::find(failed.begin(), failed.end(), s) == failed.end()) {
          excluded.push_back(s);
        }
      }
      if (excluded.size() == backends_.size()) {
        if (attempt == 0) {
          seen_.erase(request.id);  // never accepted; the client may resubmit
        } else {
          ++failed_;
        }
        return reject(503, "no healthy backend");
      }
      const Dispatch d = scheduler_.dispatch(request, excluded);
      chosen = d.instance;
      events_.push_back({GatewayEvent::Kind::kDispatch, request.id, chosen});
    }

    const BackendReply reply = forward_(backends_[chosen], request);

    std::lock_guard lock(mu_);
    if (reply.ok) {
      scheduler_.complete(request.id);
      ++completed_;
      cumulative_tokens_ += request.total_tokens();
      events_.push_back({GatewayEvent::Kind::kComplete, request.id, chosen});
      result.status = 200;
      result.instance = backends_[chosen].id;
      result.latency_s = reply.latency_s;
      result.tokens = request.total_tokens();
      return result;
    }
    scheduler_.abort(request.id);
    healthy_[chosen] = false;
    failed.push_back(chosen);
    events_.push_back({GatewayEvent::Kind::kFail, request.id, chosen});
    spdlog::warn("backend '{}' failed request '{}': {}", backends_[chosen].id, request.id,
                 reply.error);
    result.retried = attempt == 0;
    if (attempt == 1) {
      ++failed_;
      return reject(502, fmt::format("backend '{}' failed: {}", backends_[chosen].id,
                                     reply.error));
    }
  }
  return result;  // unreachable
}

GatewayMetrics GatewayCore::metrics() const {
  std::lock_guard lock(mu_);
  const SchedulerSnapshot snap = scheduler_.snapshot();
  GatewayMetrics m;
  for (const auto& b : backends_) m.instances.push_back(b.id);
  m.loads = snap.loads;
  m.kv_usage = snap.kv_usage;
  m.healthy = healthy_;
  m.in_flight = snap.in_flight;
  m.completed = completed_;
  m.failed = failed_;
  m.cumulative_tokens = cumulative_tokens_;
  m.uptime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  m.throughput = m.uptime_s > 0.0 ? static_cast<double>(m.cumulative_tokens) / m.uptime_s : 0.0;
  return m;
}

std::vector<BackendDescriptor> GatewayCore::backends() const {
  std::lock_guard lock(mu_);
  std::vector<BackendDescriptor> out = backends_;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].healthy = healthy_[i];
  return out;
}

std::vector<GatewayEvent> GatewayCore::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

void GatewayCore::set_healthy(std::size_t index, bool healthy) {
  std::lock_guard lock(mu_);
  if (index >= healthy_.size()) throw ValidationError("backend index out of range");
  if (healthy_[index] != healthy) {
    spdlog::info("backend '{}' is {}", backends_[index].id, healthy ? "up" : "down");
  }
  healthy_[index] = healthy;
}

ForwardFn http_forwarder(double timeout_s) {
  return [timeout_s](const BackendDescriptor& backend, const Request& request) {
    BackendReply reply;
    const auto [host, port] = split_address(backend.address);
    httplib::Client client(host, port);
    client.set_connection_timeout(std::chrono::seconds(5));
    client.set_write_timeout(std::chrono::seconds(5));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(timeout_s)));
    const json body = {{"id", request.id},
                       {"input_len", request.input_len},
                       {"output_len", request.output_len}};
    auto res = client.Post("/generate", body.dump(), "application/json");
    if (!res) {
      reply.error = httplib::to_string(res.error());
      return reply;
    }
    if (res->status != 200) {
      reply.error = fmt::format("status {}: {}", res->status, res->body);
      return reply;
    }
    try {
      const json out = json::parse(res->body);
      reply.latency_s = out.at("latency_s").get<double>();
      reply.tokens = out.at("tokens").get<Tokens>();
      reply.ok = true;
    } catch (const json::exception& e) {
      reply.error = fmt::format("bad backend reply: {}", e.what());
    }
    return reply;
  };
}

namespace {

json metrics_json(const GatewayMetrics& m) {
  json instances = json::array();
  for (std::size_t i = 0; i < m.instances.size(); ++i) {
    instances.push_back({{"id", m.instances[i]},
                         {"load", m.loads[i]},
                         {"kv_usage", m.kv_usage[i]},
                         {"health", m.healthy[i] ? "up" : "down"}});
  }
  return {{"instances", instances},
          {"in_flight", m.in_flight},
          {"completed", m.completed},
          {"failed", m.failed},
          {"cumulative_tokens", m.cumulative_tokens},
          {"uptime_s", m.uptime_s},
          {"throughput", m.throughput}};
}

json backends_json(const std::vector<BackendDescriptor>& backends) {
  json out = json::array();
  for (const auto& b : backends) {
    out.push_back({{"id", b.id},
                   {"addr", b.address},
                   {"machine", b.machine},
                   {"tp", b.tp_degree},
                   {"budget_bytes", b.budget.total_bytes},
                   {"params", b.params.coef},
                   {"health", b.healthy ? "up" : "down"}});
  }
  return out;
}

}  // namespace

GatewayServer::GatewayServer(std::vector<BackendDescriptor> backends, ModelSpec model,
                             WorkloadLimits limits, PolicyConfig policy, std::uint64_t seed,
                             double health_interval_s, ForwardFn forward)
    : core_(std::move(backends), model, limits, std::move(policy), seed, std::move(forward)),
      health_interval_s_(health_interval_s),
      server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(detail::kHttpWorkers); };

  server_->Post("/v1/requests", [this](const httplib::Request& req, httplib::Response& res) {
    SubmitRequest submit;
    try {
      const json body = detail::parse_json(req.body);
      detail::check_keys(body, {"id", "input_len", "output_len"}, "request");
      submit.id = detail::get_string(body, "id", "request");
      submit.input_len = detail::get_int(body, "input_len", "request");
      if (body.contains("output_len") && !body.at("output_len").is_null()) {
        submit.output_len = detail::get_int(body, "output_len", "request");
      }
    } catch (const Error& e) {
      detail::reply_json(res, 400, {{"error", e.what()}});
      return;
    }
    const SubmitResult r = core_.submit(submit);
    if (r.status != 200) {
      detail::reply_json(res, r.status, {{"error", r.error}});
      return;
    }
    detail::reply_json(res, 200,
                       {{"instance", r.instance},
                        {"retried", r.retried},
                        {"completion", {{"latency_s", r.latency_s}, {"tokens", r.tokens}}}});
  });
  server_->Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
    detail::reply_json(res, 200, metrics_json(core_.metrics()));
  });
  server_->Get("/v1/instances", [this](const httplib::Request&, httplib::Response& res) {
    detail::reply_json(res, 200, backends_json(core_.backends()));
  });
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    detail::reply_json(res, 200, {{"status", "ok"}});
  });
}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start(const std::string& host, int port) {
  detail::bind_server(*server_, host, port);
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  if (health_interval_s_ > 0.0) prober_ = std::thread([this] { probe_loop(); });
  spdlog::info("gateway listening on {}:{} with {} backends", host, port, core_.backend_count());
  return port;
}

void GatewayServer::stop() {
  {
    std::lock_guard lock(probe_mu_);
    stopping_ = true;
  }
  probe_cv_.notify_all();
  if (prober_.joinable()) prober_.join();
  server_->stop();
  if (listener_.joinable()) listener_.join();
}

void GatewayServer::probe_loop() {
  const auto interval = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::duration<double>(health_interval_s_));
  std::unique_lock lock(probe_mu_);
  while (!probe_cv_.wait_for(lock, interval, [this] { return stopping_; })) {
    lock.unlock();
    const auto backends = core_.backends();
    for (std::size_t i = 0; i < backends.size(); ++i) {
      const auto [host, port] = split_address(backends[i].address);
      httplib::Client client(host, port);
      client.set_connection_timeout(std::chrono::seconds(1));
      client.set_read_timeout(std::chrono::seconds(1));
      auto res = client.Get("/health");
      core_.set_healthy(i, res && res->status == 200);
    }
    lock.lock();
  }
}

}  // namespace hetserve
