// SPDX-License-Identifier: Apache-2.0
//
// Scheduling gateway: picks a backend instance per request with the library
// scheduler, forwards the request and fires the completion hook when the
// backend answers.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "hetserve/predictor.h"
#include "hetserve/scheduler.h"
#include "hetserve/types.h"

namespace httplib {
class Server;
}

namespace hetserve {

struct BackendDescriptor {
  std::string id;
  std::string address;  // host:port
  std::string machine;
  std::int64_t tp_degree = 1;
  LatencyParams params;
  KvBudget budget;
  bool healthy = true;
};

struct BackendEntry {
  std::string id;
  std::string address;
  std::string machine;
  std::int64_t tp_degree = 1;
};

struct GatewayConfig {
  std::string listen_addr = "127.0.0.1:8080";
  std::vector<BackendEntry> backends;
  PolicyConfig policy;
  std::filesystem::path params_path;
  std::filesystem::path cluster_spec_path;
  std::uint64_t seed = 42;  // predictor seed when the policy record has none
  double health_interval_s = 1.0;
  double backend_timeout_s = 600.0;
  std::string log_level = "info";
};

/// Gateway config document (JSON) with keys listen_addr, backends [{id, addr,
/// machine, tp}], policy, params, cluster_spec, seed, health_interval_s,
/// backend_timeout_s, log_level. Relative paths resolve against `base_dir`.
GatewayConfig parse_gateway_config(std::string_view text, const std::filesystem::path& base_dir);

/// Reads the file, then applies HETSERVE_LISTEN_ADDR and HETSERVE_LOG_LEVEL
/// from the environment when set.
GatewayConfig load_gateway_config(const std::filesystem::path& path);

/// Descriptors for the configured backends, with params from the params
/// table and budgets from the cluster spec. Throws ValidationError for an
/// unknown machine or a missing (machine, tp) entry, InfeasibleError when an
/// instance violates the memory constraint.
std::vector<BackendDescriptor> resolve_backends(const GatewayConfig& config,
                                                const ClusterSpec& cluster,
                                                const ParamsTable& params);

struct BackendReply {
  bool ok = false;
  double latency_s = 0.0;
  Tokens tokens = 0;
  std::string error;
};

/// Sends one request to a backend and blocks for the reply. Called outside
/// any gateway lock.
using ForwardFn = std::function<BackendReply(const BackendDescriptor&, const Request&)>;

struct SubmitRequest {
  std::string id;
  Tokens input_len = 0;
  std::optional<Tokens> output_len;
};

struct SubmitResult {
  int status = 200;  // 200, 400, 409, 502 or 503
  std::string instance;
  double latency_s = 0.0;
  Tokens tokens = 0;
  bool retried = false;
  std::string error;
};

struct GatewayMetrics {
  std::vector<std::string> instances;
  std::vector<double> loads;
  std::vector<double> kv_usage;
  std::vector<bool> healthy;
  std::size_t in_flight = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;
  Tokens cumulative_tokens = 0;  // sum of I + O over completed requests
  double uptime_s = 0.0;
  double throughput = 0.0;  // cumulative_tokens / uptime_s
};

/// One entry per scheduling event, in commit order.
struct GatewayEvent {
  enum class Kind { kDispatch, kComplete, kFail };
  Kind kind = Kind::kDispatch;
  std::string request_id;
  std::size_t instance = 0;
};

/// HTTP-free gateway logic. Every accepted request ends in exactly one of
/// completed / failed; its workload is released exactly once.
class GatewayCore {
 public:
  GatewayCore(std::vector<BackendDescriptor> backends, ModelSpec model, WorkloadLimits limits,
              PolicyConfig policy, std::uint64_t seed, ForwardFn forward);

  /// Blocks until the backend answers. A failed forward marks the backend
  /// down, rolls the request back and retries once on the next choice.
  SubmitResult submit(const SubmitRequest& request);

  GatewayMetrics metrics() const;
  std::vector<BackendDescriptor> backends() const;
  std::vector<GatewayEvent> events() const;

  void set_healthy(std::size_t index, bool healthy);
  std::size_t backend_count() const { return backends_.size(); }

 private:
  std::vector<BackendDescriptor> backends_;
  WorkloadLimits limits_;
  ForwardFn forward_;
  Scheduler scheduler_;
  const std::chrono::steady_clock::time_point started_;

  mutable std::mutex mu_;
  OutputLengthPredictor predictor_;
  std::unordered_set<std::string> seen_;
  std::vector<bool> healthy_;
  std::vector<GatewayEvent> events_;
  std::uint64_t completed_ = 0;
  std::uint64_t failed_ = 0;
  Tokens cumulative_tokens_ = 0;
};

/// POSTs {id, input_len, output_len} to http://<address>/generate.
ForwardFn http_forwarder(double timeout_s);

/// HTTP front end: POST /v1/requests, GET /v1/metrics, GET /v1/instances,
/// GET /health. Probes each backend's GET /health periodically.
class GatewayServer {
 public:
  GatewayServer(std::vector<BackendDescriptor> backends, ModelSpec model, WorkloadLimits limits,
                PolicyConfig policy, std::uint64_t seed, double health_interval_s,
                ForwardFn forward);
  ~GatewayServer();

  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host, int port);
  void stop();

  GatewayCore& core() { return core_; }

 private:
  void probe_loop();

  GatewayCore core_;
  double health_interval_s_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
  std::thread prober_;
  std::mutex probe_mu_;
  std::condition_variable probe_cv_;
  bool stopping_ = false;
};

/// "host:port" split; throws ValidationError when malformed.
std::pair<std::string, int> split_address(const std::string& address);

}  // namespace hetserve
