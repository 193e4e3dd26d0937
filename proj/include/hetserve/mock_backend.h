// SPDX-License-Identifier: Apache-2.0
//
// Stand-in inference server: replays the latency model as wall-clock delays
// with the same continuous-batching rules as the simulator.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>

#include "hetserve/batch_engine.h"

namespace httplib {
class Server;
}

namespace hetserve {

struct MockCompletion {
  double latency_s = 0.0;  // wall clock, enqueue to departure
  Tokens tokens = 0;       // input + output
};

/// One simulated instance running on the wall clock. Each model second takes
/// `time_scale` wall seconds. Steps are timed against absolute deadlines so
/// latencies do not drift with scheduling jitter.
class MockBackend {
 public:
  MockBackend(LatencyParams params, KvBudget budget, const ModelSpec& model, double time_scale);
  ~MockBackend();

  MockBackend(const MockBackend&) = delete;
  MockBackend& operator=(const MockBackend&) = delete;

  /// Queues a request; the future resolves at its simulated departure.
  /// Throws InfeasibleError when the request can never fit, StateError after
  /// stop().
  std::future<MockCompletion> submit(Tokens input_len, Tokens output_len);

  /// Stops the loop; pending futures fail with StateError.
  void stop();

 private:
  struct Pending {
    std::promise<MockCompletion> promise;
    std::chrono::steady_clock::time_point enqueued;
    Tokens tokens = 0;
  };

  void run();

  double time_scale_;
  std::mutex mu_;
  std::condition_variable cv_;
  ContinuousBatchEngine engine_;
  std::unordered_map<std::size_t, Pending> pending_;
  std::size_t next_key_ = 0;
  bool stopping_ = false;
  std::thread worker_;
};

/// HTTP wrapper: POST /generate {id, input_len, output_len} and GET /health.
class MockBackendServer {
 public:
  MockBackendServer(LatencyParams params, KvBudget budget, const ModelSpec& model,
                    double time_scale);
  ~MockBackendServer();

  MockBackendServer(const MockBackendServer&) = delete;
  MockBackendServer& operator=(const MockBackendServer&) = delete;

  /// Port 0 picks a free port; returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  MockBackend backend_;
  std::unique_ptr<httplib::Server> server_;
  std::thread listener_;
};

}  // namespace hetserve
