// SPDX-License-Identifier: Apache-2.0

#include "hetserve/mock_backend.h"

#include <cmath>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "hetserve/errors.h"
#include "http_util.h"
#include "json_util.h"

namespace hetserve {

using Clock = std::chrono::steady_clock;

MockBackend::MockBackend(LatencyParams params, KvBudget budget, const ModelSpec& model,
                         double time_scale)
    : time_scale_(time_scale), engine_(params, budget, model) {
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) {
    throw ValidationError("time_scale must be positive");
  }
  worker_ = std::thread([this] { run(); });
}

MockBackend::~MockBackend() { stop(); }

std::future<MockCompletion> MockBackend::submit(Tokens input_len, Tokens output_len) {
  std::lock_guard lock(mu_);
  if (stopping_) throw StateError("backend is stopped");
  const std::size_t key = next_key_++;
  engine_.enqueue({key, input_len, output_len});
  Pending& p = pending_[key];
  p.enqueued = Clock::now();
  p.tokens = input_len + output_len;
  cv_.notify_all();
  return p.promise.get_future();
}

void MockBackend::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void MockBackend::run() {
  std::unique_lock lock(mu_);
  Clock::time_point deadline;
  bool idle = true;
  while (!stopping_) {
    if (engine_.idle()) {
      idle = true;
      cv_.wait(lock, [&] { return stopping_ || !engine_.idle(); });
      continue;
    }
    if (idle) {
      deadline = Clock::now();
      idle = false;
    }
    const auto step = engine_.begin_step();
    if (!step) {
      // Defensive: nothing admissible although work is queued.
      cv_.wait(lock);
      continue;
    }
    deadline += std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(step->duration * time_scale_));
    if (cv_.wait_until(lock, deadline, [&] { return stopping_; })) break;
    const auto now = Clock::now();
    for (std::size_t key : engine_.finish_step()) {
      auto it = pending_.find(key);
      if (it == pending_.end()) continue;
      MockCompletion done;
      done.latency_s = std::chrono::duration<double>(now - it->second.enqueued).count();
      done.tokens = it->second.tokens;
      it->second.promise.set_value(done);
      pending_.erase(it);
    }
  }
  for (auto& [key, p] : pending_) {
    p.promise.set_exception(std::make_exception_ptr(StateError("backend stopped")));
  }
  pending_.clear();
}

MockBackendServer::MockBackendServer(LatencyParams params, KvBudget budget,
                                     const ModelSpec& model, double time_scale)
    : backend_(params, budget, model, time_scale), server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [] { return new httplib::ThreadPool(detail::kHttpWorkers); };

  server_->Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
    Tokens input_len = 0;
    Tokens output_len = 0;
    std::string id;
    try {
      const detail::json body = detail::parse_json(req.body);
      detail::check_keys(body, {"id", "input_len", "output_len"}, "generate");
      id = detail::get_string(body, "id", "generate");
      input_len = detail::get_int(body, "input_len", "generate");
      output_len = detail::get_int(body, "output_len", "generate");
      if (input_len < 1 || output_len < 1) throw ValidationError("lengths must be >= 1");
    } catch (const Error& e) {
      detail::reply_json(res, 400, {{"error", e.what()}});
      return;
    }
    try {
      const MockCompletion done = backend_.submit(input_len, output_len).get();
      detail::reply_json(res, 200, {{"id", id}, {"latency_s", done.latency_s}, {"tokens", done.tokens}});
    } catch (const InfeasibleError& e) {
      detail::reply_json(res, 422, {{"error", e.what()}});
    } catch (const Error& e) {
      detail::reply_json(res, 503, {{"error", e.what()}});
    }
  });
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    detail::reply_json(res, 200, {{"status", "ok"}});
  });
}

MockBackendServer::~MockBackendServer() { stop(); }

int MockBackendServer::start(const std::string& host, int port) {
  detail::bind_server(*server_, host, port);
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  spdlog::info("mock backend listening on {}:{}", host, port);
  return port;
}

void MockBackendServer::stop() {
  backend_.stop();
  server_->stop();
  if (listener_.joinable()) listener_.join();
}

}  // namespace hetserve
