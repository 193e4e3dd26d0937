// SPDX-License-Identifier: Apache-2.0

#include "hetserve/batch_engine.h"

#include <fmt/format.h>

#include <algorithm>

#include "hetserve/errors.h"

namespace hetserve {

ContinuousBatchEngine::ContinuousBatchEngine(LatencyParams params, KvBudget budget,
                                             const ModelSpec& model)
    : params_(params),
      budget_(budget),
      bytes_per_token_(static_cast<double>(kv_bytes_per_token(model))) {}

double ContinuousBatchEngine::reserved_bytes() const {
  return bytes_per_token_ * static_cast<double>(reserved_tokens_);
}

void ContinuousBatchEngine::enqueue(const Job& job) {
  if (job.input_len < 1 || job.output_len < 1) {
    throw ValidationError("job lengths must be >= 1");
  }
  const double need = bytes_per_token_ * static_cast<double>(job.input_len + job.output_len);
  if (need > budget_.total_bytes) {
    throw InfeasibleError(fmt::format(
        "job of {} + {} tokens needs {:.0f} bytes of KV cache, instance budget is {:.0f}",
        job.input_len, job.output_len, need, budget_.total_bytes));
  }
  queue_.push_back(job);
}

std::optional<ContinuousBatchEngine::Step> ContinuousBatchEngine::begin_step() {
  if (current_) throw StateError("begin_step called twice without finish_step");

  while (!queue_.empty()) {
    const Job& next = queue_.front();
    const Tokens want = reserved_tokens_ + next.input_len + next.output_len;
    if (bytes_per_token_ * static_cast<double>(want) > budget_.total_bytes) break;
    reserved_tokens_ = want;
    active_.push_back(Active{next, 0, false});
    queue_.pop_front();
  }
  peak_usage_ = std::max(peak_usage_, reserved_bytes() / budget_.total_bytes);

  std::size_t fresh = 0;
  Tokens fresh_max_input = 0;
  for (const auto& a : active_) {
    if (!a.prefilled) {
      ++fresh;
      fresh_max_input = std::max(fresh_max_input, a.job.input_len);
    }
  }
  if (fresh > 0) {
    current_ = Step{StepKind::kPrefill,
                    prefill_time(params_, static_cast<std::int64_t>(fresh), fresh_max_input),
                    fresh};
    return current_;
  }
  if (active_.empty()) return std::nullopt;

  Tokens max_cached = 0;
  for (const auto& a : active_) {
    max_cached = std::max(max_cached, a.job.input_len + a.generated + 1);
  }
  current_ = Step{StepKind::kDecode,
                  decode_iteration_time(params_, max_cached,
                                        static_cast<std::int64_t>(active_.size())),
                  active_.size()};
  return current_;
}

std::vector<std::size_t> ContinuousBatchEngine::finish_step() {
  if (!current_) throw StateError("finish_step without begin_step");
  const StepKind kind = current_->kind;
  current_.reset();

  std::vector<std::size_t> departed;
  if (kind == StepKind::kPrefill) {
    for (auto& a : active_) a.prefilled = true;
    return departed;
  }
  for (auto& a : active_) ++a.generated;
  auto done = [](const Active& a) { return a.generated >= a.job.output_len; };
  for (const auto& a : active_) {
    if (done(a)) {
      departed.push_back(a.job.key);
      reserved_tokens_ -= a.job.input_len + a.job.output_len;
    }
  }
  std::erase_if(active_, done);
  return departed;
}

}  // namespace hetserve
