#pragma once

#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "iterchat/backend.h"

namespace fixtures {

// Answers each call with the next canned reply (or from a callback) and
// keeps every prompt it was sent. Does not accept directives.
class ScriptedBackend final : public iterchat::Backend {
 public:
  using Reply = std::function<std::string(std::span<const iterchat::ChatMessage>, std::size_t call)>;

  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  explicit ScriptedBackend(Reply reply) : reply_(std::move(reply)) {}

  std::string complete(std::span<const iterchat::ChatMessage> messages) override {
    std::lock_guard lock(mu_);
    const std::size_t call = calls_.size();
    calls_.emplace_back(messages.begin(), messages.end());
    if (reply_) return reply_(messages, call);
    if (call >= replies_.size()) throw iterchat::BackendError(iterchat::BackendError::Kind::kProtocol, "script exhausted");
    return replies_[call];
  }

  std::vector<std::vector<iterchat::ChatMessage>> calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> replies_;
  Reply reply_;
  std::vector<std::vector<iterchat::ChatMessage>> calls_;
};

}  // namespace fixtures
