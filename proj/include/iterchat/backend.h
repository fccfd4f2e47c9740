#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iterchat/error.h"
#include "iterchat/json.h"

namespace iterchat {

enum class Role { kSystem, kUser, kAssistant };

std::string_view to_string(Role role);

struct ChatMessage {
  Role role = Role::kUser;
  std::string content;
};

struct BackendConfig {
  std::string endpoint_url;  // base URL; requests go to {endpoint_url}/chat/completions
  std::string model_id;
  std::string api_key_env = "ITERCHAT_API_KEY";
  double timeout_seconds = 60.0;
  int max_retries = 3;
  double temperature = 0.0;
  double backoff_base_seconds = 0.5;
  int max_in_flight = 4;
  std::uint64_t jitter_seed = 0;

  // Throws Error when a field is out of range.
  void check() const;

  // Defaults overridden by ITERCHAT_API_BASE / ITERCHAT_MODEL when set.
  static BackendConfig from_env();
  // Applies keys present in `json` on top of `base`.
  static BackendConfig from_json(const Json& json, BackendConfig base);
};

class BackendError : public Error {
 public:
  enum class Kind { kPrecondition, kHttpStatus, kRetriesExhausted, kProtocol, kTemplate };

  BackendError(Kind kind, const std::string& what, int status = 0, int attempts = 0)
      : Error(what), kind_(kind), status_(status), attempts_(attempts) {}

  Kind kind() const { return kind_; }
  int status() const { return status_; }
  int attempts() const { return attempts_; }

 private:
  Kind kind_;
  int status_;
  int attempts_;
};

// A text-generation backend. Implementations are safe to call from several
// threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual std::string complete(std::span<const ChatMessage> messages) = 0;

  // Backends that answer from an embedded `@@DIRECTIVE {...}@@` line rather
  // than from the prompt text. Callers only attach directives when this is
  // true so that real models never see them.
  virtual bool accepts_directives() const { return false; }
};

// Appends the directive line to the last message.
void attach_directive(std::vector<ChatMessage>& messages, const Json& directive);

// Extracts the directive JSON from the final line of the last message.
std::optional<Json> find_directive(std::span<const ChatMessage> messages);

// Deterministic reply computed from the directive:
//   {"kind": "realize", "gain": [...], "history": {...}}
//       -> {"system_utterance": ..., "user_utterance": "I like red."}
//   {"kind": "extract", "state_gain": [...], "preference_extraction": {...}}
//       -> the same two keys, echoed
//   {"kind": "draft", "domain": ..., "max_slots": n} -> a fixture schema
//   {"kind": "draft_values", "domain": ..., "slot": ...} -> {"schema_values": [...]}
//   {"kind": "raw", "reply": "..."} -> the reply verbatim
// Throws BackendError(kTemplate, "no directive") when absent or garbled.
std::string template_complete(std::span<const ChatMessage> messages);

class TemplateBackend final : public Backend {
 public:
  std::string complete(std::span<const ChatMessage> messages) override {
    return template_complete(messages);
  }
  bool accepts_directives() const override { return true; }
};

// Single chat-completions call with retries. Transient failures (transport
// errors, 429, 5xx) are retried up to max_retries times with full-jitter
// exponential backoff; other 4xx fail at once.
std::string complete(const BackendConfig& config, std::span<const ChatMessage> messages);

class HttpChatBackend final : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  explicit HttpChatBackend(BackendConfig config);
  // Test hook: replaces the backoff sleep.
  HttpChatBackend(BackendConfig config, Sleeper sleeper);
  ~HttpChatBackend() override;

  std::string complete(std::span<const ChatMessage> messages) override;

  const BackendConfig& config() const { return config_; }
  // Total HTTP attempts made so far (all calls).
  int attempts() const;

 private:
  struct State;
  BackendConfig config_;
  std::unique_ptr<State> state_;
};

// Chat-completions request body for `messages` (exposed for tests).
Json build_chat_request(const BackendConfig& config, std::span<const ChatMessage> messages);
// choices[0].message.content, or BackendError(kProtocol) carrying the body.
std::string parse_chat_response(std::string_view body);

}  // namespace iterchat
