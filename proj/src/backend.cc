#include "iterchat/backend.h"

#include <algorithm>
#include <cstdlib>
#include <atomic>
#include <mutex>
#include <random>
#include <semaphore>
#include <thread>

#include "httplib.h"
#include "iterchat/state.h"
#include "iterchat/text.h"

namespace iterchat {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

void BackendConfig::check() const {
  if (!(timeout_seconds > 0)) throw Error("backend timeout must be positive");
  if (max_retries < 0) throw Error("backend max_retries must be >= 0");
  if (!(temperature >= 0 && temperature <= 2)) throw Error("backend temperature must be in [0, 2]");
  if (backoff_base_seconds < 0) throw Error("backend backoff base must be >= 0");
  if (max_in_flight < 1) throw Error("backend parallelism cap must be >= 1");
}

BackendConfig BackendConfig::from_env() {
  BackendConfig config;
  config.endpoint_url = "https://api.openai.com/v1";
  config.model_id = "gpt-4";
  if (const char* base = std::getenv("ITERCHAT_API_BASE"); base != nullptr && *base != '\0') {
    config.endpoint_url = base;
  }
  if (const char* model = std::getenv("ITERCHAT_MODEL"); model != nullptr && *model != '\0') {
    config.model_id = model;
  }
  return config;
}

BackendConfig BackendConfig::from_json(const Json& json, BackendConfig base) {
  if (!json.is_object()) throw Error("backend config must be a JSON object");
  try {
    if (json.contains("endpoint_url")) base.endpoint_url = json["endpoint_url"].get<std::string>();
    if (json.contains("model_id")) base.model_id = json["model_id"].get<std::string>();
    if (json.contains("api_key_env")) base.api_key_env = json["api_key_env"].get<std::string>();
    if (json.contains("timeout")) base.timeout_seconds = json["timeout"].get<double>();
    if (json.contains("max_retries")) base.max_retries = json["max_retries"].get<int>();
    if (json.contains("temperature")) base.temperature = json["temperature"].get<double>();
    if (json.contains("max_in_flight")) base.max_in_flight = json["max_in_flight"].get<int>();
    if (json.contains("backoff_base_seconds")) {
      base.backoff_base_seconds = json["backoff_base_seconds"].get<double>();
    }
  } catch (const Json::exception& e) {
    throw Error(std::string("backend config: ") + e.what());
  }
  base.check();
  return base;
}

// ---------------------------------------------------------------------------
// Directives and the template backend.

namespace {

constexpr std::string_view kDirectiveOpen = "@@DIRECTIVE ";
constexpr std::string_view kDirectiveClose = "@@";

std::string list_values(const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += (i + 1 == values.size()) ? " and " : ", ";
    out += values[i];
  }
  return out;
}

std::string realize_reply(const Json& directive) {
  if (!directive.contains("gain")) throw BackendError(BackendError::Kind::kTemplate, "no directive");
  StateGain gain;
  try {
    gain = gain_from_json(directive["gain"]);
  } catch (const FormatError&) {
    throw BackendError(BackendError::Kind::kTemplate, "no directive");
  }
  std::vector<std::string> sentences;
  for (const GainOp& op : gain.ops) {
    switch (op.kind) {
      case GainKind::kAdd: sentences.push_back("I like " + list_values(op.values) + "."); break;
      case GainKind::kRemove: sentences.push_back("Actually, drop " + op.slot + "."); break;
      case GainKind::kSet:
        sentences.push_back("Change " + op.slot + " to " + list_values(op.values) + ".");
        break;
      case GainKind::kClear: sentences.push_back("Forget about " + op.slot + "."); break;
    }
  }
  const bool fresh = !directive.contains("history") || !directive["history"].is_object() ||
                     directive["history"].empty();
  Json reply{{"system_utterance",
              fresh ? "Hi! What are you looking for today?" : "Noted. Is there anything else you'd like?"},
             {"user_utterance", join(sentences, " ")}};
  return reply.dump();
}

Json closed_slot(const char* name, const char* description, bool multi, std::vector<std::string> values) {
  return Json{{"name", name},
              {"description", description},
              {"multi_valued", multi},
              {"allow_free_values", false},
              {"schema_values", std::move(values)}};
}

Json fixture_schema(const std::string& domain) {
  const std::string d = normalize(domain);
  auto has = [&](std::string_view word) { return d.find(word) != std::string::npos; };
  Json slots = Json::array();
  std::string name = "generic";
  if (has("commerce") || has("shop") || has("product")) {
    name = "e-commerce";
    slots.push_back(closed_slot("price", "Budget for the item.", false,
                                {"less than $50", "between $50 and $100", "between $100 and $200",
                                 "more than $200", "None"}));
    slots.push_back(closed_slot("brand", "Preferred manufacturer.", true,
                                {"acme", "globex", "initech", "umbrella"}));
    slots.push_back(closed_slot("color", "Preferred color of the item.", true,
                                {"red", "blue", "green", "black", "white"}));
    slots.push_back(closed_slot("size", "Item size.", false, {"small", "medium", "large"}));
  } else if (has("travel") || has("trip")) {
    name = "travel";
    slots.push_back(closed_slot("location", "Destination.", true, {"paris", "tokyo", "new york", "rome"}));
    slots.push_back(closed_slot("date", "Travel period.", false, {"this weekend", "next week", "next month"}));
    slots.push_back(closed_slot("budget", "Total trip budget.", false, {"low", "medium", "high"}));
  } else if (has("hotel")) {
    name = "hotel";
    slots.push_back(closed_slot("price", "Price range.", false, {"cheap", "moderate", "expensive"}));
    slots.push_back(closed_slot("area", "Part of town.", false, {"north", "south", "east", "west", "centre"}));
    slots.push_back(closed_slot("stars", "Star rating.", false, {"2", "3", "4", "5"}));
    slots.push_back(closed_slot("parking", "Parking availability.", false, {"yes", "no"}));
  } else if (has("food") || has("restaurant") || has("dining")) {
    name = "food";
    slots.push_back(closed_slot("cuisine", "Kind of food.", true, {"italian", "chinese", "indian", "mexican"}));
    slots.push_back(closed_slot("price", "Price level.", false, {"cheap", "moderate", "expensive"}));
    slots.push_back(closed_slot("spiciness", "Spice tolerance.", false, {"mild", "medium", "hot"}));
  } else {
    slots.push_back(closed_slot("category", "Kind of item or service.", false, {"basic", "standard", "premium"}));
    slots.push_back(closed_slot("budget", "Spending limit.", false, {"low", "medium", "high"}));
  }
  return Json{{"domain_name", name}, {"version", "draft-1"}, {"slots", slots}};
}

std::string draft_values_reply(const Json& directive) {
  const std::string domain = directive.value("domain", "");
  const std::string slot = normalize(directive.value("slot", ""));
  Json schema = fixture_schema(domain);
  for (const Json& s : schema["slots"]) {
    if (normalize(s["name"].get<std::string>()) == slot) {
      return Json{{"schema_values", s["schema_values"]}}.dump();
    }
  }
  return Json{{"schema_values", {"low", "medium", "high"}}}.dump();
}

}  // namespace

void attach_directive(std::vector<ChatMessage>& messages, const Json& directive) {
  if (messages.empty()) messages.push_back({Role::kUser, ""});
  std::string& content = messages.back().content;
  if (!content.empty() && content.back() != '\n') content += '\n';
  content += kDirectiveOpen;
  content += directive.dump();
  content += kDirectiveClose;
}

std::optional<Json> find_directive(std::span<const ChatMessage> messages) {
  if (messages.empty()) return std::nullopt;
  std::string_view content = messages.back().content;
  while (!content.empty() && (content.back() == '\n' || content.back() == ' ' || content.back() == '\r')) {
    content.remove_suffix(1);
  }
  const std::size_t nl = content.rfind('\n');
  std::string_view line = nl == std::string_view::npos ? content : content.substr(nl + 1);
  if (!line.starts_with(kDirectiveOpen) || !line.ends_with(kDirectiveClose) ||
      line.size() < kDirectiveOpen.size() + kDirectiveClose.size()) {
    return std::nullopt;
  }
  line = line.substr(kDirectiveOpen.size(), line.size() - kDirectiveOpen.size() - kDirectiveClose.size());
  Json parsed = Json::parse(line, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) return std::nullopt;
  return parsed;
}

std::string template_complete(std::span<const ChatMessage> messages) {
  const auto directive = find_directive(messages);
  if (!directive || !directive->contains("kind") || !(*directive)["kind"].is_string()) {
    throw BackendError(BackendError::Kind::kTemplate, "no directive");
  }
  const std::string kind = (*directive)["kind"].get<std::string>();
  try {
    if (kind == "realize") return realize_reply(*directive);
    if (kind == "extract") {
      Json reply = Json::object();
      if (directive->contains("state_gain")) reply["state_gain"] = (*directive)["state_gain"];
      if (directive->contains("preference_extraction")) {
        reply["preference_extraction"] = (*directive)["preference_extraction"];
      }
      return reply.dump();
    }
    if (kind == "draft") return fixture_schema(directive->value("domain", "")).dump();
    if (kind == "draft_values") return draft_values_reply(*directive);
    if (kind == "raw") return (*directive).at("reply").get<std::string>();
  } catch (const Json::exception&) {
    throw BackendError(BackendError::Kind::kTemplate, "no directive");
  }
  throw BackendError(BackendError::Kind::kTemplate, "no directive");
}

// ---------------------------------------------------------------------------
// Chat-completions over HTTP.

Json build_chat_request(const BackendConfig& config, std::span<const ChatMessage> messages) {
  Json msgs = Json::array();
  for (const ChatMessage& m : messages) {
    msgs.push_back(Json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  return Json{{"model", config.model_id}, {"messages", msgs}, {"temperature", config.temperature}};
}

std::string parse_chat_response(std::string_view body) {
  Json json = Json::parse(body, nullptr, false);
  if (json.is_discarded()) {
    throw BackendError(BackendError::Kind::kProtocol, "response is not JSON: " + std::string(body));
  }
  const Json* content = nullptr;
  if (json.contains("choices") && json["choices"].is_array() && !json["choices"].empty()) {
    const Json& choice = json["choices"][0];
    if (choice.is_object() && choice.contains("message") && choice["message"].is_object() &&
        choice["message"].contains("content") && choice["message"]["content"].is_string()) {
      content = &choice["message"]["content"];
    }
  }
  if (content == nullptr) {
    throw BackendError(BackendError::Kind::kProtocol,
                       "response lacks choices[0].message.content: " + std::string(body));
  }
  return content->get<std::string>();
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // request path
};

Endpoint split_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw BackendError(BackendError::Kind::kPrecondition, "endpoint URL needs a scheme: " + url);
  const std::size_t slash = url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = url.substr(0, slash);
  std::string base = slash == std::string::npos ? "" : url.substr(slash);
  while (!base.empty() && base.back() == '/') base.pop_back();
  ep.path = base + "/chat/completions";
  return ep;
}

bool transient_status(int status) { return status == 429 || status >= 500; }

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 300;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

struct HttpChatBackend::State {
  explicit State(const BackendConfig& config)
      : in_flight(config.max_in_flight), rng(config.jitter_seed) {}

  std::counting_semaphore<1024> in_flight;
  std::mutex rng_mutex;
  std::mt19937_64 rng;
  std::atomic<int> attempts{0};
  Sleeper sleeper;

  double jitter(double cap) {
    std::lock_guard lock(rng_mutex);
    return std::uniform_real_distribution<double>(0.0, cap)(rng);
  }
};

HttpChatBackend::HttpChatBackend(BackendConfig config)
    : HttpChatBackend(std::move(config), [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }) {}

HttpChatBackend::HttpChatBackend(BackendConfig config, Sleeper sleeper) : config_(std::move(config)) {
  config_.check();
  config_.max_in_flight = std::min(config_.max_in_flight, 1024);
  state_ = std::make_unique<State>(config_);
  state_->sleeper = std::move(sleeper);
}

HttpChatBackend::~HttpChatBackend() = default;

int HttpChatBackend::attempts() const { return state_->attempts.load(); }

std::string HttpChatBackend::complete(std::span<const ChatMessage> messages) {
  if (messages.empty()) throw BackendError(BackendError::Kind::kPrecondition, "no messages to send");
  for (const ChatMessage& m : messages) {
    if (m.role != Role::kAssistant && m.content.empty()) {
      throw BackendError(BackendError::Kind::kPrecondition, "empty " + std::string(to_string(m.role)) + " message");
    }
  }
  const Endpoint ep = split_endpoint(config_.endpoint_url);
  const std::string body = build_chat_request(config_, messages).dump();
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_seconds));
  std::string last_failure;
  const int total = config_.max_retries + 1;
  for (int attempt = 1; attempt <= total; ++attempt) {
    {
      state_->in_flight.acquire();
      struct Release {
        State* s;
        ~Release() { s->in_flight.release(); }
      } release{state_.get()};

      httplib::Client client(ep.origin);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      ++state_->attempts;
      auto res = client.Post(ep.path, headers, body, "application/json");
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        return parse_chat_response(res->body);
      } else if (transient_status(res->status)) {
        last_failure = "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body);
      } else {
        throw BackendError(BackendError::Kind::kHttpStatus,
                           "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body), res->status,
                           attempt);
      }
    }
    if (attempt < total) {
      const double cap = config_.backoff_base_seconds * static_cast<double>(1ULL << std::min(attempt - 1, 20));
      state_->sleeper(std::chrono::duration<double>(state_->jitter(cap)));
    }
  }
  throw BackendError(BackendError::Kind::kRetriesExhausted,
                     "gave up after " + std::to_string(total) + " attempts; last failure: " + last_failure, 0,
                     total);
}

std::string complete(const BackendConfig& config, std::span<const ChatMessage> messages) {
  HttpChatBackend backend(config);
  return backend.complete(messages);
}

}  // namespace iterchat
