#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ctnli/chat.hpp"
#include "ctnli/errors.hpp"
#include "ctnli/hash.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

// ---------------------------------------------------------------------------
// Requests and replies
// ---------------------------------------------------------------------------

struct ChatRequest {
  std::vector<ChatMessage> messages;
  GenerationConfig gen;
  std::string request_key;
};

// The key is a pure function of the listed fields; identical logical requests
// hash identically across processes and platforms.
inline std::string compute_request_key(const std::string& backend_id,
                                       const std::vector<ChatMessage>& messages,
                                       const GenerationConfig& gen) {
  json messages_doc = json::array();
  for (const auto& m : messages) messages_doc.push_back({to_string(m.role), m.text});
  json doc = {{"backend", backend_id},
              {"model", gen.model_name},
              {"temperature", gen.temperature},
              {"max_output_tokens", gen.max_output_tokens},
              {"messages", std::move(messages_doc)}};
  return sha256_hex(doc.dump());
}

inline ChatRequest make_chat_request(const std::string& backend_id,
                                     std::vector<ChatMessage> messages,
                                     const GenerationConfig& gen) {
  if (messages.empty()) throw Error("chat request has no messages");
  gen.validate();
  ChatRequest req;
  req.request_key = compute_request_key(backend_id, messages, gen);
  req.messages = std::move(messages);
  req.gen = gen;
  return req;
}

enum class FinishReason { Stop, Length, Filtered, Error };

inline const char* to_string(FinishReason r) {
  switch (r) {
    case FinishReason::Stop: return "stop";
    case FinishReason::Length: return "length";
    case FinishReason::Filtered: return "filtered";
    case FinishReason::Error: return "error";
  }
  return "?";
}

inline FinishReason parse_finish_reason(const std::string& s) {
  if (s == "stop") return FinishReason::Stop;
  if (s == "length") return FinishReason::Length;
  if (s == "filtered") return FinishReason::Filtered;
  if (s == "error") return FinishReason::Error;
  throw Error("unknown finish reason: " + s);
}

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
  int total_tokens = 0;

  bool operator==(const TokenUsage&) const = default;
};

struct BackendReply {
  std::string text;  // present iff finish_reason is Stop or Length
  FinishReason finish_reason = FinishReason::Stop;
  std::optional<TokenUsage> usage;
  std::chrono::milliseconds latency{0};
  bool cache_hit = false;
  int attempts = 1;
};

// ---------------------------------------------------------------------------
// Error classification
// ---------------------------------------------------------------------------

struct WireResponse {
  int status = 0;
  bool transport_timeout = false;
  bool transport_error = false;
  std::string detail;
};

inline ErrorClass classify_error(const WireResponse& wire) {
  if (wire.transport_timeout) return ErrorClass::Timeout;
  if (wire.transport_error) return ErrorClass::ServerError;
  switch (wire.status) {
    case 401:
    case 403:
      return ErrorClass::AuthError;
    case 408:
      return ErrorClass::Timeout;
    case 429:
      return ErrorClass::RateLimited;
    default:
      return ErrorClass::ServerError;
  }
}

// ---------------------------------------------------------------------------
// Retry policy (exponential backoff, jittered, bounded)
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  std::chrono::milliseconds max_delay{30'000};
  // Injectable for tests; defaults to a real sleep.
  std::function<void(std::chrono::milliseconds)> sleeper =
      [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
};

namespace detail {

// Equal-jitter backoff, clamped so the delay sequence never decreases.
class BackoffSchedule {
 public:
  explicit BackoffSchedule(const RetryPolicy& policy)
      : policy_(policy), rng_(std::random_device{}()) {}

  std::chrono::milliseconds next() {
    const auto capped = std::min<long long>(
        policy_.max_delay.count(), policy_.base_delay.count() << std::min(step_, 20));
    ++step_;
    std::uniform_int_distribution<long long> jitter(0, capped / 2);
    long long delay = capped / 2 + jitter(rng_);
    delay = std::max(delay, last_);
    last_ = delay;
    return std::chrono::milliseconds(delay);
  }

 private:
  RetryPolicy policy_;
  std::mt19937_64 rng_;
  int step_ = 0;
  long long last_ = 0;
};

}  // namespace detail

// Bounds concurrent outstanding requests per backend instance.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int limit) : limit_(std::max(1, limit)) {}

  class Guard {
   public:
    explicit Guard(ConcurrencyGate& gate) : gate_(gate) {
      std::unique_lock lock(gate_.mutex_);
      gate_.cv_.wait(lock, [&] { return gate_.active_ < gate_.limit_; });
      ++gate_.active_;
    }
    ~Guard() {
      {
        std::lock_guard lock(gate_.mutex_);
        --gate_.active_;
      }
      gate_.cv_.notify_one();
    }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    ConcurrencyGate& gate_;
  };

 private:
  friend class Guard;
  int limit_;
  int active_ = 0;
  std::mutex mutex_;
  std::condition_variable cv_;
};

// ---------------------------------------------------------------------------
// Backend interface
// ---------------------------------------------------------------------------

enum class BackendKind { OpenAICompat, GeminiStyle, MockReplay };

inline const char* to_string(BackendKind k) {
  switch (k) {
    case BackendKind::OpenAICompat: return "openai";
    case BackendKind::GeminiStyle: return "gemini";
    case BackendKind::MockReplay: return "mock";
  }
  return "?";
}

inline BackendKind parse_backend_kind(const std::string& s) {
  if (s == "openai") return BackendKind::OpenAICompat;
  if (s == "gemini") return BackendKind::GeminiStyle;
  if (s == "mock") return BackendKind::MockReplay;
  throw Error("unknown backend: " + s + " (expected openai|gemini|mock)");
}

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Identifier hashed into request keys; cache/fixture entries record it.
  virtual std::string id() const = 0;
  virtual BackendReply send(const ChatRequest& request) = 0;
};

inline BackendReply send_chat(ChatBackend& backend, const ChatRequest& request) {
  return backend.send(request);
}

// Paper-stated defaults; everything is overridable per run.
inline GenerationConfig openai_default_gen() {
  GenerationConfig gen;
  gen.model_name = "gpt-3.5-turbo-0613";
  gen.temperature = 0.6;
  return gen;
}

inline GenerationConfig gemini_default_gen() {
  GenerationConfig gen;
  gen.model_name = "gemini-pro";
  gen.temperature = 0.7;
  gen.safety_setting = "BLOCK_NONE";
  return gen;
}

inline GenerationConfig default_gen_for(BackendKind kind) {
  switch (kind) {
    case BackendKind::GeminiStyle: return gemini_default_gen();
    case BackendKind::OpenAICompat:
    case BackendKind::MockReplay: return openai_default_gen();
  }
  return openai_default_gen();
}

// ---------------------------------------------------------------------------
// Reply records (shared by the cache and replay fixtures)
// ---------------------------------------------------------------------------

namespace detail {

inline json reply_to_json(const BackendReply& reply) {
  json usage = nullptr;
  if (reply.usage) {
    usage = {{"prompt_tokens", reply.usage->prompt_tokens},
             {"completion_tokens", reply.usage->completion_tokens},
             {"total_tokens", reply.usage->total_tokens}};
  }
  return {{"text", reply.text},
          {"finish_reason", to_string(reply.finish_reason)},
          {"usage", std::move(usage)}};
}

inline BackendReply reply_from_json(const json& doc) {
  BackendReply reply;
  reply.text = doc.at("text").get<std::string>();
  reply.finish_reason = parse_finish_reason(doc.at("finish_reason").get<std::string>());
  if (doc.contains("usage") && !doc.at("usage").is_null()) {
    const json& u = doc.at("usage");
    reply.usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0),
                             u.value("total_tokens", 0)};
  }
  return reply;
}

inline std::string entry_checksum(const std::string& request_key, const json& reply_doc) {
  return sha256_hex(request_key + "\n" + reply_doc.dump());
}

inline json make_entry(const std::string& request_key, const std::string& backend_id,
                       const GenerationConfig& gen, const BackendReply& reply) {
  json reply_doc = reply_to_json(reply);
  std::string checksum = entry_checksum(request_key, reply_doc);
  return {{"request_key", request_key},
          {"request",
           {{"backend", backend_id},
            {"model", gen.model_name},
            {"temperature", gen.temperature},
            {"max_output_tokens", gen.max_output_tokens}}},
          {"reply", std::move(reply_doc)},
          {"created_unix_ms",
           std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
               .count()},
          {"checksum", std::move(checksum)}};
}

// Returns the stored reply, or nullopt when the entry fails its integrity
// check. `require_checksum` is on for cache entries, off for hand-written
// fixtures that omit the field.
inline std::optional<BackendReply> entry_reply(const json& entry,
                                               const std::string& expected_key,
                                               bool require_checksum) {
  if (!entry.is_object() || !entry.contains("reply")) return std::nullopt;
  if (entry.contains("request_key") &&
      entry.at("request_key").get<std::string>() != expected_key) {
    return std::nullopt;
  }
  if (entry.contains("checksum")) {
    if (entry.at("checksum").get<std::string>() !=
        entry_checksum(expected_key, entry.at("reply"))) {
      return std::nullopt;
    }
  } else if (require_checksum) {
    return std::nullopt;
  }
  try {
    return reply_from_json(entry.at("reply"));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MockReplay backend
// ---------------------------------------------------------------------------

// Deterministic model stand-in answering from request_key -> reply fixtures.
class MockReplayBackend : public ChatBackend {
 public:
  explicit MockReplayBackend(std::string backend_id = "mock")
      : backend_id_(std::move(backend_id)) {}

  static std::shared_ptr<MockReplayBackend> from_file(const std::filesystem::path& path) {
    json doc = parse_json_file(path);
    if (!doc.is_object()) {
      throw MalformedRecord(path.string(), "fixture file is not a map");
    }
    auto backend = std::make_shared<MockReplayBackend>();
    std::optional<std::string> recorded_id;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      auto reply = detail::entry_reply(it.value(), it.key(), /*require_checksum=*/false);
      if (!reply) {
        throw MalformedRecord(path.string(), "bad fixture entry for key " + it.key());
      }
      backend->entries_[it.key()] = *reply;
      const json* backend_field = find_field(it.value(), {"request"});
      if (backend_field && backend_field->is_object() && backend_field->contains("backend")) {
        std::string id = backend_field->at("backend").get<std::string>();
        if (!recorded_id) recorded_id = id;
      }
    }
    // Fixtures recorded against a hosted dialect replay under its key space.
    if (recorded_id) backend->backend_id_ = *recorded_id;
    return backend;
  }

  std::string id() const override { return backend_id_; }

  void add_reply(const std::string& request_key, BackendReply reply) {
    entries_[request_key] = std::move(reply);
  }

  void add_text(const std::string& request_key, std::string text) {
    BackendReply reply;
    reply.text = std::move(text);
    entries_[request_key] = std::move(reply);
  }

  std::size_t size() const { return entries_.size(); }

  BackendReply send(const ChatRequest& request) override {
    auto it = entries_.find(request.request_key);
    if (it == entries_.end()) {
      throw BackendError(ErrorClass::FixtureMiss,
                         "no fixture for request_key " + request.request_key);
    }
    BackendReply reply = it->second;
    reply.latency = std::chrono::milliseconds(0);
    reply.cache_hit = false;
    reply.attempts = 1;
    return reply;
  }

 private:
  std::string backend_id_;
  std::map<std::string, BackendReply> entries_;
};

// Writes request_key -> reply pairs in the fixture schema as they pass
// through, so a hosted run can be replayed offline.
class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path fixture_path)
      : inner_(std::move(inner)), path_(std::move(fixture_path)) {
    if (std::filesystem::exists(path_)) {
      json doc = parse_json_file(path_);
      if (doc.is_object()) entries_ = std::move(doc);
    }
    if (!entries_.is_object()) entries_ = json::object();
  }

  std::string id() const override { return inner_->id(); }

  BackendReply send(const ChatRequest& request) override {
    BackendReply reply = inner_->send(request);
    std::lock_guard lock(mutex_);
    entries_[request.request_key] =
        detail::make_entry(request.request_key, inner_->id(), request.gen, reply);
    write_file_atomic(path_, entries_.dump(2) + "\n");
    return reply;
  }

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path path_;
  json entries_;
  std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

// One file per request_key; entries are written atomically and verified by
// checksum on read. A corrupt entry is a miss: it is rewritten after the
// delegated call.
class CachingBackend : public ChatBackend {
 public:
  CachingBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path cache_dir)
      : inner_(std::move(inner)), dir_(std::move(cache_dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::string id() const override { return inner_->id(); }

  BackendReply send(const ChatRequest& request) override {
    const std::filesystem::path entry_path = dir_ / (request.request_key + ".json");
    if (std::filesystem::exists(entry_path)) {
      std::optional<BackendReply> cached;
      try {
        json entry = json::parse(read_file(entry_path));
        cached = detail::entry_reply(entry, request.request_key, /*require_checksum=*/true);
      } catch (const std::exception&) {
        cached = std::nullopt;
      }
      if (cached) {
        cached->cache_hit = true;
        cached->latency = std::chrono::milliseconds(0);
        cached->attempts = 1;
        return *cached;
      }
      std::fprintf(stderr, "warning: corrupt cache entry treated as miss: %s\n",
                   entry_path.string().c_str());
    }
    BackendReply reply = inner_->send(request);
    json entry = detail::make_entry(request.request_key, inner_->id(), request.gen, reply);
    write_file_atomic(entry_path, entry.dump(2) + "\n");
    return reply;
  }

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::filesystem::path dir_;
};

inline std::shared_ptr<ChatBackend> with_cache(std::shared_ptr<ChatBackend> backend,
                                               const std::filesystem::path& cache_dir) {
  return std::make_shared<CachingBackend>(std::move(backend), cache_dir);
}

// ---------------------------------------------------------------------------
// Hosted backends
// ---------------------------------------------------------------------------

struct HostedConfig {
  std::string base_url;
  std::string api_key;
  RetryPolicy retry;
  int max_in_flight = 8;
};

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, possibly empty
};

inline SplitUrl split_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error("bad base url: " + base_url);
  auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

struct WireOutcome {
  bool ok = false;
  int status = 0;
  std::string body;
  WireResponse wire;
};

inline WireOutcome http_post_json(const SplitUrl& url, const std::string& path,
                                  const httplib::Headers& headers, const json& body,
                                  std::chrono::milliseconds timeout) {
  httplib::Client client(url.origin);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  auto result = client.Post(url.prefix + path, headers, body.dump(), "application/json");
  WireOutcome out;
  if (!result) {
    out.wire.transport_timeout = result.error() == httplib::Error::ConnectionTimeout ||
                                 result.error() == httplib::Error::Read;
    out.wire.transport_error = !out.wire.transport_timeout;
    out.wire.detail = httplib::to_string(result.error());
    return out;
  }
  out.status = result->status;
  out.body = result->body;
  out.wire.status = result->status;
  out.wire.detail = "HTTP " + std::to_string(result->status);
  out.ok = result->status >= 200 && result->status < 300;
  return out;
}

}  // namespace detail

class HostedBackendBase : public ChatBackend {
 public:
  explicit HostedBackendBase(HostedConfig config)
      : config_(std::move(config)),
        url_(detail::split_base_url(config_.base_url)),
        gate_(config_.max_in_flight) {}

 protected:
  // Serialize, POST with bounded retries, parse. ContentFiltered comes back
  // as a reply, not an exception.
  BackendReply exchange(const std::string& path, const httplib::Headers& headers,
                        const json& body, std::chrono::milliseconds timeout) {
    ConcurrencyGate::Guard guard(gate_);
    detail::BackoffSchedule backoff(config_.retry);
    const int max_attempts = std::max(1, config_.retry.max_attempts);
    auto start = std::chrono::steady_clock::now();
    for (int attempt = 1;; ++attempt) {
      detail::WireOutcome out = detail::http_post_json(url_, path, headers, body, timeout);
      if (out.ok) {
        BackendReply reply = parse_reply(out.body);
        reply.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        reply.attempts = attempt;
        return reply;
      }
      ErrorClass klass = classify_error(out.wire);
      if (!retryable(klass) || attempt >= max_attempts) {
        throw BackendError(klass, out.wire.detail + " from " + config_.base_url + path,
                           attempt);
      }
      config_.retry.sleeper(backoff.next());
    }
  }

  virtual BackendReply parse_reply(const std::string& body) = 0;

  const HostedConfig& config() const { return config_; }

  void require_api_key(const char* env_name) const {
    if (config_.api_key.empty()) {
      throw BackendError(ErrorClass::AuthError,
                         std::string("missing API key (set ") + env_name + ")");
    }
  }

 private:
  HostedConfig config_;
  detail::SplitUrl url_;
  ConcurrencyGate gate_;
};

// Chat-completions dialect: {model, messages:[{role, content}], temperature,
// max_tokens}; reply text at choices[0].message.content.
class OpenAICompatBackend : public HostedBackendBase {
 public:
  explicit OpenAICompatBackend(HostedConfig config) : HostedBackendBase(std::move(config)) {}

  std::string id() const override { return "openai"; }

  BackendReply send(const ChatRequest& request) override {
    require_api_key("CTNLI_OPENAI_KEY");
    json messages = json::array();
    for (const auto& m : request.messages) {
      messages.push_back({{"role", to_string(m.role)}, {"content", m.text}});
    }
    json body = {{"model", request.gen.model_name},
                 {"messages", std::move(messages)},
                 {"temperature", request.gen.temperature},
                 {"max_tokens", request.gen.max_output_tokens}};
    httplib::Headers headers = {{"Authorization", "Bearer " + config().api_key}};
    return exchange("/chat/completions", headers, body, request.gen.request_timeout);
  }

 protected:
  BackendReply parse_reply(const std::string& body) override {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::exception& ex) {
      throw BackendError(ErrorClass::ServerError, std::string("bad reply JSON: ") + ex.what());
    }
    if (!doc.contains("choices") || !doc.at("choices").is_array() ||
        doc.at("choices").empty()) {
      throw BackendError(ErrorClass::ServerError, "reply has no choices");
    }
    const json& choice = doc.at("choices").at(0);
    BackendReply reply;
    std::string finish = choice.value("finish_reason", "stop");
    if (finish == "length") {
      reply.finish_reason = FinishReason::Length;
    } else if (finish == "content_filter") {
      reply.finish_reason = FinishReason::Filtered;
    } else {
      reply.finish_reason = FinishReason::Stop;
    }
    if (reply.finish_reason != FinishReason::Filtered && choice.contains("message")) {
      reply.text = choice.at("message").value("content", "");
    }
    if (doc.contains("usage") && doc.at("usage").is_object()) {
      const json& u = doc.at("usage");
      reply.usage = TokenUsage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0),
                               u.value("total_tokens", 0)};
    }
    return reply;
  }
};

// Contents/parts dialect: {contents:[{role, parts:[{text}]}], generationConfig,
// safetySettings}; reply text is candidates[0].content.parts[*].text joined.
class GeminiStyleBackend : public HostedBackendBase {
 public:
  explicit GeminiStyleBackend(HostedConfig config) : HostedBackendBase(std::move(config)) {}

  std::string id() const override { return "gemini"; }

  BackendReply send(const ChatRequest& request) override {
    require_api_key("CTNLI_GEMINI_KEY");
    json contents = json::array();
    for (const auto& m : request.messages) {
      const char* role = m.role == Role::Assistant ? "model" : "user";
      contents.push_back({{"role", role}, {"parts", json::array({{{"text", m.text}}})}});
    }
    json body = {{"contents", std::move(contents)},
                 {"generationConfig",
                  {{"temperature", request.gen.temperature},
                   {"maxOutputTokens", request.gen.max_output_tokens}}}};
    if (!request.gen.safety_setting.empty()) {
      static const char* kCategories[] = {
          "HARM_CATEGORY_HARASSMENT", "HARM_CATEGORY_HATE_SPEECH",
          "HARM_CATEGORY_SEXUALLY_EXPLICIT", "HARM_CATEGORY_DANGEROUS_CONTENT"};
      json settings = json::array();
      for (const char* category : kCategories) {
        settings.push_back({{"category", category}, {"threshold", request.gen.safety_setting}});
      }
      body["safetySettings"] = std::move(settings);
    }
    httplib::Headers headers = {{"x-goog-api-key", config().api_key}};
    return exchange("/models/" + request.gen.model_name + ":generateContent", headers, body,
                    request.gen.request_timeout);
  }

 protected:
  BackendReply parse_reply(const std::string& body) override {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::exception& ex) {
      throw BackendError(ErrorClass::ServerError, std::string("bad reply JSON: ") + ex.what());
    }
    BackendReply reply;
    if (doc.contains("promptFeedback") && doc.at("promptFeedback").contains("blockReason")) {
      reply.finish_reason = FinishReason::Filtered;
      return reply;
    }
    if (!doc.contains("candidates") || !doc.at("candidates").is_array() ||
        doc.at("candidates").empty()) {
      throw BackendError(ErrorClass::ServerError, "reply has no candidates");
    }
    const json& candidate = doc.at("candidates").at(0);
    std::string finish = candidate.value("finishReason", "STOP");
    if (finish == "SAFETY") {
      reply.finish_reason = FinishReason::Filtered;
      return reply;
    }
    reply.finish_reason = finish == "MAX_TOKENS" ? FinishReason::Length : FinishReason::Stop;
    if (candidate.contains("content") && candidate.at("content").contains("parts")) {
      for (const auto& part : candidate.at("content").at("parts")) {
        if (part.contains("text")) reply.text += part.at("text").get<std::string>();
      }
    }
    if (doc.contains("usageMetadata") && doc.at("usageMetadata").is_object()) {
      const json& u = doc.at("usageMetadata");
      reply.usage = TokenUsage{u.value("promptTokenCount", 0),
                               u.value("candidatesTokenCount", 0),
                               u.value("totalTokenCount", 0)};
    }
    return reply;
  }
};

// ---------------------------------------------------------------------------
// Factory
// ---------------------------------------------------------------------------

struct BackendOptions {
  BackendKind kind = BackendKind::MockReplay;
  std::string base_url;  // empty -> dialect default
  std::string api_key;   // empty -> environment variable
  RetryPolicy retry;
  int max_in_flight = 8;
  std::optional<std::filesystem::path> fixtures;  // MockReplay
};

inline std::string env_or_empty(const char* name) {
  const char* value = std::getenv(name);
  return value ? value : "";
}

inline std::shared_ptr<ChatBackend> make_backend(const BackendOptions& options) {
  switch (options.kind) {
    case BackendKind::MockReplay: {
      if (options.fixtures) return MockReplayBackend::from_file(*options.fixtures);
      return std::make_shared<MockReplayBackend>();
    }
    case BackendKind::OpenAICompat: {
      HostedConfig config;
      config.base_url =
          options.base_url.empty() ? "https://api.openai.com/v1" : options.base_url;
      config.api_key =
          options.api_key.empty() ? env_or_empty("CTNLI_OPENAI_KEY") : options.api_key;
      config.retry = options.retry;
      config.max_in_flight = options.max_in_flight;
      return std::make_shared<OpenAICompatBackend>(std::move(config));
    }
    case BackendKind::GeminiStyle: {
      HostedConfig config;
      config.base_url = options.base_url.empty()
                            ? "https://generativelanguage.googleapis.com/v1beta"
                            : options.base_url;
      config.api_key =
          options.api_key.empty() ? env_or_empty("CTNLI_GEMINI_KEY") : options.api_key;
      config.retry = options.retry;
      config.max_in_flight = options.max_in_flight;
      return std::make_shared<GeminiStyleBackend>(std::move(config));
    }
  }
  throw Error("unreachable backend kind");
}

}  // namespace ctnli
