// Copyright 2026 The ReflectCap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reflectcap/core.hpp"

namespace reflectcap {

// Agent roles that can be bound to different model backends.
enum class Role { kCaptioner, kFeedback, kOrganizer, kDetailer, kMerger, kJudge };

inline constexpr Role kAllRoles[] = {Role::kCaptioner, Role::kFeedback, Role::kOrganizer,
                                     Role::kDetailer,  Role::kMerger,   Role::kJudge};

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct Part {
  std::variant<std::string, ImageRef> content;

  static Part text(std::string t) { return Part{std::move(t)}; }
  static Part image(ImageRef ref) { return Part{std::move(ref)}; }
  bool is_text() const { return std::holds_alternative<std::string>(content); }
};

enum class ChatRole { kSystem, kUser, kAssistant };

std::string_view to_string(ChatRole role);

struct ChatMessage {
  ChatRole role = ChatRole::kUser;
  std::vector<Part> parts;

  static ChatMessage system(std::string text);
  static ChatMessage user(std::string text);
  // Image first, then the instruction text.
  static ChatMessage user(std::string text, ImageRef image);
  static ChatMessage assistant(std::string text);

  // Concatenated text parts.
  std::string text() const;
  const ImageRef* image() const;
};

struct ModelRequest {
  std::vector<ChatMessage> messages;
  std::string model_id;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::int64_t> seed_hint;

  // Throws ValidationError when an invariant is broken.
  void validate() const;
  const ImageRef* image() const;
  std::string system_text() const;
  // Text of the last user message.
  std::string last_user_text() const;
};

struct ModelResponse {
  std::string text;
  TokenUsage usage;
  std::string call_id;
  bool cached = false;
  int attempts = 0;
  std::string created_at;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_delay{500};
  double multiplier = 2.0;
  bool jitter = true;
  std::set<int> retryable_statuses{408, 429, 500, 502, 503, 504};

  // Delay before retry number `retry` (1-based).
  std::chrono::milliseconds delay(int retry, std::uint64_t jitter_seed = 0) const;
};

// How provider-reported token counts are split between text and image.
struct UsageCounting {
  std::int64_t image_tokens_per_image = 256;
  bool estimate_when_absent = false;
};

// Splits an OpenAI-style `usage` object. Image tokens come from
// usage.prompt_tokens_details.image_tokens when present, otherwise the configured
// per-image constant is taken out of prompt_tokens. Throws ProviderError (malformed) when
// usage is absent and estimation is off.
TokenUsage count_usage(const nlohmann::json& payload, const ModelRequest& request, std::string_view completion,
                       const UsageCounting& counting);

// One token per whitespace-delimited word of text; a fixed count per attached image.
TokenUsage estimate_usage(const ModelRequest& request, std::string_view completion, std::int64_t image_tokens);

struct RawCompletion {
  std::string text;
  TokenUsage usage;
};

class Backend {
 public:
  virtual ~Backend() = default;

  // One network round trip (or simulated equivalent). Throws ProviderError.
  virtual RawCompletion send(const ModelRequest& request) = 0;

  // A category tag for a directive, when the backend can interpret notes mechanically.
  virtual std::optional<std::string> category_hint(std::string_view /*directive*/) const { return std::nullopt; }

  // Exact verdict for a proposition about an image, when the backend knows the ground truth.
  virtual std::optional<bool> verify_locally(const ImageRef& /*image*/, std::string_view /*proposition*/) const {
    return std::nullopt;
  }
};

// Provider parameters shared by every call made through one binding.
struct ProviderConfig {
  std::string id = "sim";
  std::string kind = "sim";  // "sim" or "openai"
  std::string base_url;
  std::string model_id = "sim-lvlm";
  std::string api_key_env;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::int64_t seed_offset = 0;
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
  int concurrency = 4;
  UsageCounting usage;
  // Binding identity in cache keys; defaults to id. Set when backend behavior depends on
  // more than the binding name.
  std::string cache_namespace;
};

struct CacheEntry {
  std::string request_digest;
  std::string text;
  TokenUsage usage;
  std::string timestamp;
  std::string binding_id;
};

// Content-addressed store: {root}/{key[0:2]}/{key}.json.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  std::optional<CacheEntry> get(const std::string& key) const;
  void put(const std::string& key, const CacheEntry& entry) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path root_;
};

// Digest over binding id, model id, sampling settings, and the full message content
// (images by the digest of their bytes).
std::string cache_key(const ModelRequest& request, std::string_view binding_id);

class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int slots);
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

struct ProviderStats {
  std::int64_t requests = 0;
  std::int64_t network_calls = 0;  // backend sends, including retried attempts
  std::int64_t cache_hits = 0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Chat completion over one backend with retries, a concurrency limit, and an optional
// response cache. Safe to call from many threads.
class Provider {
 public:
  Provider(ProviderConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<const ResponseCache> cache = nullptr,
           Sleeper sleeper = {});

  ModelResponse complete(const ModelRequest& request);

  // A request carrying this binding's model id and sampling settings.
  ModelRequest make_request(std::vector<ChatMessage> messages, std::optional<std::int64_t> seed = std::nullopt) const;

  const ProviderConfig& config() const { return config_; }
  const std::string& id() const { return config_.id; }
  Backend& backend() const { return *backend_; }
  ProviderStats stats() const;

 private:
  ProviderConfig config_;
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<const ResponseCache> cache_;
  Sleeper sleeper_;
  ConcurrencyLimiter limiter_;
  mutable std::mutex stats_mu_;
  ProviderStats stats_;
};

// Role -> provider. Roles may share a provider.
class Bindings {
 public:
  void bind(Role role, std::shared_ptr<Provider> provider);
  Provider& at(Role role) const;
  bool has(Role role) const;
  // Distinct providers, ordered by id.
  std::vector<std::shared_ptr<Provider>> providers() const;
  ProviderStats total_stats() const;

 private:
  std::map<Role, std::shared_ptr<Provider>> roles_;
};

}  // namespace reflectcap
