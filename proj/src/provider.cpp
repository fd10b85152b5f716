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

#include "reflectcap/provider.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "reflectcap/digest.hpp"
#include "reflectcap/error.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kCaptioner: return "captioner";
    case Role::kFeedback: return "feedback";
    case Role::kOrganizer: return "organizer";
    case Role::kDetailer: return "detailer";
    case Role::kMerger: return "merger";
    case Role::kJudge: return "judge";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (Role r : kAllRoles) {
    if (to_string(r) == name) return r;
  }
  throw UsageError("unknown role: " + std::string(name));
}

std::string_view to_string(ChatRole role) {
  switch (role) {
    case ChatRole::kSystem: return "system";
    case ChatRole::kUser: return "user";
    case ChatRole::kAssistant: return "assistant";
  }
  return "user";
}

ChatMessage ChatMessage::system(std::string text) { return ChatMessage{ChatRole::kSystem, {Part::text(std::move(text))}}; }

ChatMessage ChatMessage::user(std::string text) { return ChatMessage{ChatRole::kUser, {Part::text(std::move(text))}}; }

ChatMessage ChatMessage::user(std::string text, ImageRef image) {
  return ChatMessage{ChatRole::kUser, {Part::image(std::move(image)), Part::text(std::move(text))}};
}

ChatMessage ChatMessage::assistant(std::string text) {
  return ChatMessage{ChatRole::kAssistant, {Part::text(std::move(text))}};
}

std::string ChatMessage::text() const {
  std::string out;
  for (const auto& p : parts) {
    if (const auto* t = std::get_if<std::string>(&p.content)) out += *t;
  }
  return out;
}

const ImageRef* ChatMessage::image() const {
  for (const auto& p : parts) {
    if (const auto* img = std::get_if<ImageRef>(&p.content)) return img;
  }
  return nullptr;
}

void ModelRequest::validate() const {
  if (messages.empty()) throw ValidationError("request has no messages");
  if (temperature < 0.0) throw ValidationError("temperature must be >= 0");
  if (max_output_tokens < 1) throw ValidationError("max_output_tokens must be >= 1");
  int images = 0;
  for (const auto& m : messages) {
    if (m.parts.empty()) throw ValidationError("message without parts");
    for (const auto& p : m.parts) {
      if (!p.is_text()) {
        if (m.role != ChatRole::kUser) throw ValidationError("image parts are only allowed in user messages");
        ++images;
      }
    }
  }
  if (images > 1) throw ValidationError("at most one image per request");
}

const ImageRef* ModelRequest::image() const {
  for (const auto& m : messages) {
    if (const auto* img = m.image()) return img;
  }
  return nullptr;
}

std::string ModelRequest::system_text() const {
  for (const auto& m : messages) {
    if (m.role == ChatRole::kSystem) return m.text();
  }
  return {};
}

std::string ModelRequest::last_user_text() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == ChatRole::kUser) return it->text();
  }
  return {};
}

std::chrono::milliseconds RetryPolicy::delay(int retry, std::uint64_t jitter_seed) const {
  double ms = static_cast<double>(initial_delay.count()) * std::pow(multiplier, std::max(0, retry - 1));
  if (jitter) {
    std::mt19937_64 rng(jitter_seed ^ static_cast<std::uint64_t>(retry));
    ms *= std::uniform_real_distribution<double>(0.5, 1.0)(rng);
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

TokenUsage estimate_usage(const ModelRequest& request, std::string_view completion, std::int64_t image_tokens) {
  TokenUsage usage;
  for (const auto& m : request.messages) usage.prompt_text_tokens += static_cast<std::int64_t>(count_words(m.text()));
  usage.completion_tokens = static_cast<std::int64_t>(count_words(completion));
  if (const auto* img = request.image()) {
    usage.image_tokens = image_tokens;
    usage.image_id = img->id;
  }
  return usage;
}

TokenUsage count_usage(const json& payload, const ModelRequest& request, std::string_view completion,
                       const UsageCounting& counting) {
  const auto it = payload.find("usage");
  if (it == payload.end() || !it->is_object() || !it->contains("prompt_tokens")) {
    if (counting.estimate_when_absent) return estimate_usage(request, completion, counting.image_tokens_per_image);
    throw ProviderError(ProviderErrorKind::kMalformed, "response carries no usage and no estimator is configured");
  }
  const auto& u = *it;
  TokenUsage usage;
  const std::int64_t prompt = u.value("prompt_tokens", std::int64_t{0});
  usage.completion_tokens = u.value("completion_tokens", std::int64_t{0});
  const ImageRef* img = request.image();
  if (img != nullptr) {
    usage.image_id = img->id;
    std::int64_t image = counting.image_tokens_per_image;
    if (auto d = u.find("prompt_tokens_details"); d != u.end() && d->is_object() && d->contains("image_tokens")) {
      image = d->at("image_tokens").get<std::int64_t>();
    }
    usage.image_tokens = std::min(image, prompt);
  }
  usage.prompt_text_tokens = prompt - usage.image_tokens;
  if (usage.prompt_text_tokens < 0 || usage.completion_tokens < 0) {
    throw ProviderError(ProviderErrorKind::kMalformed, "negative token usage");
  }
  return usage;
}

namespace {

json usage_to_json(const TokenUsage& u) {
  return json{{"prompt_text_tokens", u.prompt_text_tokens},
              {"image_tokens", u.image_tokens},
              {"completion_tokens", u.completion_tokens},
              {"image_id", u.image_id}};
}

TokenUsage usage_from_json(const json& j) {
  TokenUsage u;
  u.prompt_text_tokens = j.value("prompt_text_tokens", std::int64_t{0});
  u.image_tokens = j.value("image_tokens", std::int64_t{0});
  u.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  u.image_id = j.value("image_id", std::string{});
  return u;
}

}  // namespace

ResponseCache::ResponseCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheEntry> ResponseCache::get(const std::string& key) const {
  std::ifstream in(path_for(key));
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (!j.is_object() || !j.contains("response_text")) return std::nullopt;
  CacheEntry e;
  e.request_digest = j.value("request_digest", std::string{});
  e.text = j.at("response_text").get<std::string>();
  e.usage = usage_from_json(j.value("usage", json::object()));
  e.timestamp = j.value("timestamp", std::string{});
  e.binding_id = j.value("binding_id", std::string{});
  return e;
}

void ResponseCache::put(const std::string& key, const CacheEntry& entry) const {
  const auto path = path_for(key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  json j{{"request_digest", entry.request_digest},
         {"response_text", entry.text},
         {"usage", usage_to_json(entry.usage)},
         {"timestamp", entry.timestamp},
         {"binding_id", entry.binding_id}};
  // Unique temp name per writer; rename is atomic and identical keys carry identical values.
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::this_thread::get_id();
  const auto tmp = path.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry: " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot publish cache entry: " + path.string());
}

std::string cache_key(const ModelRequest& request, std::string_view binding_id) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json parts = json::array();
    for (const auto& p : m.parts) {
      if (const auto* t = std::get_if<std::string>(&p.content)) {
        parts.push_back({{"text", *t}});
      } else {
        const auto& img = std::get<ImageRef>(p.content);
        parts.push_back({{"image_sha256", sha256_hex(load_image_bytes(img))}, {"media_type", img.media_type}});
      }
    }
    messages.push_back({{"role", to_string(m.role)}, {"parts", std::move(parts)}});
  }
  json key{{"binding_id", binding_id},
           {"model_id", request.model_id},
           {"temperature", request.temperature},
           {"max_output_tokens", request.max_output_tokens},
           {"seed_hint", request.seed_hint ? json(*request.seed_hint) : json(nullptr)},
           {"messages", std::move(messages)}};
  return sha256_hex(key.dump());
}

ConcurrencyLimiter::ConcurrencyLimiter(int slots) : available_(std::max(1, slots)) {}

void ConcurrencyLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return available_ > 0; });
  --available_;
}

void ConcurrencyLimiter::release() {
  {
    std::lock_guard lock(mu_);
    ++available_;
  }
  cv_.notify_one();
}

Provider::Provider(ProviderConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<const ResponseCache> cache,
                   Sleeper sleeper)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      cache_(std::move(cache)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      limiter_(config_.concurrency) {
  if (config_.retry.max_attempts < 1) throw ValidationError("retry max_attempts must be >= 1");
}

ModelRequest Provider::make_request(std::vector<ChatMessage> messages, std::optional<std::int64_t> seed) const {
  ModelRequest req;
  req.messages = std::move(messages);
  req.model_id = config_.model_id;
  req.temperature = config_.temperature;
  req.max_output_tokens = config_.max_output_tokens;
  if (seed) req.seed_hint = *seed + config_.seed_offset;
  return req;
}

ProviderStats Provider::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

ModelResponse Provider::complete(const ModelRequest& request) {
  request.validate();
  const std::string key = cache_key(request, config_.cache_namespace.empty() ? config_.id : config_.cache_namespace);
  {
    std::lock_guard lock(stats_mu_);
    ++stats_.requests;
  }
  ModelResponse resp;
  resp.call_id = "call-" + key.substr(0, 16);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      std::lock_guard lock(stats_mu_);
      ++stats_.cache_hits;
      resp.text = std::move(hit->text);
      resp.usage = std::move(hit->usage);
      resp.cached = true;
      resp.created_at = std::move(hit->timestamp);
      return resp;
    }
  }

  const auto& policy = config_.retry;
  for (int attempt = 1;; ++attempt) {
    try {
      {
        std::lock_guard lock(stats_mu_);
        ++stats_.network_calls;
      }
      limiter_.acquire();
      RawCompletion raw;
      try {
        raw = backend_->send(request);
      } catch (...) {
        limiter_.release();
        throw;
      }
      limiter_.release();
      resp.text = std::move(raw.text);
      resp.usage = std::move(raw.usage);
      resp.attempts = attempt;
      resp.created_at = utc_timestamp_now();
      break;
    } catch (const ProviderError& e) {
      bool retryable = e.kind() != ProviderErrorKind::kMalformed;
      if (e.kind() == ProviderErrorKind::kHttpStatus) retryable = policy.retryable_statuses.count(e.status()) > 0;
      if (!retryable || attempt >= policy.max_attempts) {
        throw ProviderError(e.kind(), std::string(e.what()) + " (binding " + config_.id + ", after " +
                                          std::to_string(attempt) + " attempt" + (attempt == 1 ? "" : "s") + ")",
                            attempt, e.status());
      }
      sleeper_(policy.delay(attempt, std::hash<std::string>{}(key)));
    }
  }

  if (cache_) {
    cache_->put(key, CacheEntry{key, resp.text, resp.usage, resp.created_at, config_.id});
  }
  return resp;
}

void Bindings::bind(Role role, std::shared_ptr<Provider> provider) { roles_[role] = std::move(provider); }

Provider& Bindings::at(Role role) const {
  auto it = roles_.find(role);
  if (it == roles_.end()) throw UsageError("no provider bound to role " + std::string(to_string(role)));
  return *it->second;
}

bool Bindings::has(Role role) const { return roles_.count(role) > 0; }

std::vector<std::shared_ptr<Provider>> Bindings::providers() const {
  std::map<std::string, std::shared_ptr<Provider>> by_id;
  for (const auto& [role, p] : roles_) by_id.emplace(p->id(), p);
  std::vector<std::shared_ptr<Provider>> out;
  for (auto& [id, p] : by_id) out.push_back(p);
  return out;
}

ProviderStats Bindings::total_stats() const {
  ProviderStats total;
  for (const auto& p : providers()) {
    const auto s = p->stats();
    total.requests += s.requests;
    total.network_calls += s.network_calls;
    total.cache_hits += s.cache_hits;
  }
  return total;
}

}  // namespace reflectcap
