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

#include "reflectcap/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "reflectcap/digest.hpp"
#include "reflectcap/error.hpp"

namespace reflectcap {

using nlohmann::json;

OpenAiBackend::OpenAiBackend(ProviderConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw UsageError("provider " + config_.id + " has no base_url");
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr) {
      throw UsageError("environment variable " + config_.api_key_env + " for provider " + config_.id + " is not set");
    }
    api_key_ = key;
  }
  std::string url = config_.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = url;
  } else {
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = url.substr(path_start);
  }
}

json OpenAiBackend::build_payload(const ModelRequest& request) const {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json msg{{"role", to_string(m.role)}};
    if (m.image() == nullptr) {
      msg["content"] = m.text();
    } else {
      json content = json::array();
      for (const auto& p : m.parts) {
        if (const auto* t = std::get_if<std::string>(&p.content)) {
          content.push_back({{"type", "text"}, {"text", *t}});
        } else {
          const auto& img = std::get<ImageRef>(p.content);
          const std::string url = "data:" + img.media_type + ";base64," + base64_encode(load_image_bytes(img));
          content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        }
      }
      msg["content"] = std::move(content);
    }
    messages.push_back(std::move(msg));
  }
  json body{{"model", request.model_id},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
  if (request.seed_hint) body["seed"] = *request.seed_hint;
  return body;
}

RawCompletion OpenAiBackend::send(const ModelRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto res = client.Post(path_prefix_ + "/chat/completions", headers, build_payload(request).dump(),
                               "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout || err == httplib::Error::Write) {
      throw ProviderError(ProviderErrorKind::kTimeout, httplib::to_string(err));
    }
    throw ProviderError(ProviderErrorKind::kTransport, httplib::to_string(err));
  }
  if (res->status == 429) throw ProviderError(ProviderErrorKind::kRateLimited, "HTTP 429", 1, 429);
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError(ProviderErrorKind::kHttpStatus, "HTTP " + std::to_string(res->status), 1, res->status);
  }

  const json payload = json::parse(res->body, nullptr, false);
  if (payload.is_discarded() || !payload.is_object()) {
    throw ProviderError(ProviderErrorKind::kMalformed, "response body is not a JSON object");
  }
  const auto choices = payload.find("choices");
  if (choices == payload.end() || !choices->is_array() || choices->empty()) {
    throw ProviderError(ProviderErrorKind::kMalformed, "response has no choices");
  }
  const auto& message = (*choices)[0].value("message", json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw ProviderError(ProviderErrorKind::kMalformed, "response choice has no text content");
  }
  RawCompletion out;
  out.text = message["content"].get<std::string>();
  out.usage = count_usage(payload, request, out.text, config_.usage);
  return out;
}

}  // namespace reflectcap
