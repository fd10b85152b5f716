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

#include "reflectcap/config.hpp"

#include <cstdlib>
#include <set>

#include "reflectcap/digest.hpp"
#include "reflectcap/error.hpp"
#include "reflectcap/http_backend.hpp"
#include "reflectcap/store.hpp"

namespace reflectcap {

using nlohmann::json;

namespace {

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("config: bad value for '") + key + "'");
  }
}

RetryPolicy retry_from_json(const json& j, RetryPolicy p) {
  p.max_attempts = get(j, "max_attempts", p.max_attempts);
  p.initial_delay = std::chrono::milliseconds(get<std::int64_t>(j, "initial_delay_ms", p.initial_delay.count()));
  p.multiplier = get(j, "multiplier", p.multiplier);
  p.jitter = get(j, "jitter", p.jitter);
  if (j.contains("retryable_statuses")) p.retryable_statuses = get<std::set<int>>(j, "retryable_statuses", {});
  if (p.max_attempts < 1) throw UsageError("config: retry.max_attempts must be >= 1");
  return p;
}

ProviderSpec provider_from_json(const std::string& id, const json& j, ProviderSpec spec) {
  if (!j.is_object()) throw UsageError("config: provider '" + id + "' must be an object");
  if (j.contains("api_key")) throw UsageError("config: provider '" + id + "' stores a key; use api_key_env instead");
  ProviderConfig& p = spec.provider;
  p.id = id;
  p.kind = get(j, "kind", p.kind);
  if (p.kind != "sim" && p.kind != "openai") throw UsageError("config: provider '" + id + "' has unknown kind " + p.kind);
  p.base_url = get(j, "base_url", p.base_url);
  p.model_id = get(j, "model", p.model_id);
  p.api_key_env = get(j, "api_key_env", p.api_key_env);
  p.temperature = get(j, "temperature", p.temperature);
  p.max_output_tokens = get(j, "max_output_tokens", p.max_output_tokens);
  p.seed_offset = get(j, "seed_offset", p.seed_offset);
  p.timeout = std::chrono::milliseconds(
      static_cast<std::int64_t>(1000.0 * get(j, "timeout_s", static_cast<double>(p.timeout.count()) / 1000.0)));
  p.concurrency = get(j, "concurrency", p.concurrency);
  p.usage.image_tokens_per_image = get(j, "image_tokens", p.usage.image_tokens_per_image);
  p.usage.estimate_when_absent = get(j, "estimate_usage", p.usage.estimate_when_absent);
  if (j.contains("retry")) p.retry = retry_from_json(j["retry"], p.retry);
  if (j.contains("bias")) {
    try {
      spec.bias = sim::bias_from_json(j["bias"]);
    } catch (const Error& e) {
      throw UsageError("config: provider '" + id + "': " + e.what());
    }
  }
  if (p.kind == "openai" && p.base_url.empty()) throw UsageError("config: provider '" + id + "' needs base_url");
  if (p.concurrency < 1) throw UsageError("config: provider '" + id + "' concurrency must be >= 1");
  return spec;
}

}  // namespace

sim::BiasProfile default_sim_bias() {
  sim::BiasProfile b;
  b.halluc_rate = {{sim::Category::kColor, 0.3}, {sim::Category::kCount, 0.3}};
  b.omit_rate = {{sim::Category::kBackground, 0.4}, {sim::Category::kLighting, 0.4}};
  b.compliance = 1.0;
  return b;
}

RunConfig default_config() {
  RunConfig c;
  ProviderSpec sim;
  sim.bias = default_sim_bias();
  c.providers["sim"] = sim;
  for (Role r : kAllRoles) c.roles[r] = "sim";
  c.model_params["sim-lvlm"] = 1'000'000'000;
  return c;
}

void RunConfig::validate() const {
  for (Role r : kAllRoles) {
    auto it = roles.find(r);
    if (it == roles.end()) throw UsageError("config: role " + std::string(to_string(r)) + " is unbound");
    if (!providers.count(it->second)) {
      throw UsageError("config: role " + std::string(to_string(r)) + " names unknown provider " + it->second);
    }
  }
  if (k < 1) throw UsageError("config: k must be >= 1");
  if (batch < 1) throw UsageError("config: batch must be >= 1");
  if (concurrency < 1) throw UsageError("config: concurrency must be >= 1");
}

RunConfig apply_config_json(RunConfig c, const json& j) {
  if (!j.is_object()) throw UsageError("config: top level must be an object");
  if (j.contains("providers")) {
    for (const auto& [id, pj] : j["providers"].items()) {
      ProviderSpec base = c.providers.count(id) ? c.providers[id] : ProviderSpec{};
      c.providers[id] = provider_from_json(id, pj, base);
    }
  }
  if (j.contains("roles")) {
    for (const auto& [role, id] : j["roles"].items()) {
      try {
        c.roles[parse_role(role)] = id.get<std::string>();
      } catch (const json::exception&) {
        throw UsageError("config: role " + role + " must name a provider");
      }
    }
  }
  c.k = get(j, "k", c.k);
  c.batch = get(j, "batch", c.batch);
  c.few_shot_n = get(j, "few_shot_n", c.few_shot_n);
  c.seed = get(j, "seed", c.seed);
  c.concurrency = get(j, "concurrency", c.concurrency);
  c.cache = get(j, "cache", c.cache);
  if (j.contains("cache_root")) c.cache_root = get<std::string>(j, "cache_root", "");
  if (j.contains("prompts_dir")) c.prompts_dir = get<std::string>(j, "prompts_dir", "");
  if (j.contains("model_params")) {
    for (const auto& [model, n] : j["model_params"].items()) {
      if (!n.is_number()) throw UsageError("config: model_params." + model + " must be a number");
      c.model_params[model] = static_cast<std::int64_t>(n.get<double>());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path) {
  std::optional<std::filesystem::path> p = path;
  if (!p) {
    if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') p = env;
  }
  RunConfig c = default_config();
  if (!p) return c;
  json j;
  try {
    j = store::read_json_file(*p);
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  const auto dir = p->parent_path();
  c = apply_config_json(std::move(c), j);
  if (c.cache_root.is_relative() && j.contains("cache_root")) c.cache_root = dir / c.cache_root;
  if (!c.prompts_dir.empty() && c.prompts_dir.is_relative()) c.prompts_dir = dir / c.prompts_dir;
  return c;
}

Bindings make_bindings(const RunConfig& config) {
  config.validate();
  std::shared_ptr<const ResponseCache> cache;
  if (config.cache) cache = std::make_shared<ResponseCache>(config.cache_root);
  std::map<std::string, std::shared_ptr<Provider>> built;
  Bindings b;
  for (Role r : kAllRoles) {
    const std::string& id = config.roles.at(r);
    auto it = built.find(id);
    if (it == built.end()) {
      const ProviderSpec& spec = config.providers.at(id);
      ProviderConfig pc = spec.provider;
      std::shared_ptr<Backend> backend;
      if (pc.kind == "sim") {
        backend = std::make_shared<sim::SimBackend>(spec.bias, pc.usage.image_tokens_per_image);
        pc.cache_namespace = pc.id + "/" + sha256_hex(sim::to_json(spec.bias).dump()).substr(0, 16);
      } else {
        backend = std::make_shared<OpenAiBackend>(pc);
      }
      it = built.emplace(id, std::make_shared<Provider>(pc, backend, cache)).first;
    }
    b.bind(r, it->second);
  }
  return b;
}

}  // namespace reflectcap
