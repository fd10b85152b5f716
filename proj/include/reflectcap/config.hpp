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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "reflectcap/provider.hpp"
#include "reflectcap/simworld.hpp"

namespace reflectcap {

inline constexpr const char* kConfigEnvVar = "REFLECTCAP_CONFIG";

struct ProviderSpec {
  ProviderConfig provider;
  sim::BiasProfile bias;  // sim providers only
};

struct RunConfig {
  std::map<std::string, ProviderSpec> providers;
  std::map<Role, std::string> roles;
  std::size_t k = 5;
  std::size_t batch = 10;
  std::size_t few_shot_n = 3;
  std::int64_t seed = 0;
  int concurrency = 4;
  bool cache = true;
  std::filesystem::path cache_root = ".reflectcap/cache";
  std::filesystem::path prompts_dir;  // empty: built-in eval prompts
  std::map<std::string, std::int64_t> model_params;

  // Every role bound to a provider that exists.
  void validate() const;
};

// Biased simulated captioner used when no config says otherwise.
sim::BiasProfile default_sim_bias();

// One "sim" provider bound to every role.
RunConfig default_config();

// Overlays the keys present in `j` onto `base`. Throws UsageError on unknown roles,
// providers, or malformed values. API keys are never read from the file, only the name
// of the environment variable holding them.
RunConfig apply_config_json(RunConfig base, const nlohmann::json& j);

// `path`, else $REFLECTCAP_CONFIG, else defaults.
RunConfig load_config(const std::optional<std::filesystem::path>& path);

// Builds every bound provider. Credentials are resolved here, before any call is made.
Bindings make_bindings(const RunConfig& config);

}  // namespace reflectcap
