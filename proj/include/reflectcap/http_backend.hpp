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

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "reflectcap/provider.hpp"

namespace reflectcap {

// OpenAI-compatible chat-completions client: POST {base_url}/chat/completions with a
// bearer token. Images travel as base64 data URLs inside user content arrays.
class OpenAiBackend final : public Backend {
 public:
  // Resolves the API key from config.api_key_env up front; throws UsageError when the
  // variable is named but unset.
  explicit OpenAiBackend(ProviderConfig config);

  RawCompletion send(const ModelRequest& request) override;

  // The JSON body sent for `request`.
  nlohmann::json build_payload(const ModelRequest& request) const;

 private:
  ProviderConfig config_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace reflectcap
