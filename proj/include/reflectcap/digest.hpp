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
#include <string_view>

namespace reflectcap {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// Incremental SHA-256 with length-prefixed fields, so field boundaries are part of the digest.
class Sha256Builder {
 public:
  Sha256Builder();
  ~Sha256Builder();
  Sha256Builder(const Sha256Builder&) = delete;
  Sha256Builder& operator=(const Sha256Builder&) = delete;

  Sha256Builder& field(std::string_view data);
  std::string hex();

 private:
  struct State;
  State* state_;
};

std::string base64_encode(std::string_view data);

}  // namespace reflectcap
