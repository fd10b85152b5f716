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

#include <stdexcept>
#include <string>

namespace reflectcap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed agent output or file content.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad flags, missing config, unmet preconditions detected before any model call.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class ProviderErrorKind { kTransport, kRateLimited, kMalformed, kTimeout, kHttpStatus };

const char* to_string(ProviderErrorKind kind);

class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what, int attempts = 1, int status = 0)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind), attempts_(attempts), status_(status) {}

  ProviderErrorKind kind() const { return kind_; }
  int attempts() const { return attempts_; }
  int status() const { return status_; }

 private:
  ProviderErrorKind kind_;
  int attempts_;
  int status_;
};

}  // namespace reflectcap
