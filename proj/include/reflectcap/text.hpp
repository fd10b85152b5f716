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

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace reflectcap {

// Collapses whitespace runs (including newlines) into single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
bool iequals(std::string_view a, std::string_view b);
bool starts_with_icase(std::string_view text, std::string_view prefix);

// Splits on '\n', dropping a trailing '\r' from each line. A trailing newline does not
// produce an empty final line.
std::vector<std::string> split_lines(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Substitutes every "{name}" placeholder. Throws Error on a placeholder without a value.
// Braces not forming an identifier placeholder are copied through.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

// Number of whitespace-delimited words.
std::size_t count_words(std::string_view text);

// UTC time as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp_now();

}  // namespace reflectcap
