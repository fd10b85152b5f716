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

#include "reflectcap/core.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reflectcap/digest.hpp"
#include "reflectcap/error.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap {
namespace {

std::string media_type_for(const std::filesystem::path& path) {
  const std::string s = path.string();
  if (s.find('#') != std::string::npos && !std::filesystem::exists(path)) return kSimSceneMediaType;
  const std::string ext = to_lower(path.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "image/jpeg";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "corpus.jsonl#scene-id" -> the raw JSONL line of that scene.
std::string read_scene_line(const std::string& spec) {
  const auto hash = spec.rfind('#');
  if (hash == std::string::npos) throw IoError("cannot read image: " + spec);
  const std::string file = spec.substr(0, hash);
  const std::string id = spec.substr(hash + 1);
  std::ifstream in(file);
  if (!in) throw IoError("cannot read scene corpus: " + file);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_object() && j.value("id", std::string{}) == id) return trim(line);
  }
  throw IoError("scene " + id + " not found in " + file);
}

}  // namespace

const char* to_string(ProviderErrorKind kind) {
  switch (kind) {
    case ProviderErrorKind::kTransport: return "transport failure";
    case ProviderErrorKind::kRateLimited: return "rate limited";
    case ProviderErrorKind::kMalformed: return "malformed payload";
    case ProviderErrorKind::kTimeout: return "timeout";
    case ProviderErrorKind::kHttpStatus: return "http error";
  }
  return "provider error";
}

ImageRef ImageRef::from_path(std::string id, std::filesystem::path path, std::string media_type) {
  ImageRef ref;
  ref.id = std::move(id);
  ref.media_type = media_type.empty() ? media_type_for(path) : std::move(media_type);
  ref.source = std::move(path);
  return ref;
}

ImageRef ImageRef::from_bytes(std::string id, std::string bytes, std::string media_type) {
  ImageRef ref;
  ref.id = std::move(id);
  ref.source = std::move(bytes);
  ref.media_type = std::move(media_type);
  return ref;
}

std::string load_image_bytes(const ImageRef& image) {
  if (const auto* bytes = std::get_if<std::string>(&image.source)) return *bytes;
  const auto& path = std::get<std::filesystem::path>(image.source);
  if (std::filesystem::is_regular_file(path)) return read_file(path);
  return read_scene_line(path.string());
}

ExemplarSet::ExemplarSet(std::vector<Exemplar> items) : items_(std::move(items)) {
  if (items_.empty()) throw ValidationError("exemplar set is empty");
  std::set<std::string> ids;
  for (const auto& ex : items_) {
    if (trim(ex.reference).empty()) throw ValidationError("exemplar " + ex.image.id + " has an empty reference");
    if (!ids.insert(ex.image.id).second) throw ValidationError("duplicate exemplar image id: " + ex.image.id);
  }
}

ExemplarSet ExemplarSet::prefix(std::size_t n) const {
  n = std::clamp<std::size_t>(n, 1, items_.size());
  return ExemplarSet(std::vector<Exemplar>(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(n)));
}

std::string_view to_string(MethodId method) {
  switch (method) {
    case MethodId::kZeroShot: return "zero_shot";
    case MethodId::kFewShot: return "few_shot";
    case MethodId::kSelfCorrection: return "self_correction";
    case MethodId::kCapmasLite: return "capmas_lite";
    case MethodId::kReflectcapBase: return "reflectcap_base";
    case MethodId::kReflectcapFull: return "reflectcap_full";
    case MethodId::kCombinedNotes: return "combined_notes";
  }
  return "unknown";
}

MethodId parse_method(std::string_view name) {
  for (MethodId m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw UsageError("unknown method: " + std::string(name));
}

bool requires_notes(MethodId method) {
  return method == MethodId::kReflectcapBase || method == MethodId::kReflectcapFull ||
         method == MethodId::kCombinedNotes;
}

TokenUsage Caption::usage_total() const {
  TokenUsage total;
  for (const auto& c : calls) {
    total.prompt_text_tokens += c.usage.prompt_text_tokens;
    total.image_tokens += c.usage.image_tokens;
    total.completion_tokens += c.usage.completion_tokens;
  }
  return total;
}

std::vector<std::string> Caption::call_ids() const {
  std::vector<std::string> ids;
  ids.reserve(calls.size());
  for (const auto& c : calls) ids.push_back(c.call_id);
  return ids;
}

std::vector<std::string> validate_notes(const ReflectionNotes& notes, std::size_t k) {
  std::vector<std::string> violations;
  if (notes.avoid.size() > k) {
    violations.push_back("avoid exceeds K (" + std::to_string(notes.avoid.size()) + " > " + std::to_string(k) + ")");
  }
  if (notes.include.size() > k) {
    violations.push_back("include exceeds K (" + std::to_string(notes.include.size()) + " > " +
                         std::to_string(k) + ")");
  }
  auto check = [&](const std::vector<NoteItem>& items, const char* list) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& text = items[i].text;
      if (trim(text).empty()) {
        violations.push_back(std::string(list) + " item " + std::to_string(i) + " is empty");
      } else if (text.find('\n') != std::string::npos || text.find('\r') != std::string::npos) {
        violations.push_back(std::string(list) + " item " + std::to_string(i) + " spans multiple lines");
      }
    }
  };
  check(notes.avoid, "avoid");
  check(notes.include, "include");
  return violations;
}

std::string hash_exemplar_set(const ExemplarSet& set) {
  Sha256Builder h;
  for (const auto& ex : set.items()) {
    h.field(load_image_bytes(ex.image));
    h.field(ex.reference);
  }
  return h.hex();
}

}  // namespace reflectcap
