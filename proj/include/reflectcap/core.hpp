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
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace reflectcap {

inline constexpr int kNotesFormatVersion = 1;
inline constexpr const char* kDigestAlgorithm = "sha256";
inline constexpr const char* kSimSceneMediaType = "application/x-simworld-scene";

// An image either on disk or held in memory. Paths of the form "corpus.jsonl#scene-id"
// address one scene line of a simworld corpus file.
struct ImageRef {
  std::string id;
  std::variant<std::filesystem::path, std::string> source;
  std::string media_type = "image/jpeg";

  static ImageRef from_path(std::string id, std::filesystem::path path, std::string media_type = {});
  static ImageRef from_bytes(std::string id, std::string bytes, std::string media_type);

  bool is_inline() const { return std::holds_alternative<std::string>(source); }
};

// Raw bytes of the image. Throws IoError when the source is unreadable.
std::string load_image_bytes(const ImageRef& image);

struct Exemplar {
  ImageRef image;
  std::string reference;
};

class ExemplarSet {
 public:
  // Throws ValidationError on an empty set, an empty reference, or duplicate image ids.
  explicit ExemplarSet(std::vector<Exemplar> items);

  const std::vector<Exemplar>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  const Exemplar& operator[](std::size_t i) const { return items_[i]; }

  // First n items (n clamped to size, at least 1).
  ExemplarSet prefix(std::size_t n) const;

 private:
  std::vector<Exemplar> items_;
};

enum class MethodId {
  kZeroShot,
  kFewShot,
  kSelfCorrection,
  kCapmasLite,
  kReflectcapBase,
  kReflectcapFull,
  kCombinedNotes,
};

inline constexpr MethodId kAllMethods[] = {
    MethodId::kZeroShot,       MethodId::kFewShot,        MethodId::kSelfCorrection, MethodId::kCapmasLite,
    MethodId::kReflectcapBase, MethodId::kReflectcapFull, MethodId::kCombinedNotes,
};

std::string_view to_string(MethodId method);
// Throws UsageError for an unknown name.
MethodId parse_method(std::string_view name);
bool requires_notes(MethodId method);

struct TokenUsage {
  std::int64_t prompt_text_tokens = 0;
  std::int64_t image_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::string image_id;  // empty for text-only calls

  std::int64_t total() const { return prompt_text_tokens + image_tokens + completion_tokens; }
  bool operator==(const TokenUsage&) const = default;
};

// Usage of one provider call, as recorded in ledgers and consumed by the cost model.
struct CallUsage {
  std::string call_id;
  TokenUsage usage;
  bool operator==(const CallUsage&) const = default;
};

struct Caption {
  std::string text;
  MethodId method = MethodId::kZeroShot;
  std::vector<CallUsage> calls;  // provenance, in call order
  std::vector<std::string> flags;

  TokenUsage usage_total() const;
  std::vector<std::string> call_ids() const;
};

enum class IssueKind { kHallucination, kMissingDetail };

struct Issue {
  IssueKind kind = IssueKind::kHallucination;
  std::string description;
  std::optional<std::string> rationale;
  std::optional<std::string> rule;
  std::optional<std::string> category_hint;  // simworld only
  bool operator==(const Issue&) const = default;
};

struct IssueReport {
  std::string exemplar_id;
  std::vector<Issue> hallucinations;
  std::vector<Issue> missing_details;
  bool empty() const { return hallucinations.empty() && missing_details.empty(); }
  bool operator==(const IssueReport&) const = default;
};

struct NoteItem {
  std::string text;
  std::optional<std::string> category_hint;  // simworld only
  bool operator==(const NoteItem&) const = default;
};

struct NoteMeta {
  std::string target_model;
  std::string exemplar_set_digest;
  std::string digest_algorithm = kDigestAlgorithm;
  std::size_t num_exemplars = 0;  // M
  std::size_t max_items = 5;      // K
  std::size_t batch_size = 10;    // B
  std::string created_at;
  int format_version = kNotesFormatVersion;
  bool operator==(const NoteMeta&) const = default;
};

struct ReflectionNotes {
  std::vector<NoteItem> avoid;
  std::vector<NoteItem> include;
  NoteMeta meta;
  bool operator==(const ReflectionNotes&) const = default;
};

// Empty when the notes respect the cap and every item is a non-empty single line.
std::vector<std::string> validate_notes(const ReflectionNotes& notes, std::size_t k);

// Harmonic mean of precision and recall; 0 when both are 0. No range checking.
inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

// SHA-256 over the ordered (image bytes, reference) pairs, hex encoded.
std::string hash_exemplar_set(const ExemplarSet& set);

}  // namespace reflectcap
