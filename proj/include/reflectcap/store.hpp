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
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reflectcap/core.hpp"
#include "reflectcap/grammar.hpp"
#include "reflectcap/simworld.hpp"

// On-disk formats. Everything is UTF-8 JSON or JSONL with sorted keys.
namespace reflectcap::store {

nlohmann::json notes_to_json(const ReflectionNotes& notes);
// Checks format_version and the embedded K cap. Throws ValidationError.
ReflectionNotes notes_from_json(const nlohmann::json& j);

// Refuses notes that violate their own K cap. Output is byte-stable for equal notes.
void save_notes(const ReflectionNotes& notes, const std::filesystem::path& path);
ReflectionNotes load_notes(const std::filesystem::path& path);

// Pretty-printed canonical JSON plus trailing newline, written via a temp file and rename.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Appends each record as one line with a single write on an O_APPEND descriptor, so
// concurrent appenders never interleave within a line. An empty batch leaves the file
// untouched (not even created).
void append_ledger(std::span<const nlohmann::json> records, const std::filesystem::path& path);
void append_ledger(const nlohmann::json& record, const std::filesystem::path& path);

// Every complete line. A torn final line (no trailing newline, unparseable) is dropped;
// a malformed line elsewhere is a ParseError. A missing file reads as empty.
std::vector<nlohmann::json> read_ledger(const std::filesystem::path& path);

// Exemplar / image manifest: JSONL {image, reference?, id?}. Relative image paths resolve
// against the manifest's directory. Ids default to the corpus fragment or file stem.
struct ManifestEntry {
  ImageRef image;
  std::string reference;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
std::vector<Exemplar> to_exemplars(const std::vector<ManifestEntry>& entries);

void write_corpus(const std::vector<sim::Scene>& scenes, const std::filesystem::path& path);
std::vector<sim::Scene> read_corpus(const std::filesystem::path& path);

// One line of the results ledger: every caption a method produced for one image.
struct ResultRecord {
  std::string image_id;
  MethodId method = MethodId::kZeroShot;
  std::map<std::string, std::string> captions;  // "final" always present on success
  std::vector<CallUsage> calls;
  std::int64_t seed = 0;
  std::string model_id;
  std::string status = "ok";
  std::string error;
  std::vector<std::string> flags;

  const std::string& final_caption() const;
};

nlohmann::json to_json(const ResultRecord& r);
ResultRecord result_from_json(const nlohmann::json& j);
std::vector<ResultRecord> read_results(const std::filesystem::path& path);

nlohmann::json usage_to_json(const CallUsage& c);
CallUsage usage_from_json(const nlohmann::json& j);

}  // namespace reflectcap::store
