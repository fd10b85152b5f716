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

#include "reflectcap/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "reflectcap/error.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap::store {

using nlohmann::json;

namespace {

json items_to_json(const std::vector<NoteItem>& items) {
  json arr = json::array();
  for (const auto& item : items) {
    json j{{"text", item.text}};
    if (item.category_hint) j["category_hint"] = *item.category_hint;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<NoteItem> items_from_json(const json& arr) {
  std::vector<NoteItem> out;
  for (const auto& j : arr) {
    NoteItem item;
    item.text = j.at("text").get<std::string>();
    if (j.contains("category_hint") && !j["category_hint"].is_null()) {
      item.category_hint = j["category_hint"].get<std::string>();
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::mutex& append_mutex() {
  static std::mutex mu;
  return mu;
}

}  // namespace

json notes_to_json(const ReflectionNotes& notes) {
  const auto& m = notes.meta;
  json meta{{"target_model", m.target_model},
            {"exemplar_set_digest", m.exemplar_set_digest},
            {"digest_algorithm", m.digest_algorithm},
            {"M", m.num_exemplars},
            {"K", m.max_items},
            {"B", m.batch_size},
            {"created_at", m.created_at}};
  return json{{"format_version", m.format_version},
              {"meta", std::move(meta)},
              {"avoid", items_to_json(notes.avoid)},
              {"include", items_to_json(notes.include)}};
}

ReflectionNotes notes_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("notes document is not a JSON object");
  const int version = j.value("format_version", -1);
  if (version != kNotesFormatVersion) {
    throw ValidationError("unsupported notes format_version " + std::to_string(version) + " (expected " +
                          std::to_string(kNotesFormatVersion) + ")");
  }
  ReflectionNotes notes;
  try {
    const auto& m = j.at("meta");
    notes.meta.target_model = m.value("target_model", std::string{});
    notes.meta.exemplar_set_digest = m.value("exemplar_set_digest", std::string{});
    notes.meta.digest_algorithm = m.value("digest_algorithm", std::string{kDigestAlgorithm});
    notes.meta.num_exemplars = m.value("M", std::size_t{0});
    notes.meta.max_items = m.at("K").get<std::size_t>();
    notes.meta.batch_size = m.value("B", std::size_t{10});
    notes.meta.created_at = m.value("created_at", std::string{});
    notes.meta.format_version = version;
    notes.avoid = items_from_json(j.value("avoid", json::array()));
    notes.include = items_from_json(j.value("include", json::array()));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed notes document: ") + e.what());
  }
  const auto violations = validate_notes(notes, notes.meta.max_items);
  if (!violations.empty()) throw ValidationError("invalid notes: " + join(violations, "; "));
  return notes;
}

void save_notes(const ReflectionNotes& notes, const std::filesystem::path& path) {
  const auto violations = validate_notes(notes, notes.meta.max_items);
  if (!violations.empty()) throw ValidationError("refusing to save invalid notes: " + join(violations, "; "));
  write_json_file(path, notes_to_json(notes));
}

ReflectionNotes load_notes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("notes file not found: " + path.string());
  return notes_from_json(read_json_file(path));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ostringstream tmp_name;
  tmp_name << path.filename().string() << ".tmp." << ::getpid() << "." << std::this_thread::get_id();
  const auto tmp = path.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

void write_json_file(const std::filesystem::path& path, const json& value) {
  write_text_file(path, value.dump(2) + "\n");
}

json read_json_file(const std::filesystem::path& path) {
  const json j = json::parse(read_all(path), nullptr, false);
  if (j.is_discarded()) throw ParseError("not valid JSON: " + path.string());
  return j;
}

void append_ledger(std::span<const json> records, const std::filesystem::path& path) {
  if (records.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::lock_guard lock(append_mutex());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot open ledger " + path.string() + ": " + std::strerror(errno));
  for (const auto& r : records) {
    const std::string line = r.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t n = ::write(fd, line.data() + off, line.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        const std::string err = std::strerror(errno);
        ::close(fd);
        throw IoError("ledger write failed: " + err);
      }
      off += static_cast<std::size_t>(n);
    }
  }
  ::close(fd);
}

void append_ledger(const json& record, const std::filesystem::path& path) {
  append_ledger(std::span<const json>(&record, 1), path);
}

std::vector<json> read_ledger(const std::filesystem::path& path) {
  std::vector<json> out;
  if (!std::filesystem::exists(path)) return out;
  const std::string data = read_all(path);
  const auto lines = split_lines(data);
  const bool torn_tail = !data.empty() && data.back() != '\n';
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) {
      if (torn_tail && i + 1 == lines.size()) break;
      throw ParseError("malformed ledger line in " + path.string(), static_cast<int>(i + 1));
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  int line_no = 0;
  for (const auto& j : read_ledger(path)) {
    ++line_no;
    if (!j.is_object() || !j.contains("image") || !j["image"].is_string()) {
      throw ParseError("manifest entry needs an \"image\" path", line_no);
    }
    std::string image = j["image"].get<std::string>();
    std::filesystem::path p(image);
    if (p.is_relative()) p = base / p;
    std::string id = j.value("id", std::string{});
    if (id.empty()) {
      const auto hash = image.rfind('#');
      id = hash != std::string::npos ? image.substr(hash + 1) : std::filesystem::path(image).stem().string();
    }
    ManifestEntry e;
    e.image = ImageRef::from_path(std::move(id), p.lexically_normal(), j.value("media_type", std::string{}));
    e.reference = j.value("reference", std::string{});
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::string text;
  for (const auto& e : entries) {
    const auto* p = std::get_if<std::filesystem::path>(&e.image.source);
    if (p == nullptr) throw ValidationError("manifest entries must reference images by path");
    json j{{"id", e.image.id}, {"image", p->string()}};
    if (!e.reference.empty()) j["reference"] = e.reference;
    text += j.dump() + "\n";
  }
  write_text_file(path, text);
}

std::vector<Exemplar> to_exemplars(const std::vector<ManifestEntry>& entries) {
  std::vector<Exemplar> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(Exemplar{e.image, e.reference});
  return out;
}

void write_corpus(const std::vector<sim::Scene>& scenes, const std::filesystem::path& path) {
  std::string text;
  for (const auto& s : scenes) text += sim::to_json(s).dump() + "\n";
  write_text_file(path, text);
}

std::vector<sim::Scene> read_corpus(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("scene corpus not found: " + path.string());
  std::vector<sim::Scene> out;
  for (const auto& j : read_ledger(path)) out.push_back(sim::scene_from_json(j));
  return out;
}

const std::string& ResultRecord::final_caption() const {
  static const std::string kEmpty;
  auto it = captions.find("final");
  return it == captions.end() ? kEmpty : it->second;
}

json usage_to_json(const CallUsage& c) {
  return json{{"call_id", c.call_id},
              {"prompt_text_tokens", c.usage.prompt_text_tokens},
              {"image_tokens", c.usage.image_tokens},
              {"completion_tokens", c.usage.completion_tokens},
              {"image_id", c.usage.image_id}};
}

CallUsage usage_from_json(const json& j) {
  CallUsage c;
  c.call_id = j.value("call_id", std::string{});
  c.usage.prompt_text_tokens = j.value("prompt_text_tokens", std::int64_t{0});
  c.usage.image_tokens = j.value("image_tokens", std::int64_t{0});
  c.usage.completion_tokens = j.value("completion_tokens", std::int64_t{0});
  c.usage.image_id = j.value("image_id", std::string{});
  return c;
}

json to_json(const ResultRecord& r) {
  json calls = json::array();
  std::vector<std::string> ids;
  for (const auto& c : r.calls) {
    calls.push_back(usage_to_json(c));
    ids.push_back(c.call_id);
  }
  TokenUsage total;
  for (const auto& c : r.calls) {
    total.prompt_text_tokens += c.usage.prompt_text_tokens;
    total.image_tokens += c.usage.image_tokens;
    total.completion_tokens += c.usage.completion_tokens;
  }
  json j{{"image_id", r.image_id},
         {"method", to_string(r.method)},
         {"captions", r.captions},
         {"call_ids", ids},
         {"usage", {{"calls", std::move(calls)},
                    {"prompt_text_tokens", total.prompt_text_tokens},
                    {"image_tokens", total.image_tokens},
                    {"completion_tokens", total.completion_tokens}}},
         {"seed", r.seed},
         {"model_id", r.model_id},
         {"status", r.status}};
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.flags.empty()) j["flags"] = r.flags;
  return j;
}

ResultRecord result_from_json(const json& j) {
  ResultRecord r;
  try {
    r.image_id = j.at("image_id").get<std::string>();
    r.method = parse_method(j.at("method").get<std::string>());
    r.captions = j.value("captions", std::map<std::string, std::string>{});
    if (j.contains("usage")) {
      for (const auto& c : j["usage"].value("calls", json::array())) r.calls.push_back(usage_from_json(c));
    }
    r.seed = j.value("seed", std::int64_t{0});
    r.model_id = j.value("model_id", std::string{});
    r.status = j.value("status", std::string{"ok"});
    r.error = j.value("error", std::string{});
    r.flags = j.value("flags", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed result record: ") + e.what());
  } catch (const UsageError& e) {
    throw ParseError(e.what());
  }
  return r;
}

std::vector<ResultRecord> read_results(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("results ledger not found: " + path.string());
  std::vector<ResultRecord> out;
  for (const auto& j : read_ledger(path)) out.push_back(result_from_json(j));
  return out;
}

}  // namespace reflectcap::store
