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

#include "reflectcap/offline.hpp"

#include <map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "reflectcap/error.hpp"
#include "reflectcap/parallel.hpp"
#include "reflectcap/prompts.hpp"
#include "reflectcap/store.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap::offline {

using nlohmann::json;

namespace {

CallUsage record(const ModelResponse& r) { return CallUsage{r.call_id, r.usage}; }

template <class Parser>
auto complete_with_repair(Provider& provider, std::vector<ChatMessage> messages, std::int64_t seed, Parser parse)
    -> Parsed<decltype(parse(std::string{}))> {
  std::vector<CallUsage> calls;
  ModelResponse resp = provider.complete(provider.make_request(messages, seed));
  calls.push_back(record(resp));
  for (int repair = 0;; ++repair) {
    try {
      return {parse(resp.text), std::move(calls), resp.created_at};
    } catch (const ParseError& e) {
      if (repair >= kMaxRepairs) {
        throw ParseError(std::string(e.what()) + " (after " + std::to_string(kMaxRepairs) + " repair attempts)");
      }
      spdlog::warn("unparseable agent output ({}); requesting a reformat", e.what());
      messages.push_back(ChatMessage::assistant(resp.text));
      messages.push_back(ChatMessage::user(std::string(prompts::kRepairInstruction)));
      resp = provider.complete(provider.make_request(messages, seed));
      calls.push_back(record(resp));
    }
  }
}

void annotate_hints(std::vector<NoteItem>& items, const Backend& backend) {
  for (auto& item : items) {
    if (!item.category_hint) item.category_hint = backend.category_hint(item.text);
  }
}

json hints_json(const std::vector<NoteItem>& items) {
  json out = json::array();
  for (const auto& item : items) out.push_back(item.category_hint ? json(*item.category_hint) : json(nullptr));
  return out;
}

void restore_hints(std::vector<NoteItem>& items, const json& record, const char* key) {
  const auto it = record.find(key);
  if (it == record.end() || !it->is_array() || it->size() != items.size()) return;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if ((*it)[i].is_string()) items[i].category_hint = (*it)[i].get<std::string>();
  }
}

template <class F>
auto with_exemplar(const std::string& id, F&& f) {
  try {
    return f();
  } catch (const ProviderError& e) {
    throw ProviderError(e.kind(), "exemplar " + id + ": " + e.what(), e.attempts(), e.status());
  } catch (const ParseError& e) {
    throw ParseError("exemplar " + id + ": " + e.what());
  }
}

struct ExemplarOutcome {
  Caption candidate;
  IssueReport report;
  std::vector<CallUsage> feedback_calls;
  bool from_ledger = false;
};

}  // namespace

Caption run_captioning_agent(const Exemplar& exemplar, Provider& provider, std::int64_t seed) {
  return with_exemplar(exemplar.image.id, [&] {
    std::vector<ChatMessage> messages{ChatMessage::system(std::string(prompts::kCaptionerSystem)),
                                      ChatMessage::user(std::string(prompts::kCaptionerUser), exemplar.image)};
    const ModelResponse resp = provider.complete(provider.make_request(std::move(messages), seed));
    Caption cap;
    cap.text = resp.text;
    cap.method = MethodId::kZeroShot;
    cap.calls.push_back(record(resp));
    return cap;
  });
}

Parsed<IssueReport> run_feedback_agent(const Exemplar& exemplar, const Caption& candidate, Provider& provider,
                                       std::int64_t seed) {
  if (trim(candidate.text).empty()) throw ValidationError("exemplar " + exemplar.image.id + ": empty candidate caption");
  return with_exemplar(exemplar.image.id, [&] {
    const std::string user = render_template(
        prompts::kFeedbackUser, {{"generated_caption", candidate.text}, {"reference_caption", exemplar.reference}});
    std::vector<ChatMessage> messages{ChatMessage::system(std::string(prompts::kFeedbackSystem)),
                                      ChatMessage::user(user, exemplar.image)};
    auto parsed = complete_with_repair(provider, std::move(messages), seed,
                                       [](const std::string& raw) { return parse_issue_report(raw); });
    parsed.value.exemplar_id = exemplar.image.id;
    return parsed;
  });
}

OrganizerState run_note_organizer(const std::vector<IssueReport>& batch, OrganizerState state, std::size_t k,
                                  Provider& provider, std::int64_t seed, std::vector<CallUsage>* calls) {
  if (batch.empty()) throw ValidationError("organizer batch is empty");
  if (k < 1) throw ValidationError("K must be >= 1");
  const std::string ks = std::to_string(k);
  const std::string system = render_template(prompts::kOrganizerSystem, {{"k", ks}});
  const std::string user = render_template(
      prompts::kOrganizerUser,
      {{"current_notes", format_notes(state.current_notes)}, {"batch_issues", format_batch_issues(batch)}, {"k", ks}});
  std::vector<ChatMessage> messages{ChatMessage::system(system), ChatMessage::user(user)};
  auto parsed = complete_with_repair(provider, std::move(messages), seed,
                                     [](const std::string& raw) { return parse_notes(raw); });
  if (calls != nullptr) calls->insert(calls->end(), parsed.calls.begin(), parsed.calls.end());
  state.last_response_at = parsed.created_at;

  ReflectionNotes next = std::move(parsed.value);
  auto cap = [&](std::vector<NoteItem>& items, const char* list) {
    if (items.size() <= k) return;
    const std::string msg = "organizer returned " + std::to_string(items.size()) + " " + list + " items; keeping the first " + ks;
    spdlog::warn("{}", msg);
    state.warnings.push_back(msg);
    items.resize(k);
  };
  cap(next.avoid, "avoid");
  cap(next.include, "include");
  annotate_hints(next.avoid, provider.backend());
  annotate_hints(next.include, provider.backend());
  next.meta = state.current_notes.meta;
  next.meta.max_items = k;
  state.current_notes = std::move(next);
  ++state.batches_consumed;
  return state;
}

DistillResult distill(const ExemplarSet& set, const Bindings& bindings, const DistillOptions& options) {
  if (options.k < 1) throw UsageError("K must be >= 1");
  if (options.batch_size < 1) throw UsageError("batch size must be >= 1");
  Provider& captioner = bindings.at(Role::kCaptioner);
  Provider& feedback = bindings.at(Role::kFeedback);
  Provider& organizer = bindings.at(Role::kOrganizer);

  const bool use_ledger = !options.ledger_path.empty();
  // Completed stages from a previous run, keyed by exemplar id / batch index.
  std::map<std::string, json> done_exemplars;
  std::map<std::size_t, json> done_batches;
  if (use_ledger) {
    if (options.resume) {
      for (const auto& r : store::read_ledger(options.ledger_path)) {
        const std::string stage = r.value("stage", std::string{});
        if (stage == "feedback") done_exemplars[r.value("exemplar_id", std::string{})] = r;
        if (stage == "organize") done_batches[r.value("batch", std::size_t{0})] = r;
      }
    } else {
      std::filesystem::remove(options.ledger_path);
    }
  }

  const std::size_t m = set.size();
  std::vector<ExemplarOutcome> outcomes(m);
  auto phase1 = [&](std::size_t i) {
    const Exemplar& ex = set[i];
    ExemplarOutcome out;
    if (auto it = done_exemplars.find(ex.image.id); it != done_exemplars.end()) {
      out.candidate.text = it->second.value("caption", std::string{});
      out.report = parse_issue_report(it->second.value("report", std::string{}));
      out.report.exemplar_id = ex.image.id;
      out.from_ledger = true;
      return out;
    }
    out.candidate = run_captioning_agent(ex, captioner, options.seed);
    auto parsed = run_feedback_agent(ex, out.candidate, feedback, options.seed);
    out.report = std::move(parsed.value);
    out.feedback_calls = std::move(parsed.calls);
    return out;
  };
  auto commit1 = [&](std::size_t i, ExemplarOutcome& out) {
    outcomes[i] = out;
    if (!use_ledger || out.from_ledger) return;
    json ids = json::array();
    for (const auto& c : out.candidate.calls) ids.push_back(c.call_id);
    std::vector<json> records;
    records.push_back({{"stage", "caption"}, {"exemplar_id", set[i].image.id}, {"call_ids", ids}});
    json fids = json::array();
    for (const auto& c : out.feedback_calls) fids.push_back(c.call_id);
    records.push_back({{"stage", "feedback"},
                       {"exemplar_id", set[i].image.id},
                       {"call_ids", fids},
                       {"caption", out.candidate.text},
                       {"report", format_issue_report(out.report)}});
    store::append_ledger(std::span<const json>(records), options.ledger_path);
  };
  parallel_ordered(m, options.concurrency, phase1, commit1);

  DistillResult result;
  for (auto& o : outcomes) {
    result.candidates.push_back(o.candidate);
    result.reports.push_back(o.report);
  }

  OrganizerState state;
  state.current_notes.meta.max_items = options.k;
  std::string last_timestamp;
  for (std::size_t start = 0, b = 0; start < m; start += options.batch_size, ++b) {
    const std::size_t end = std::min(m, start + options.batch_size);
    std::vector<IssueReport> batch(result.reports.begin() + static_cast<std::ptrdiff_t>(start),
                                   result.reports.begin() + static_cast<std::ptrdiff_t>(end));
    result.batch_sizes.push_back(batch.size());
    if (auto it = done_batches.find(b); it != done_batches.end()) {
      ReflectionNotes restored = parse_notes(it->second.value("notes", std::string{}));
      restore_hints(restored.avoid, it->second, "avoid_hints");
      restore_hints(restored.include, it->second, "include_hints");
      annotate_hints(restored.avoid, organizer.backend());
      annotate_hints(restored.include, organizer.backend());
      restored.meta = state.current_notes.meta;
      state.current_notes = std::move(restored);
      ++state.batches_consumed;
      last_timestamp = it->second.value("created_at", std::string{});
      continue;
    }
    std::vector<CallUsage> calls;
    state = run_note_organizer(batch, std::move(state), options.k, organizer, options.seed, &calls);
    // Notes are stamped with the time the final organizer response was produced, which a
    // warm cache reproduces exactly.
    last_timestamp = state.last_response_at;
    if (use_ledger) {
      json ids = json::array();
      for (const auto& c : calls) ids.push_back(c.call_id);
      store::append_ledger(json{{"stage", "organize"},
                                {"batch", b},
                                {"batch_size", batch.size()},
                                {"call_ids", ids},
                                {"notes", format_notes(state.current_notes)},
                                {"avoid_hints", hints_json(state.current_notes.avoid)},
                                {"include_hints", hints_json(state.current_notes.include)},
                                {"created_at", last_timestamp}},
                           options.ledger_path);
    }
  }

  result.notes = std::move(state.current_notes);
  result.notes.meta.target_model = captioner.config().model_id;
  result.notes.meta.exemplar_set_digest = hash_exemplar_set(set);
  result.notes.meta.digest_algorithm = kDigestAlgorithm;
  result.notes.meta.num_exemplars = m;
  result.notes.meta.max_items = options.k;
  result.notes.meta.batch_size = options.batch_size;
  result.notes.meta.created_at = last_timestamp;
  result.notes.meta.format_version = kNotesFormatVersion;
  result.warnings = std::move(state.warnings);
  return result;
}

}  // namespace reflectcap::offline
