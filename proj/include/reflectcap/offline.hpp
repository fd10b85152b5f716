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
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "reflectcap/core.hpp"
#include "reflectcap/grammar.hpp"
#include "reflectcap/provider.hpp"

// Offline phase: zero-shot caption and critique each exemplar, then fold the issue
// reports batch by batch into capped reflection notes.
namespace reflectcap::offline {

inline constexpr int kMaxRepairs = 2;

struct OrganizerState {
  ReflectionNotes current_notes;
  std::size_t batches_consumed = 0;
  std::deque<IssueReport> issue_backlog;
  std::vector<std::string> warnings;
  std::string last_response_at;
};

// Output of an agent call that had to be parsed, with every call it took.
template <class T>
struct Parsed {
  T value;
  std::vector<CallUsage> calls;
  std::string created_at;  // of the response that parsed
};

Caption run_captioning_agent(const Exemplar& exemplar, Provider& provider, std::int64_t seed);

// Image attached; on a parse failure the same binding is asked to reformat, at most
// kMaxRepairs times, before the ParseError propagates.
Parsed<IssueReport> run_feedback_agent(const Exemplar& exemplar, const Caption& candidate, Provider& provider,
                                       std::int64_t seed);

// One text-only organizer call over `batch`. Surplus items beyond k are truncated in output
// order with a warning; category hints come from the backend when it provides them.
OrganizerState run_note_organizer(const std::vector<IssueReport>& batch, OrganizerState state, std::size_t k,
                                  Provider& provider, std::int64_t seed, std::vector<CallUsage>* calls = nullptr);

struct DistillOptions {
  std::size_t k = 5;
  std::size_t batch_size = 10;
  std::int64_t seed = 0;
  int concurrency = 4;
  // Progress ledger; empty disables it.
  std::filesystem::path ledger_path;
  // Reuse completed stages found in the ledger instead of starting fresh.
  bool resume = false;
};

struct DistillResult {
  ReflectionNotes notes;
  std::vector<Caption> candidates;
  std::vector<IssueReport> reports;
  std::vector<std::size_t> batch_sizes;  // one entry per organizer call
  std::vector<std::string> warnings;
};

// Phase 1 fans out over exemplars; phase 2 folds batches strictly in exemplar order. A
// failing exemplar aborts the run after the ledger has recorded everything that finished.
DistillResult distill(const ExemplarSet& set, const Bindings& bindings, const DistillOptions& options);

}  // namespace reflectcap::offline
