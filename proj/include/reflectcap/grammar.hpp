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
#include <vector>

#include "reflectcap/core.hpp"

// Text grammars exchanged with agents: issue reports from the feedback agent and the
// bracketed note lists written by the note organizer.
namespace reflectcap {

inline constexpr std::string_view kHallucinationsHeader = "Hallucinations:";
inline constexpr std::string_view kMissingDetailsHeader = "Missing Details:";
inline constexpr std::string_view kAvoidHeader = "[Hallucination - Avoid These]:";
inline constexpr std::string_view kIncludeHeader = "[Missing Detail - Include These]:";

// Line-oriented and tolerant: headers match case-insensitively (markdown emphasis is
// ignored), bullets may be "-", "*", "•" or "1.", a bare "None" means an empty list,
// text before the first header is ignored. A bullet may carry trailing "(why: ...)" and
// "(rule: ...)" clauses. Throws ParseError("no sections found") when neither header is
// present and ParseError("missing section: ...") when only one is.
IssueReport parse_issue_report(std::string_view raw);

// Canonical rendering accepted by parse_issue_report.
std::string format_issue_report(const IssueReport& report);

// Reports of one organizer batch, each introduced by "Exemplar {id}:".
std::string format_batch_issues(const std::vector<IssueReport>& batch);
std::vector<IssueReport> parse_batch_issues(std::string_view text);

// Extracts both bracketed sections, one item per bullet. Continuation lines fold into the
// preceding item and whitespace is normalized, so every item is a single line. Items past
// `k` are kept; the caller enforces the cap. Throws ParseError when either header is absent.
ReflectionNotes parse_notes(std::string_view raw);

// Canonical text form: both headers, one "- " bullet per item.
std::string format_notes(const ReflectionNotes& notes);

// "- " bullets joined by newlines, as injected into online prompts.
std::string render_bullets(const std::vector<NoteItem>& items);

}  // namespace reflectcap
