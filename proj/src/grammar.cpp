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

#include "reflectcap/grammar.hpp"

#include <cctype>
#include <optional>
#include <regex>

#include "reflectcap/error.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap {
namespace {

bool is_decoration(char c) { return c == '#' || c == '*' || c == '_' || c == '`' || std::isspace(static_cast<unsigned char>(c)); }

std::string_view strip_decoration(std::string_view s) {
  while (!s.empty() && is_decoration(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_decoration(s.back())) s.remove_suffix(1);
  return s;
}

// If `line` opens with one of `words` (case-insensitive) followed by ':' or nothing,
// returns the remainder after the colon.
std::optional<std::string> match_header(std::string_view line, std::initializer_list<std::string_view> words) {
  std::string_view s = line;
  while (!s.empty() && is_decoration(s.front())) s.remove_prefix(1);
  for (std::string_view w : words) {
    if (!starts_with_icase(s, w)) continue;
    std::string_view rest = s.substr(w.size());
    while (!rest.empty() && (rest.front() == '*' || rest.front() == '_' || rest.front() == ' ')) rest.remove_prefix(1);
    if (rest.empty()) return std::string{};
    if (rest.front() != ':') continue;
    rest.remove_prefix(1);
    return trim(strip_decoration(rest));
  }
  return std::nullopt;
}

bool is_none(std::string_view s) {
  const std::string t = to_lower(trim(strip_decoration(s)));
  return t == "none" || t == "none." || t == "n/a";
}

// Returns the item text when `line` is a bullet.
std::optional<std::string> bullet_text(std::string_view line) {
  const std::string s = trim(line);
  if (s.empty()) return std::nullopt;
  static const std::string kDot = "\xE2\x80\xA2";  // U+2022
  if (s.rfind(kDot, 0) == 0) return trim(std::string_view(s).substr(kDot.size()));
  if ((s[0] == '-' || s[0] == '*') && (s.size() == 1 || s[1] == ' ' || s[1] == '\t')) {
    return trim(std::string_view(s).substr(1));
  }
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')') && (i + 1 == s.size() || s[i + 1] == ' ')) {
    return trim(std::string_view(s).substr(i + 1));
  }
  return std::nullopt;
}

// "- a, - b, - c" written inline after a header.
std::vector<std::string> split_inline(const std::string& rest) {
  std::vector<std::string> out;
  if (rest.empty() || is_none(rest)) return out;
  std::string body = rest;
  if (auto b = bullet_text(body)) body = *b;
  static const std::regex kSep(R"(,\s*(?:-|\xE2\x80\xA2)\s+)");
  std::sregex_token_iterator it(body.begin(), body.end(), kSep, -1);
  for (std::sregex_token_iterator end; it != end; ++it) {
    std::string item = trim(it->str());
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Collects bullet items of one section; continuation lines fold into the last item.
class SectionItems {
 public:
  void line(std::string_view raw) {
    const std::string s = trim(raw);
    if (s.empty()) return;
    if (auto b = bullet_text(s)) {
      items_.push_back(*b);
      return;
    }
    if (is_none(s)) return;
    if (items_.empty()) {
      items_.push_back(s);
    } else {
      items_.back() += " " + s;
    }
  }
  void add(std::string item) { items_.push_back(std::move(item)); }

  std::vector<std::string> finish() const {
    std::vector<std::string> out;
    for (const auto& it : items_) {
      std::string t = normalize_whitespace(it);
      if (!t.empty() && !is_none(t)) out.push_back(std::move(t));
    }
    return out;
  }

 private:
  std::vector<std::string> items_;
};

Issue make_issue(IssueKind kind, std::string text) {
  Issue issue;
  issue.kind = kind;
  // Peel trailing "(why: ...)" / "(rule: ...)" clauses.
  while (!text.empty() && text.back() == ')') {
    int depth = 0;
    std::size_t open = std::string::npos;
    for (std::size_t i = text.size(); i-- > 0;) {
      if (text[i] == ')') ++depth;
      if (text[i] == '(' && --depth == 0) {
        open = i;
        break;
      }
    }
    if (open == std::string::npos) break;
    const std::string inner = trim(std::string_view(text).substr(open + 1, text.size() - open - 2));
    if (starts_with_icase(inner, "why:")) {
      issue.rationale = trim(std::string_view(inner).substr(4));
    } else if (starts_with_icase(inner, "rule:")) {
      issue.rule = trim(std::string_view(inner).substr(5));
    } else {
      break;
    }
    text = trim(std::string_view(text).substr(0, open));
  }
  issue.description = std::move(text);
  return issue;
}

std::string format_issue(const Issue& issue) {
  std::string s = "- " + issue.description;
  if (issue.rationale) s += " (why: " + *issue.rationale + ")";
  if (issue.rule) s += " (rule: " + *issue.rule + ")";
  return s;
}

std::string strip_max_suffix(std::string s) {
  static const std::regex kMax(R"(\s*\(max\s+\d+\)\s*$)", std::regex::icase);
  return std::regex_replace(s, kMax, "");
}

std::optional<std::string> match_bracket_header(std::string_view line, std::string_view word) {
  std::string_view s = line;
  while (!s.empty() && is_decoration(s.front())) s.remove_prefix(1);
  if (s.empty() || s.front() != '[') return std::nullopt;
  const auto close = s.find(']');
  if (close == std::string_view::npos) return std::nullopt;
  const std::string inner = trim(s.substr(1, close - 1));
  if (!starts_with_icase(inner, word)) return std::nullopt;
  std::string_view rest = s.substr(close + 1);
  while (!rest.empty() && (rest.front() == '*' || rest.front() == ' ')) rest.remove_prefix(1);
  if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
  return strip_max_suffix(trim(strip_decoration(rest)));
}

}  // namespace

IssueReport parse_issue_report(std::string_view raw) {
  enum class Section { kNone, kHalluc, kMissing };
  Section current = Section::kNone;
  bool saw_halluc = false;
  bool saw_missing = false;
  SectionItems halluc;
  SectionItems missing;
  for (const auto& line : split_lines(raw)) {
    if (auto rest = match_header(line, {"hallucinations", "hallucination"})) {
      current = Section::kHalluc;
      saw_halluc = true;
      for (auto& item : split_inline(*rest)) halluc.add(std::move(item));
      continue;
    }
    if (auto rest = match_header(line, {"missing details", "missing detail"})) {
      current = Section::kMissing;
      saw_missing = true;
      for (auto& item : split_inline(*rest)) missing.add(std::move(item));
      continue;
    }
    if (current == Section::kHalluc) halluc.line(line);
    if (current == Section::kMissing) missing.line(line);
  }
  if (!saw_halluc && !saw_missing) throw ParseError("no sections found");
  if (!saw_halluc) throw ParseError("missing section: Hallucinations");
  if (!saw_missing) throw ParseError("missing section: Missing Details");

  IssueReport report;
  for (auto& t : halluc.finish()) {
    Issue issue = make_issue(IssueKind::kHallucination, std::move(t));
    if (!issue.description.empty()) report.hallucinations.push_back(std::move(issue));
  }
  for (auto& t : missing.finish()) {
    Issue issue = make_issue(IssueKind::kMissingDetail, std::move(t));
    if (!issue.description.empty()) report.missing_details.push_back(std::move(issue));
  }
  return report;
}

std::string format_issue_report(const IssueReport& report) {
  std::string out{kHallucinationsHeader};
  out += '\n';
  if (report.hallucinations.empty()) out += "None\n";
  for (const auto& i : report.hallucinations) out += format_issue(i) + "\n";
  out += kMissingDetailsHeader;
  out += '\n';
  if (report.missing_details.empty()) out += "None\n";
  for (const auto& i : report.missing_details) out += format_issue(i) + "\n";
  return out;
}

std::string format_batch_issues(const std::vector<IssueReport>& batch) {
  std::vector<std::string> blocks;
  blocks.reserve(batch.size());
  for (const auto& r : batch) blocks.push_back("Exemplar " + r.exemplar_id + ":\n" + format_issue_report(r));
  return join(blocks, "\n");
}

std::vector<IssueReport> parse_batch_issues(std::string_view text) {
  static const std::regex kExemplar(R"(^Exemplar\s+(.+):\s*$)");
  std::vector<IssueReport> out;
  std::vector<std::string> ids;
  std::vector<std::string> bodies;
  for (const auto& line : split_lines(text)) {
    std::smatch m;
    if (std::regex_match(line, m, kExemplar)) {
      ids.push_back(m[1].str());
      bodies.emplace_back();
    } else if (!bodies.empty()) {
      bodies.back() += line + "\n";
    }
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    IssueReport r = parse_issue_report(bodies[i]);
    r.exemplar_id = ids[i];
    out.push_back(std::move(r));
  }
  return out;
}

ReflectionNotes parse_notes(std::string_view raw) {
  enum class Section { kNone, kAvoid, kInclude };
  Section current = Section::kNone;
  bool saw_avoid = false;
  bool saw_include = false;
  SectionItems avoid;
  SectionItems include;
  for (const auto& line : split_lines(raw)) {
    if (auto rest = match_bracket_header(line, "hallucination")) {
      current = Section::kAvoid;
      saw_avoid = true;
      for (auto& item : split_inline(*rest)) avoid.add(std::move(item));
      continue;
    }
    if (auto rest = match_bracket_header(line, "missing detail")) {
      current = Section::kInclude;
      saw_include = true;
      for (auto& item : split_inline(*rest)) include.add(std::move(item));
      continue;
    }
    if (current == Section::kAvoid) avoid.line(line);
    if (current == Section::kInclude) include.line(line);
  }
  if (!saw_avoid) throw ParseError("missing section: [Hallucination - Avoid These]");
  if (!saw_include) throw ParseError("missing section: [Missing Detail - Include These]");
  ReflectionNotes notes;
  for (auto& t : avoid.finish()) notes.avoid.push_back(NoteItem{std::move(t), std::nullopt});
  for (auto& t : include.finish()) notes.include.push_back(NoteItem{std::move(t), std::nullopt});
  return notes;
}

std::string format_notes(const ReflectionNotes& notes) {
  std::string out{kAvoidHeader};
  out += '\n';
  for (const auto& item : notes.avoid) out += "- " + item.text + "\n";
  out += kIncludeHeader;
  out += '\n';
  for (const auto& item : notes.include) out += "- " + item.text + "\n";
  return out;
}

std::string render_bullets(const std::vector<NoteItem>& items) {
  std::vector<std::string> lines;
  lines.reserve(items.size());
  for (const auto& item : items) lines.push_back("- " + item.text);
  return join(lines, "\n");
}

}  // namespace reflectcap
