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

#include "reflectcap/eval.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "reflectcap/digest.hpp"
#include "reflectcap/error.hpp"
#include "reflectcap/online.hpp"
#include "reflectcap/parallel.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap::eval {

using nlohmann::json;

namespace {

std::string ask(Provider& judge, std::string system, std::string user, const ImageRef* image, std::int64_t seed,
                std::vector<CallUsage>* calls) {
  std::vector<ChatMessage> messages{ChatMessage::system(std::move(system)),
                                    image ? ChatMessage::user(std::move(user), *image) : ChatMessage::user(std::move(user))};
  const ModelResponse r = judge.complete(judge.make_request(std::move(messages), seed));
  if (calls != nullptr) calls->push_back(CallUsage{r.call_id, r.usage});
  return trim(r.text);
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  for (char c : to_lower(s)) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == ' ') out.push_back(c);
  }
  return normalize_whitespace(out);
}

json item_json(const EvalItem& i) {
  json j{{"image_id", i.image_id},
         {"method", i.method},
         {"precision", i.precision},
         {"recall", i.recall},
         {"f1", i.f1},
         {"n_propositions", i.n_propositions},
         {"n_unknown", i.n_unknown},
         {"n_vqa", i.n_vqa}};
  if (!i.flags.empty()) j["flags"] = i.flags;
  return j;
}

}  // namespace

double f1(double precision, double recall) {
  if (!(precision >= 0.0 && precision <= 1.0) || !(recall >= 0.0 && recall <= 1.0)) {
    throw ValidationError("precision and recall must lie in [0, 1]");
  }
  return f1_score(precision, recall);
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kSupported: return "supported";
    case Verdict::kUnsupported: return "unsupported";
    case Verdict::kUnknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kWin: return "win";
    case Outcome::kTie: return "tie";
    case Outcome::kLoss: return "loss";
  }
  return "tie";
}

EvalPrompts EvalPrompts::defaults() {
  EvalPrompts p;
  p.decompose_system =
      "You decompose image captions into atomic propositions. Each proposition states exactly one checkable fact. "
      "Output one proposition per line, each starting with \"- \". Output nothing else.";
  p.decompose_user = "Caption:\n{caption}";
  p.verify_system =
      "You verify statements about an image against the image and a ground-truth description. Answer \"Supported\" "
      "if the statement is true, \"Unsupported\" otherwise. Answer with one word.";
  p.verify_user = "Ground-truth description:\n{ground_truth}\n\nStatement: {proposition}";
  p.vqa_system =
      "Answer the question using only the caption below. Do not guess beyond it. Reply with a short phrase, or "
      "\"unknown\" if the caption does not say.";
  p.vqa_user = "Caption:\n{caption}\n\nQuestion: {question}";
  p.arena_system =
      "You compare two captions of the same image. Prefer the caption that is more accurate and more detailed. "
      "Answer \"A\", \"B\", or \"Tie\".";
  p.arena_user = "Caption A:\n{caption_a}\n\nCaption B:\n{caption_b}";
  return p;
}

namespace {
const std::pair<const char*, std::string EvalPrompts::*> kPromptFiles[] = {
    {"decompose_system", &EvalPrompts::decompose_system}, {"decompose_user", &EvalPrompts::decompose_user},
    {"verify_system", &EvalPrompts::verify_system},       {"verify_user", &EvalPrompts::verify_user},
    {"vqa_system", &EvalPrompts::vqa_system},             {"vqa_user", &EvalPrompts::vqa_user},
    {"arena_system", &EvalPrompts::arena_system},         {"arena_user", &EvalPrompts::arena_user},
};
}  // namespace

EvalPrompts EvalPrompts::load(const std::filesystem::path& dir) {
  EvalPrompts p = defaults();
  for (const auto& [name, field] : kPromptFiles) {
    const auto path = dir / (std::string(name) + ".txt");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    p.*field = std::move(text);
  }
  return p;
}

void EvalPrompts::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, field] : kPromptFiles) store::write_text_file(dir / (std::string(name) + ".txt"), this->*field + "\n");
}

Factuality factuality_sim(std::string_view caption, const sim::Scene& scene) {
  Factuality out;
  const sim::FactSet facts = sim::caption_fact_set(caption);
  std::size_t supported = 0;
  for (const auto& f : facts) {
    const bool ok = scene.contains(f);
    supported += ok ? 1 : 0;
    out.propositions.push_back({sim::render_fact(f), ok ? Verdict::kSupported : Verdict::kUnsupported});
  }
  out.precision = facts.empty() ? 0.0 : static_cast<double>(supported) / static_cast<double>(facts.size());
  return out;
}

Coverage coverage_sim(std::string_view caption, const sim::Scene& scene) {
  if (scene.vqa.empty()) throw ValidationError("scene " + scene.id + " has no vqa items");
  const sim::FactSet facts = sim::caption_fact_set(caption);
  Coverage out;
  out.n_vqa = scene.vqa.size();
  for (const auto& q : scene.vqa) {
    const sim::Fact* f = scene.find(q.entity, q.category);
    if (f != nullptr && facts.count(*f)) ++out.n_answered;
  }
  out.recall = static_cast<double>(out.n_answered) / static_cast<double>(out.n_vqa);
  return out;
}

Factuality factuality_judge(std::string_view caption, const ImageRef& image, std::string_view ground_truth,
                            Provider& judge, const EvalPrompts& prompts, std::int64_t seed,
                            std::vector<CallUsage>* calls) {
  Factuality out;
  if (trim(caption).empty()) return out;
  const std::string decomposed = ask(judge, prompts.decompose_system,
                                     render_template(prompts.decompose_user, {{"caption", std::string(caption)}}),
                                     nullptr, seed, calls);
  std::size_t supported = 0;
  std::size_t judged = 0;
  for (auto& text : online::parse_propositions(decomposed)) {
    Proposition p{text, Verdict::kUnknown};
    try {
      const std::string answer = ask(
          judge, prompts.verify_system,
          render_template(prompts.verify_user, {{"ground_truth", std::string(ground_truth)}, {"proposition", text}}),
          &image, seed, calls);
      if (starts_with_icase(answer, "unsupported")) {
        p.verdict = Verdict::kUnsupported;
      } else if (starts_with_icase(answer, "supported")) {
        p.verdict = Verdict::kSupported;
      }
    } catch (const ProviderError& e) {
      spdlog::warn("verify failed for '{}': {}", text, e.what());
    }
    if (p.verdict == Verdict::kUnknown) {
      ++out.n_unknown;
    } else {
      ++judged;
      supported += p.verdict == Verdict::kSupported ? 1 : 0;
    }
    out.propositions.push_back(std::move(p));
  }
  out.precision = judged == 0 ? 0.0 : static_cast<double>(supported) / static_cast<double>(judged);
  return out;
}

Coverage coverage_judge(std::string_view caption, const std::vector<VqaQuestion>& questions, Provider& judge,
                        const EvalPrompts& prompts, std::int64_t seed, std::vector<CallUsage>* calls) {
  if (questions.empty()) throw ValidationError("coverage needs at least one vqa item");
  Coverage out;
  out.n_vqa = questions.size();
  for (const auto& q : questions) {
    try {
      const std::string answer = normalize_answer(ask(
          judge, prompts.vqa_system,
          render_template(prompts.vqa_user, {{"caption", std::string(caption)}, {"question", q.question}}), nullptr,
          seed, calls));
      const std::string key = normalize_answer(q.answer);
      if (!key.empty() && answer.find(key) != std::string::npos) ++out.n_answered;
    } catch (const ProviderError& e) {
      spdlog::warn("vqa failed for '{}': {}", q.question, e.what());
      ++out.n_unanswered;
    }
  }
  out.recall = static_cast<double>(out.n_answered) / static_cast<double>(out.n_vqa);
  return out;
}

EvalReport aggregate(std::vector<EvalItem> items, std::size_t n_failed) {
  EvalReport r;
  r.n_failed = n_failed;
  double p = 0.0;
  double rc = 0.0;
  for (const auto& i : items) {
    p += i.precision;
    rc += i.recall;
    r.n_propositions += i.n_propositions;
    r.n_vqa += i.n_vqa;
  }
  if (!items.empty()) {
    r.precision = p / static_cast<double>(items.size());
    r.recall = rc / static_cast<double>(items.size());
  }
  r.f1 = f1_score(r.precision, r.recall);
  r.items = std::move(items);
  return r;
}

json to_json(const EvalReport& report) {
  json items = json::array();
  std::map<std::string, std::vector<EvalItem>> by_method;
  for (const auto& i : report.items) {
    items.push_back(item_json(i));
    by_method[i.method].push_back(i);
  }
  json methods = json::object();
  for (auto& [m, list] : by_method) {
    const EvalReport sub = aggregate(std::move(list));
    methods[m] = {{"precision", sub.precision}, {"recall", sub.recall}, {"f1", sub.f1}, {"n_items", sub.items.size()}};
  }
  return json{{"precision", report.precision},
              {"recall", report.recall},
              {"f1", report.f1},
              {"n_propositions", report.n_propositions},
              {"n_vqa", report.n_vqa},
              {"n_failed", report.n_failed},
              {"methods", methods},
              {"items", items}};
}

EvalReport evaluate_sim(const std::vector<store::ResultRecord>& results, const std::vector<sim::Scene>& scenes) {
  std::map<std::string, const sim::Scene*> by_id;
  for (const auto& s : scenes) by_id[s.id] = &s;
  std::vector<EvalItem> items;
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.status != "ok") {
      ++failed;
      continue;
    }
    auto it = by_id.find(r.image_id);
    if (it == by_id.end()) throw ValidationError("no scene for image " + r.image_id);
    EvalItem item;
    item.image_id = r.image_id;
    item.method = std::string(to_string(r.method));
    try {
      const Factuality fa = factuality_sim(r.final_caption(), *it->second);
      const Coverage co = coverage_sim(r.final_caption(), *it->second);
      item.precision = fa.precision;
      item.recall = co.recall;
      item.n_propositions = fa.propositions.size();
      item.n_vqa = co.n_vqa;
      if (fa.propositions.empty()) item.flags.push_back("no_propositions");
    } catch (const ParseError& e) {
      item.n_vqa = it->second->vqa.size();
      item.flags.push_back(std::string("unparseable: ") + e.what());
    }
    item.f1 = f1_score(item.precision, item.recall);
    items.push_back(std::move(item));
  }
  return aggregate(std::move(items), failed);
}

std::vector<EvalTarget> read_eval_targets(const std::filesystem::path& path) {
  std::vector<EvalTarget> out;
  for (const auto& j : store::read_ledger(path)) {
    EvalTarget t;
    const std::filesystem::path image = j.at("image").get<std::string>();
    const auto resolved = image.is_absolute() ? image : path.parent_path() / image;
    t.image = ImageRef::from_path(j.value("id", resolved.stem().string()), resolved);
    t.ground_truth = j.value("ground_truth", std::string{});
    for (const auto& q : j.value("vqa", json::array())) {
      t.vqa.push_back({q.at("question").get<std::string>(), q.at("answer").get<std::string>()});
    }
    out.push_back(std::move(t));
  }
  return out;
}

EvalReport evaluate_judge(const std::vector<store::ResultRecord>& results, const std::vector<EvalTarget>& targets,
                          Provider& judge, const EvalPrompts& prompts, std::int64_t seed, int concurrency) {
  std::map<std::string, const EvalTarget*> by_id;
  for (const auto& t : targets) by_id[t.image.id] = &t;
  std::vector<const store::ResultRecord*> ok;
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.status != "ok") {
      ++failed;
      continue;
    }
    if (!by_id.count(r.image_id)) throw ValidationError("no eval target for image " + r.image_id);
    ok.push_back(&r);
  }
  std::vector<EvalItem> items(ok.size());
  parallel_ordered(
      ok.size(), concurrency,
      [&](std::size_t i) {
        const store::ResultRecord& r = *ok[i];
        const EvalTarget& t = *by_id.at(r.image_id);
        EvalItem item;
        item.image_id = r.image_id;
        item.method = std::string(to_string(r.method));
        const Factuality fa = factuality_judge(r.final_caption(), t.image, t.ground_truth, judge, prompts, seed);
        const Coverage co = coverage_judge(r.final_caption(), t.vqa, judge, prompts, seed);
        item.precision = fa.precision;
        item.recall = co.recall;
        item.f1 = f1_score(item.precision, item.recall);
        item.n_propositions = fa.propositions.size();
        item.n_unknown = fa.n_unknown;
        item.n_vqa = co.n_vqa;
        if (fa.propositions.empty()) item.flags.push_back("no_propositions");
        if (co.n_unanswered > 0) item.flags.push_back("unanswered:" + std::to_string(co.n_unanswered));
        return item;
      },
      [&](std::size_t i, EvalItem& item) { items[i] = std::move(item); });
  return aggregate(std::move(items), failed);
}

double arena_margin(const std::vector<Outcome>& outcomes) {
  if (outcomes.empty()) return 0.0;
  long wins = 0;
  long losses = 0;
  for (Outcome o : outcomes) {
    wins += o == Outcome::kWin ? 1 : 0;
    losses += o == Outcome::kLoss ? 1 : 0;
  }
  return 100.0 * static_cast<double>(wins - losses) / static_cast<double>(outcomes.size());
}

ArenaResult make_arena_result(std::vector<Comparison> comparisons) {
  ArenaResult r;
  std::vector<Outcome> outcomes;
  for (const auto& c : comparisons) outcomes.push_back(c.outcome);
  r.margin = arena_margin(outcomes);
  r.comparisons = std::move(comparisons);
  return r;
}

json to_json(const ArenaResult& result) {
  json comps = json::array();
  for (const auto& c : result.comparisons) {
    json j{{"image_id", c.image_id},
           {"reference_id", c.reference_id},
           {"outcome", to_string(c.outcome)},
           {"candidate_first", c.candidate_first}};
    if (!c.error.empty()) j["error"] = c.error;
    comps.push_back(std::move(j));
  }
  return json{{"margin", result.margin}, {"comparisons", comps}};
}

void check_arena_inputs(const CaptionSet& candidates, const std::vector<ReferenceSet>& references) {
  if (references.size() != kArenaReferences) {
    throw ValidationError("arena needs exactly " + std::to_string(kArenaReferences) + " reference sets, got " +
                          std::to_string(references.size()));
  }
  if (candidates.empty()) throw ValidationError("arena needs at least one candidate caption");
  for (const auto& [image_id, _] : candidates) {
    for (const auto& ref : references) {
      if (!ref.captions.count(image_id)) {
        throw ValidationError("reference " + ref.id + " has no caption for image " + image_id);
      }
    }
  }
}

ArenaResult arena_score_sim(const CaptionSet& candidates, const std::vector<ReferenceSet>& references,
                            const std::map<std::string, sim::Scene>& scenes) {
  check_arena_inputs(candidates, references);
  std::vector<Comparison> comps;
  for (const auto& [image_id, caption] : candidates) {
    auto scene = scenes.find(image_id);
    if (scene == scenes.end()) throw ValidationError("no scene for image " + image_id);
    for (const auto& ref : references) {
      const auto o = sim::sim_judge(Caption{caption}, Caption{ref.captions.at(image_id)}, scene->second);
      comps.push_back({image_id, ref.id,
                       o == sim::JudgeOutcome::kAWins   ? Outcome::kWin
                       : o == sim::JudgeOutcome::kBWins ? Outcome::kLoss
                                                        : Outcome::kTie,
                       true, {}});
    }
  }
  return make_arena_result(std::move(comps));
}

ArenaResult arena_score_judge(const CaptionSet& candidates, const std::vector<ReferenceSet>& references,
                              const std::map<std::string, ImageRef>& images, Provider& judge,
                              const EvalPrompts& prompts, std::int64_t seed) {
  check_arena_inputs(candidates, references);
  std::vector<Comparison> comps;
  for (const auto& [image_id, caption] : candidates) {
    auto image = images.find(image_id);
    if (image == images.end()) throw ValidationError("no image for " + image_id);
    for (const auto& ref : references) {
      Comparison c{image_id, ref.id, Outcome::kTie, true, {}};
      const std::string draw = sha256_hex(std::to_string(seed) + "\n" + image_id + "\n" + ref.id);
      c.candidate_first = (std::stoi(draw.substr(0, 2), nullptr, 16) & 1) == 0;
      const std::string& other = ref.captions.at(image_id);
      try {
        const std::string answer = to_lower(ask(
            judge, prompts.arena_system,
            render_template(prompts.arena_user, {{"caption_a", c.candidate_first ? caption : other},
                                                 {"caption_b", c.candidate_first ? other : caption}}),
            &image->second, seed, nullptr));
        const bool a = answer.rfind("a", 0) == 0 && answer.rfind("an", 0) != 0;
        const bool b = answer.rfind("b", 0) == 0;
        if (answer.rfind("tie", 0) == 0) {
          c.outcome = Outcome::kTie;
        } else if (a || b) {
          const bool candidate_won = a == c.candidate_first;
          c.outcome = candidate_won ? Outcome::kWin : Outcome::kLoss;
        } else {
          c.error = "unrecognized verdict: " + answer;
        }
      } catch (const ProviderError& e) {
        c.error = e.what();
      }
      comps.push_back(std::move(c));
    }
  }
  return make_arena_result(std::move(comps));
}

CaptionSet final_captions(const std::vector<store::ResultRecord>& results) {
  CaptionSet out;
  for (const auto& r : results) {
    if (r.status == "ok") out[r.image_id] = r.final_caption();
  }
  return out;
}

CostReport cost(const std::vector<CallUsage>& calls, std::int64_t n_params) {
  if (n_params <= 0) throw ValidationError("model parameter count must be positive");
  CostReport r;
  r.model_params = n_params;
  r.calls = calls;
  std::set<std::string> images;
  for (const auto& c : calls) {
    r.total_tokens += c.usage.prompt_text_tokens + c.usage.completion_tokens;
    if (c.usage.image_tokens == 0) continue;
    if (c.usage.image_id.empty() || images.insert(c.usage.image_id).second) r.total_tokens += c.usage.image_tokens;
  }
  r.tflops = 2.0 * static_cast<double>(n_params) * static_cast<double>(r.total_tokens) / 1e12;
  return r;
}

std::vector<MethodCost> cost_table(const std::vector<store::ResultRecord>& results,
                                   const std::map<std::string, std::int64_t>& params) {
  std::map<std::pair<std::string, std::string>, MethodCost> rows;
  for (const auto& r : results) {
    if (r.status != "ok") continue;
    auto p = params.find(r.model_id);
    if (p == params.end()) throw UsageError("model " + r.model_id + " missing from the parameter table");
    const CostReport c = cost(r.calls, p->second);
    MethodCost& row = rows[{std::string(to_string(r.method)), r.model_id}];
    row.method = std::string(to_string(r.method));
    row.model_id = r.model_id;
    ++row.n_captions;
    row.mean_tokens += static_cast<double>(c.total_tokens);
    row.total_tflops += c.tflops;
    row.total_calls += r.calls.size();
  }
  std::vector<MethodCost> out;
  for (auto& [_, row] : rows) {
    row.mean_tokens /= static_cast<double>(row.n_captions);
    row.mean_tflops = row.total_tflops / static_cast<double>(row.n_captions);
    out.push_back(row);
  }
  return out;
}

json to_json(const std::vector<MethodCost>& table) {
  json rows = json::array();
  for (const auto& r : table) {
    rows.push_back({{"method", r.method},
                    {"model_id", r.model_id},
                    {"n_captions", r.n_captions},
                    {"mean_tokens", r.mean_tokens},
                    {"mean_tflops", r.mean_tflops},
                    {"total_tflops", r.total_tflops},
                    {"total_calls", r.total_calls}});
  }
  return json{{"methods", rows}};
}

}  // namespace reflectcap::eval
