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

#include "reflectcap/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "reflectcap/error.hpp"
#include "reflectcap/grammar.hpp"
#include "reflectcap/prompts.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap::sim {

using nlohmann::json;

namespace {

struct CategoryInfo {
  Category category;
  std::string_view tag;
  std::string_view aspect;  // word used in caption sentences
  std::vector<std::string_view> keywords;
  std::string_view avoid;
  std::string_view include;
};

const std::vector<CategoryInfo>& category_table() {
  static const std::vector<CategoryInfo> table = {
      {Category::kCount, "count", "count", {"count", "number of", "how many"},
       "Do not guess the count of objects; state numbers only when clearly countable.",
       "Give the count of repeated objects."},
      {Category::kColor, "color", "color", {"color", "colour"}, "Do not infer object colors when they are ambiguous.",
       "State the color of each clearly visible object."},
      {Category::kSpatial, "spatial", "position", {"spatial", "position"},
       "Do not invent spatial positions that are not clearly visible.",
       "Describe the spatial position of each object."},
      {Category::kTextSign, "text_sign", "sign text", {"sign", "written text", "logo"},
       "Do not add unsupported details to signs, logos, or symbols.", "Transcribe any visible sign text."},
      {Category::kLighting, "lighting", "lighting", {"lighting", "shadow"},
       "Do not assume lighting conditions that are not evident.", "Describe the lighting conditions and shadows."},
      {Category::kMaterial, "material", "material", {"material", "texture"},
       "Do not guess the material of objects from appearance alone.",
       "Mention the material of surfaces and objects."},
      {Category::kBackground, "background", "background", {"background"}, "Do not fabricate background scenery.",
       "Describe the background elements behind the main subjects."},
      {Category::kObjectPresence, "object_presence", "visibility", {"presence", "visibility", "partially hidden"},
       "Do not overstate object presence or visibility.",
       "Note the presence and visibility of partially hidden objects."},
  };
  return table;
}

const CategoryInfo& info(Category c) { return category_table()[static_cast<std::size_t>(c)]; }

const std::vector<std::string>& entity_vocabulary() {
  static const std::vector<std::string> v = {"chair", "table",  "dog",    "cat",   "lamp",     "car",
                                             "bicycle", "tree", "bench",  "window", "door",    "cup",
                                             "book",  "plant",  "bottle", "umbrella", "clock", "vase",
                                             "bag",   "boat",   "horse",  "bird",  "fence",    "kite"};
  return v;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h ^= 0xff;  // field separator
  h *= 0x100000001b3ULL;
  return h;
}

Scene make_scene(std::string id, std::uint64_t seed, std::size_t n_facts) {
  if (n_facts < 1) throw ValidationError("a scene needs at least one fact");
  const auto& vocab = entity_vocabulary();
  const std::size_t n_entities = std::max(vocab.size(), n_facts);
  auto entity_name = [&](std::size_t i) { return i < vocab.size() ? vocab[i] : fmt::format("object-{}", i + 1); };

  SplitMix rng(seed);
  Scene scene;
  scene.id = std::move(id);
  std::set<std::pair<std::size_t, Category>> taken;
  while (scene.facts.size() < n_facts) {
    const std::size_t e = rng.below(n_entities);
    const auto c = kAllCategories[rng.below(std::size(kAllCategories))];
    const auto& values = category_values(c);
    const std::string value = values[rng.below(values.size())];
    if (!taken.emplace(e, c).second) continue;
    scene.facts.push_back(Fact{entity_name(e), c, value});
  }
  for (std::size_t i = 0; i < scene.facts.size(); ++i) {
    scene.vqa.push_back(VqaItem{fmt::format("q{}", i + 1), scene.facts[i].entity, scene.facts[i].category});
  }
  return scene;
}

std::string_view between(std::string_view text, std::string_view open, std::string_view close) {
  const auto a = text.find(open);
  if (a == std::string_view::npos) return {};
  const auto start = a + open.size();
  const auto b = close.empty() ? text.size() : text.find(close, start);
  if (b == std::string_view::npos) return text.substr(start);
  return text.substr(start, b - start);
}

std::vector<Directive> parse_bullet_block(std::string_view block, DirectiveKind kind) {
  std::vector<Directive> out;
  for (const auto& line : split_lines(block)) {
    std::string t = trim(line);
    if (t.rfind("- ", 0) == 0) t = trim(std::string_view(t).substr(2));
    if (!t.empty()) out.push_back(Directive{kind, t});
  }
  return out;
}

std::string fact_phrase(const Fact& f) {
  return fmt::format("the {} has {} {}", f.entity, info(f.category).aspect, f.value);
}

std::optional<Category> issue_category(const Issue& issue) {
  if (issue.category_hint) {
    try {
      return parse_category(*issue.category_hint);
    } catch (const ParseError&) {
    }
  }
  if (issue.rule) {
    if (auto c = recognize_category(*issue.rule)) return c;
  }
  return recognize_category(issue.description);
}

std::optional<Category> note_category(const NoteItem& item) {
  if (item.category_hint) {
    try {
      return parse_category(*item.category_hint);
    } catch (const ParseError&) {
    }
  }
  return recognize_category(item.text);
}

std::vector<NoteItem> organize_list(const std::vector<NoteItem>& current, const std::vector<const Issue*>& issues,
                                    DirectiveKind kind, std::size_t k) {
  struct Candidate {
    std::optional<Category> category;
    std::size_t count = 0;
    bool member = false;
    std::size_t position = 0;
    std::string text;
  };
  std::vector<Candidate> cands;
  auto find = [&](Category c) -> Candidate* {
    for (auto& cand : cands) {
      if (cand.category == c) return &cand;
    }
    return nullptr;
  };
  for (std::size_t i = 0; i < current.size(); ++i) {
    const auto c = note_category(current[i]);
    if (c && find(*c) != nullptr) continue;
    cands.push_back(Candidate{c, 0, true, i, current[i].text});
  }
  for (const Issue* issue : issues) {
    const auto c = issue_category(*issue);
    if (!c) continue;
    if (Candidate* cand = find(*c)) {
      ++cand->count;
    } else {
      const auto text = kind == DirectiveKind::kAvoid ? avoid_directive(*c) : include_directive(*c);
      cands.push_back(Candidate{c, 1, false, current.size(), std::string(text)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.member != b.member) return a.member;
    if (a.position != b.position) return a.position < b.position;
    const int ca = a.category ? static_cast<int>(*a.category) : 99;
    const int cb = b.category ? static_cast<int>(*b.category) : 99;
    return ca < cb;
  });
  std::vector<NoteItem> out;
  for (std::size_t i = 0; i < cands.size() && out.size() < k; ++i) {
    const auto& cand = cands[i];
    out.push_back(NoteItem{cand.text, cand.category ? std::optional<std::string>(std::string(to_string(*cand.category)))
                                                    : std::nullopt});
  }
  return out;
}

}  // namespace

std::string_view to_string(Category c) { return info(c).tag; }

Category parse_category(std::string_view tag) {
  for (const auto& ci : category_table()) {
    if (ci.tag == tag) return ci.category;
  }
  throw ParseError("unknown fact category: " + std::string(tag));
}

const std::vector<std::string>& category_values(Category c) {
  static const std::map<Category, std::vector<std::string>> values = {
      {Category::kCount, {"one", "two", "three", "four", "five", "six", "seven"}},
      {Category::kColor, {"red", "blue", "green", "yellow", "white", "black", "brown", "gray", "orange"}},
      {Category::kSpatial, {"on the left", "on the right", "in the center", "in the foreground", "near the top",
                            "near the bottom"}},
      {Category::kTextSign, {"reading OPEN", "reading EXIT", "reading SALE", "reading 42", "reading STOP"}},
      {Category::kLighting, {"bright sunlight", "soft shade", "warm lamplight", "overcast daylight", "neon glow"}},
      {Category::kMaterial, {"wood", "metal", "glass", "plastic", "fabric", "stone", "wicker"}},
      {Category::kBackground, {"a brick wall", "a city skyline", "a pine forest", "a sandy beach", "a cloudy sky",
                               "a tiled wall"}},
      {Category::kObjectPresence, {"fully visible", "partially hidden", "cut off at the edge",
                                   "reflected in a mirror"}},
  };
  return values.at(c);
}

void Scene::validate() const {
  if (facts.empty()) throw ValidationError("scene " + id + " has no facts");
  std::set<std::pair<std::string, Category>> keys;
  for (const auto& f : facts) {
    if (!keys.emplace(f.entity, f.category).second) {
      throw ValidationError("scene " + id + " repeats (" + f.entity + ", " + std::string(to_string(f.category)) + ")");
    }
  }
  for (const auto& q : vqa) {
    if (find(q.entity, q.category) == nullptr) {
      throw ValidationError("scene " + id + " vqa item " + q.qid + " targets no fact");
    }
  }
}

const Fact* Scene::find(std::string_view entity, Category c) const {
  for (const auto& f : facts) {
    if (f.category == c && f.entity == entity) return &f;
  }
  return nullptr;
}

bool Scene::contains(const Fact& f) const {
  const Fact* g = find(f.entity, f.category);
  return g != nullptr && g->value == f.value;
}

FactSet Scene::fact_set() const { return FactSet(facts.begin(), facts.end()); }

FactSet Scene::vqa_targets() const {
  FactSet out;
  for (const auto& q : vqa) {
    if (const Fact* f = find(q.entity, q.category)) out.insert(*f);
  }
  return out;
}

json to_json(const Scene& scene) {
  json facts = json::array();
  for (const auto& f : scene.facts) {
    facts.push_back({{"entity", f.entity}, {"category", to_string(f.category)}, {"value", f.value}});
  }
  json vqa = json::array();
  for (const auto& q : scene.vqa) {
    vqa.push_back({{"qid", q.qid}, {"entity", q.entity}, {"category", to_string(q.category)}});
  }
  return json{{"id", scene.id}, {"facts", std::move(facts)}, {"vqa", std::move(vqa)}};
}

Scene scene_from_json(const json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("facts")) throw ParseError("scene record needs id and facts");
  Scene scene;
  try {
    scene.id = j.at("id").get<std::string>();
    for (const auto& f : j.at("facts")) {
      scene.facts.push_back(Fact{f.at("entity").get<std::string>(),
                                 parse_category(f.at("category").get<std::string>()),
                                 f.at("value").get<std::string>()});
    }
    for (const auto& q : j.value("vqa", json::array())) {
      scene.vqa.push_back(VqaItem{q.at("qid").get<std::string>(), q.at("entity").get<std::string>(),
                                  parse_category(q.at("category").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed scene record: ") + e.what());
  }
  scene.validate();
  return scene;
}

Scene generate_scene(std::uint64_t seed, std::size_t n_facts) {
  return make_scene("scene-" + std::to_string(seed), seed, n_facts);
}

std::vector<Scene> generate_corpus(std::uint64_t seed, std::size_t n_scenes, std::size_t n_facts) {
  std::vector<Scene> out;
  out.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    out.push_back(make_scene(fmt::format("s{}-{:04d}", seed, i), splitmix64(seed * 0x100000001b3ULL + i), n_facts));
  }
  return out;
}

ImageRef scene_image(const Scene& scene) {
  return ImageRef::from_bytes(scene.id, to_json(scene).dump(), kSimSceneMediaType);
}

Scene scene_from_image(const ImageRef& image) {
  const std::string bytes = load_image_bytes(image);
  const json j = json::parse(bytes, nullptr, false);
  if (j.is_discarded()) throw ParseError("image " + image.id + " does not carry a simworld scene");
  return scene_from_json(j);
}

double BiasProfile::halluc(Category c) const {
  auto it = halluc_rate.find(c);
  return it == halluc_rate.end() ? 0.0 : it->second;
}

double BiasProfile::omit(Category c) const {
  auto it = omit_rate.find(c);
  return it == omit_rate.end() ? 0.0 : it->second;
}

void BiasProfile::validate() const {
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  for (const auto& [c, r] : halluc_rate) {
    if (!in_unit(r)) throw ValidationError("halluc_rate[" + std::string(to_string(c)) + "] outside [0,1]");
  }
  for (const auto& [c, r] : omit_rate) {
    if (!in_unit(r)) throw ValidationError("omit_rate[" + std::string(to_string(c)) + "] outside [0,1]");
  }
  if (!in_unit(compliance)) throw ValidationError("compliance outside [0,1]");
}

json to_json(const BiasProfile& p) {
  json j;
  json h = json::object();
  for (const auto& [c, r] : p.halluc_rate) h[std::string(to_string(c))] = r;
  json o = json::object();
  for (const auto& [c, r] : p.omit_rate) o[std::string(to_string(c))] = r;
  j["halluc_rate"] = std::move(h);
  j["omit_rate"] = std::move(o);
  j["compliance"] = p.compliance;
  if (p.instruction_capacity != std::numeric_limits<std::size_t>::max()) {
    j["instruction_capacity"] = p.instruction_capacity;
  }
  json cv = json::object();
  for (const auto& [c, vals] : p.confusion_values) cv[std::string(to_string(c))] = vals;
  if (!cv.empty()) j["confusion_values"] = std::move(cv);
  return j;
}

BiasProfile bias_from_json(const json& j) {
  BiasProfile p;
  if (!j.is_object()) return p;
  try {
    const json halluc = j.value("halluc_rate", json::object());
    const json omit = j.value("omit_rate", json::object());
    const json confusion = j.value("confusion_values", json::object());
    for (const auto& [k, v] : halluc.items()) p.halluc_rate[parse_category(k)] = v.get<double>();
    for (const auto& [k, v] : omit.items()) p.omit_rate[parse_category(k)] = v.get<double>();
    p.compliance = j.value("compliance", 1.0);
    if (j.contains("instruction_capacity") && !j["instruction_capacity"].is_null()) {
      p.instruction_capacity = j["instruction_capacity"].get<std::size_t>();
    }
    for (const auto& [k, v] : confusion.items()) {
      p.confusion_values[parse_category(k)] = v.get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed bias profile: ") + e.what());
  }
  p.validate();
  return p;
}

std::optional<Category> recognize_category(std::string_view text) {
  const std::string lower = to_lower(text);
  std::optional<Category> best;
  std::size_t best_pos = std::string::npos;
  for (const auto& ci : category_table()) {
    for (std::string_view kw : ci.keywords) {
      const auto pos = lower.find(kw);
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best = ci.category;
      }
    }
  }
  return best;
}

std::string_view avoid_directive(Category c) { return info(c).avoid; }
std::string_view include_directive(Category c) { return info(c).include; }

std::string render_fact(const Fact& f) {
  return fmt::format("The {} has {} {}.", f.entity, info(f.category).aspect, f.value);
}

std::string render_facts(const std::vector<Fact>& facts) {
  if (facts.empty()) return std::string(prompts::kEmptyCaption);
  std::vector<std::string> lines;
  lines.reserve(facts.size());
  for (const auto& f : facts) lines.push_back(render_fact(f));
  return join(lines, "\n");
}

std::vector<Fact> parse_caption_facts(std::string_view text) {
  static const std::regex kLine = [] {
    std::string alts;
    for (const auto& ci : category_table()) {
      if (!alts.empty()) alts += "|";
      alts += std::string(ci.aspect);
    }
    return std::regex("^The (.+?) has (" + alts + ") (.+)\\.$");
  }();
  std::vector<Fact> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line == prompts::kEmptyCaption) continue;
    std::smatch m;
    if (!std::regex_match(line, m, kLine)) {
      throw ParseError("non-canonical caption line: \"" + line + "\"", static_cast<int>(i + 1));
    }
    const std::string aspect = m[2].str();
    for (const auto& ci : category_table()) {
      if (ci.aspect == aspect) {
        out.push_back(Fact{m[1].str(), ci.category, m[3].str()});
        break;
      }
    }
  }
  return out;
}

FactSet caption_fact_set(std::string_view text) {
  const auto facts = parse_caption_facts(text);
  return FactSet(facts.begin(), facts.end());
}

double decision_unit(std::uint64_t seed, std::string_view scene_id, std::string_view a, std::string_view b,
                     std::string_view kind) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, std::to_string(seed));
  h = fnv1a(h, scene_id);
  h = fnv1a(h, a);
  h = fnv1a(h, b);
  h = fnv1a(h, kind);
  return static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
}

Caption sim_caption(const Scene& scene, const std::vector<Directive>& directives, const BiasProfile& profile,
                    std::uint64_t seed) {
  std::set<Category> avoid_on;
  std::set<Category> include_on;
  for (std::size_t j = 0; j < directives.size() && j < profile.instruction_capacity; ++j) {
    const auto& d = directives[j];
    const auto c = recognize_category(d.text);
    if (!c) continue;
    const bool avoid = d.kind == DirectiveKind::kAvoid;
    if (decision_unit(seed, scene.id, d.text, std::to_string(j), avoid ? "comply-avoid" : "comply-include") <
        profile.compliance) {
      (avoid ? avoid_on : include_on).insert(*c);
    }
  }

  std::vector<Fact> emitted;
  for (const auto& f : scene.facts) {
    const std::string_view tag = to_string(f.category);
    const double omit = include_on.count(f.category) ? 0.0 : profile.omit(f.category);
    if (decision_unit(seed, scene.id, f.entity, tag, "omit") < omit) continue;
    Fact out = f;
    const double halluc = avoid_on.count(f.category) ? 0.0 : profile.halluc(f.category);
    if (decision_unit(seed, scene.id, f.entity, tag, "halluc") < halluc) {
      auto it = profile.confusion_values.find(f.category);
      const auto& pool_src = it != profile.confusion_values.end() ? it->second : category_values(f.category);
      std::vector<std::string> pool;
      for (const auto& v : pool_src) {
        if (v != f.value) pool.push_back(v);
      }
      if (!pool.empty()) {
        const double u = decision_unit(seed, scene.id, f.entity, tag, "confuse");
        out.value = pool[std::min(pool.size() - 1, static_cast<std::size_t>(u * static_cast<double>(pool.size())))];
      }
    }
    emitted.push_back(std::move(out));
  }
  Caption cap;
  cap.text = render_facts(emitted);
  cap.method = MethodId::kZeroShot;
  return cap;
}

IssueReport sim_feedback(const Scene& scene, const Caption& candidate, const Caption& reference) {
  const auto cand = parse_caption_facts(candidate.text);
  const auto ref = parse_caption_facts(reference.text);
  const FactSet cand_set(cand.begin(), cand.end());
  IssueReport report;
  report.exemplar_id = scene.id;
  FactSet seen;
  for (const auto& f : cand) {
    if (scene.contains(f) || !seen.insert(f).second) continue;
    Issue issue;
    issue.kind = IssueKind::kHallucination;
    const auto aspect = std::string(info(f.category).aspect);
    if (const Fact* truth = scene.find(f.entity, f.category)) {
      issue.description = "the caption states " + fact_phrase(f) + ", but the image shows " + truth->value;
    } else {
      issue.description = "the caption states " + fact_phrase(f) + ", which is not visible in the image";
    }
    issue.rationale = "the stated " + aspect + " is not supported by the image";
    issue.rule = std::string(avoid_directive(f.category));
    issue.category_hint = std::string(to_string(f.category));
    report.hallucinations.push_back(std::move(issue));
  }
  seen.clear();
  for (const auto& f : ref) {
    if (!scene.contains(f) || cand_set.count(f) || !seen.insert(f).second) continue;
    Issue issue;
    issue.kind = IssueKind::kMissingDetail;
    issue.description = "the caption does not mention that " + fact_phrase(f);
    issue.rationale = "the reference describes this visible detail";
    issue.rule = std::string(include_directive(f.category));
    issue.category_hint = std::string(to_string(f.category));
    report.missing_details.push_back(std::move(issue));
  }
  return report;
}

Caption sim_merge(const Caption& base, const Caption& detail) {
  const auto base_facts = parse_caption_facts(base.text);
  const auto detail_facts = parse_caption_facts(detail.text);
  std::set<std::pair<std::string, Category>> keys;
  for (const auto& f : base_facts) keys.emplace(f.entity, f.category);
  std::vector<Fact> added;
  for (const auto& f : detail_facts) {
    if (keys.emplace(f.entity, f.category).second) added.push_back(f);
  }
  Caption out;
  out.method = base.method;
  if (added.empty()) {
    out.text = base.text;
  } else if (base_facts.empty()) {
    out.text = render_facts(added);
  } else {
    std::string text = base.text;
    while (!text.empty() && (text.back() == '\n' || text.back() == ' ')) text.pop_back();
    out.text = text + "\n" + render_facts(added);
  }
  return out;
}

SimScore sim_score(const FactSet& caption_facts, const Scene& scene) {
  SimScore s;
  s.n_facts = caption_facts.size();
  std::size_t true_facts = 0;
  for (const auto& f : caption_facts) true_facts += scene.contains(f) ? 1 : 0;
  s.precision = caption_facts.empty() ? 0.0 : static_cast<double>(true_facts) / static_cast<double>(caption_facts.size());
  const FactSet targets = scene.vqa_targets();
  s.n_vqa = scene.vqa.size();
  std::size_t answered = 0;
  for (const auto& q : scene.vqa) {
    const Fact* f = scene.find(q.entity, q.category);
    if (f != nullptr && caption_facts.count(*f)) ++answered;
  }
  s.recall = scene.vqa.empty() ? 0.0 : static_cast<double>(answered) / static_cast<double>(scene.vqa.size());
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

JudgeOutcome sim_judge(const Caption& a, const Caption& b, const Scene& scene) {
  const double fa = sim_score(caption_fact_set(a.text), scene).f1;
  const double fb = sim_score(caption_fact_set(b.text), scene).f1;
  if (fa > fb) return JudgeOutcome::kAWins;
  if (fb > fa) return JudgeOutcome::kBWins;
  return JudgeOutcome::kTie;
}

ReflectionNotes sim_organize(const std::vector<IssueReport>& batch, const ReflectionNotes& current, std::size_t k) {
  std::vector<const Issue*> halluc;
  std::vector<const Issue*> missing;
  for (const auto& r : batch) {
    for (const auto& i : r.hallucinations) halluc.push_back(&i);
    for (const auto& i : r.missing_details) missing.push_back(&i);
  }
  ReflectionNotes out;
  out.meta = current.meta;
  out.avoid = organize_list(current.avoid, halluc, DirectiveKind::kAvoid, k);
  out.include = organize_list(current.include, missing, DirectiveKind::kInclude, k);
  return out;
}

SimBackend::SimBackend(BiasProfile profile, std::int64_t image_tokens)
    : profile_(std::move(profile)), image_tokens_(image_tokens) {
  profile_.validate();
}

RawCompletion SimBackend::send(const ModelRequest& request) {
  RawCompletion out;
  out.text = respond(request);
  out.usage = estimate_usage(request, out.text, image_tokens_);
  return out;
}

std::optional<std::string> SimBackend::category_hint(std::string_view directive) const {
  if (auto c = recognize_category(directive)) return std::string(to_string(*c));
  return std::nullopt;
}

std::optional<bool> SimBackend::verify_locally(const ImageRef& image, std::string_view proposition) const {
  const Scene scene = scene_from_image(image);
  try {
    const auto facts = parse_caption_facts(proposition);
    return facts.size() == 1 && scene.contains(facts.front());
  } catch (const ParseError&) {
    return false;
  }
}

std::string SimBackend::respond(const ModelRequest& request) const {
  const std::string system = request.system_text();
  const std::string user = request.last_user_text();
  const std::uint64_t seed = static_cast<std::uint64_t>(request.seed_hint.value_or(0));
  auto scene = [&]() {
    const ImageRef* img = request.image();
    if (img == nullptr) throw ProviderError(ProviderErrorKind::kMalformed, "simworld captioning call without an image");
    try {
      return scene_from_image(*img);
    } catch (const Error& e) {
      throw ProviderError(ProviderErrorKind::kMalformed, e.what());
    }
  };
  auto caption_with = [&](const std::vector<Directive>& directives) {
    return sim_caption(scene(), directives, profile_, seed).text;
  };

  try {
    if (system == prompts::kCaptionerSystem) {
      if (user == prompts::kSelfCorrectRevision) {
        // Revision oracle: identity on the previous caption.
        for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
          if (it->role == ChatRole::kAssistant) return it->text();
        }
      }
      return caption_with({});
    }
    if (system.rfind(prompts::kCombinedSystemPrefix, 0) == 0 &&
        system.find(prompts::kCombinedSystemMiddle) != std::string::npos) {
      auto directives = parse_bullet_block(between(system, prompts::kCombinedSystemPrefix, prompts::kCombinedSystemMiddle),
                                           DirectiveKind::kAvoid);
      const auto mid = system.find(prompts::kCombinedSystemMiddle) + prompts::kCombinedSystemMiddle.size();
      const auto end = system.rfind(prompts::kBaseSystemSuffix);
      const auto include = parse_bullet_block(
          std::string_view(system).substr(mid, end == std::string::npos || end < mid ? std::string::npos : end - mid),
          DirectiveKind::kInclude);
      directives.insert(directives.end(), include.begin(), include.end());
      return caption_with(directives);
    }
    if (system.rfind(prompts::kBaseSystemPrefix, 0) == 0) {
      const auto start = prompts::kBaseSystemPrefix.size();
      const auto end = system.rfind(prompts::kBaseSystemSuffix);
      const auto block = std::string_view(system).substr(start, end == std::string::npos || end < start ? 0 : end - start);
      return caption_with(parse_bullet_block(block, DirectiveKind::kAvoid));
    }
    if (system == prompts::kDetailSystem) {
      return caption_with(parse_bullet_block(between(user, prompts::kDetailUserPrefix, ""), DirectiveKind::kInclude));
    }
    if (system == prompts::kMergeSystem) {
      Caption base{std::string(between(user, prompts::kMergeBaseLabel, prompts::kMergeSecondLabel))};
      Caption detail{std::string(between(user, prompts::kMergeSecondLabel, prompts::kMergeUserTail))};
      return sim_merge(base, detail).text;
    }
    if (system == prompts::kFeedbackSystem) {
      Caption candidate{std::string(between(user, "Generated Caption: ", "\nReference Caption: "))};
      Caption reference{std::string(between(user, "\nReference Caption: ", "\n\nAnalyze the generated caption"))};
      return format_issue_report(sim_feedback(scene(), candidate, reference));
    }
    if (system.rfind("You manage \"Error Notes\"", 0) == 0) {
      static const std::regex kMax(R"(keeping maximum (\d+) items)");
      std::smatch m;
      if (!std::regex_search(system, m, kMax)) {
        throw ProviderError(ProviderErrorKind::kMalformed, "organizer prompt without an item cap");
      }
      const std::size_t k = std::stoul(m[1].str());
      const ReflectionNotes current =
          parse_notes(between(user, "Current Error Notes: ", "\nNew Issues from Batch: "));
      const auto batch = parse_batch_issues(between(user, "\nNew Issues from Batch: ", "\n\nUpdate the Error Notes."));
      return format_notes(sim_organize(batch, current, k));
    }
    if (system == prompts::kDecomposeSystem) {
      std::vector<std::string> lines;
      for (const auto& f : parse_caption_facts(between(user, "Caption:\n", ""))) lines.push_back("- " + render_fact(f));
      return join(lines, "\n");
    }
    if (system == prompts::kVerifySystem) {
      const auto facts = parse_caption_facts(between(user, "Statement: ", ""));
      return facts.size() == 1 && scene().contains(facts.front()) ? "Supported" : "Unsupported";
    }
    if (system == prompts::kRewriteSystem) {
      std::vector<Fact> kept;
      for (const auto& d : parse_bullet_block(between(user, "Verified statements:\n", ""), DirectiveKind::kAvoid)) {
        for (auto& f : parse_caption_facts(d.text)) kept.push_back(std::move(f));
      }
      return render_facts(kept);
    }
  } catch (const ParseError& e) {
    throw ProviderError(ProviderErrorKind::kMalformed, std::string("simworld could not read the prompt: ") + e.what());
  }
  throw ProviderError(ProviderErrorKind::kMalformed, "simworld does not recognize this prompt");
}

}  // namespace reflectcap::sim
