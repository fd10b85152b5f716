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

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reflectcap/core.hpp"
#include "reflectcap/provider.hpp"

// Synthetic world: scenes are ground-truth fact sets and a simulated captioner renders
// them through a bias profile. Every caption line is a canonical sentence, so captions
// can be inverted exactly and every metric has a set-arithmetic oracle.
namespace reflectcap::sim {

enum class Category { kCount, kColor, kSpatial, kTextSign, kLighting, kMaterial, kBackground, kObjectPresence };

inline constexpr Category kAllCategories[] = {
    Category::kCount,    Category::kColor,    Category::kSpatial,    Category::kTextSign,
    Category::kLighting, Category::kMaterial, Category::kBackground, Category::kObjectPresence,
};

std::string_view to_string(Category c);
// Throws ParseError for an unknown tag.
Category parse_category(std::string_view tag);

// Default value vocabulary of a category (also the default confusion list).
const std::vector<std::string>& category_values(Category c);

struct Fact {
  std::string entity;
  Category category = Category::kObjectPresence;
  std::string value;

  auto operator<=>(const Fact&) const = default;
  bool operator==(const Fact&) const = default;
};

using FactSet = std::set<Fact>;

struct VqaItem {
  std::string qid;
  std::string entity;
  Category category = Category::kObjectPresence;
  bool operator==(const VqaItem&) const = default;
};

struct Scene {
  std::string id;
  std::vector<Fact> facts;
  std::vector<VqaItem> vqa;

  // Throws ValidationError on an empty fact list, a duplicate (entity, category), or a
  // vqa item without a matching fact.
  void validate() const;
  const Fact* find(std::string_view entity, Category c) const;
  bool contains(const Fact& f) const;
  FactSet fact_set() const;
  // Ground-truth facts targeted by the vqa items.
  FactSet vqa_targets() const;

  bool operator==(const Scene&) const = default;
};

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

Scene generate_scene(std::uint64_t seed, std::size_t n_facts);
std::vector<Scene> generate_corpus(std::uint64_t seed, std::size_t n_scenes, std::size_t n_facts);

// The image standing in for a scene: its canonical JSON line, inline.
ImageRef scene_image(const Scene& scene);
// Inverse of scene_image; also accepts "corpus.jsonl#id" path references.
Scene scene_from_image(const ImageRef& image);

struct BiasProfile {
  std::map<Category, double> halluc_rate;
  std::map<Category, double> omit_rate;
  double compliance = 1.0;
  std::size_t instruction_capacity = std::numeric_limits<std::size_t>::max();
  std::map<Category, std::vector<std::string>> confusion_values;  // defaults to category_values

  double halluc(Category c) const;
  double omit(Category c) const;
  // Throws ValidationError when a rate leaves [0, 1].
  void validate() const;
};

nlohmann::json to_json(const BiasProfile& profile);
BiasProfile bias_from_json(const nlohmann::json& j);

enum class DirectiveKind { kAvoid, kInclude };

struct Directive {
  DirectiveKind kind = DirectiveKind::kAvoid;
  std::string text;
};

// Category named by a note or rule text, matched on keyword lists; nullopt when none match.
// The earliest keyword in the text wins.
std::optional<Category> recognize_category(std::string_view text);

// Canonical directive texts the organizer oracle writes for a category.
std::string_view avoid_directive(Category c);
std::string_view include_directive(Category c);

// One sentence per fact: "The {entity} has {aspect} {value}."; an empty list renders as
// the fixed empty-caption line.
std::string render_facts(const std::vector<Fact>& facts);
std::string render_fact(const Fact& f);
// Exact inverse of render_facts. Throws ParseError naming the first non-canonical line.
std::vector<Fact> parse_caption_facts(std::string_view text);
FactSet caption_fact_set(std::string_view text);

// Uniform [0, 1) draw keyed by the full decision identity, so changing one rate or one
// directive never perturbs any other decision.
double decision_unit(std::uint64_t seed, std::string_view scene_id, std::string_view a, std::string_view b,
                     std::string_view kind);

Caption sim_caption(const Scene& scene, const std::vector<Directive>& directives, const BiasProfile& profile,
                    std::uint64_t seed);

IssueReport sim_feedback(const Scene& scene, const Caption& candidate, const Caption& reference);

// Base lines verbatim and first, then detail facts on (entity, category) pairs the base
// does not mention.
Caption sim_merge(const Caption& base, const Caption& detail);

enum class JudgeOutcome { kAWins, kBWins, kTie };

struct SimScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_facts = 0;
  std::size_t n_vqa = 0;
};

// Exact precision over caption facts and recall over vqa targets; precision is 0 for an
// empty caption.
SimScore sim_score(const FactSet& caption_facts, const Scene& scene);

JudgeOutcome sim_judge(const Caption& a, const Caption& b, const Scene& scene);

// Note organizer oracle: per list, categories ranked by how many batch issues name them;
// ties favor items already in the notes (in their current order), then category order.
// One directive per category, at most k per list. Folding the same batch twice is a no-op.
ReflectionNotes sim_organize(const std::vector<IssueReport>& batch, const ReflectionNotes& current, std::size_t k);

// Backend that recognizes the agent prompts and answers each role from the scene carried
// by the attached image. Usage is estimated at one token per word plus a fixed image cost.
class SimBackend final : public Backend {
 public:
  explicit SimBackend(BiasProfile profile, std::int64_t image_tokens = 256);

  RawCompletion send(const ModelRequest& request) override;
  std::optional<std::string> category_hint(std::string_view directive) const override;
  std::optional<bool> verify_locally(const ImageRef& image, std::string_view proposition) const override;

  const BiasProfile& profile() const { return profile_; }

 private:
  std::string respond(const ModelRequest& request) const;

  BiasProfile profile_;
  std::int64_t image_tokens_;
};

}  // namespace reflectcap::sim
