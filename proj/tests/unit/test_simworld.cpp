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

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "reflectcap/error.hpp"
#include "reflectcap/grammar.hpp"
#include "reflectcap/prompts.hpp"
#include "reflectcap/simworld.hpp"
#include "support/fakes.hpp"

namespace reflectcap::sim {
namespace {

using reflectcap::testing::Gen;

Scene fixed_scene() {
  Scene s;
  s.id = "fixture";
  s.facts = {{"car", Category::kColor, "red"},
             {"dog", Category::kCount, "two"},
             {"sky", Category::kLighting, "bright sunlight"},
             {"wall", Category::kBackground, "a brick wall"},
             {"bench", Category::kMaterial, "wood"}};
  for (std::size_t i = 0; i < s.facts.size(); ++i) {
    s.vqa.push_back({"q" + std::to_string(i + 1), s.facts[i].entity, s.facts[i].category});
  }
  return s;
}

TEST(Scene, GenerationIsDeterministicAndValid) {
  const auto a = generate_corpus(3, 20, 10);
  const auto b = generate_corpus(3, 20, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, generate_corpus(4, 20, 10));
  for (const auto& s : a) {
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.facts.size(), 10u);
    EXPECT_EQ(s.vqa.size(), 10u);
    EXPECT_EQ(s.vqa_targets(), s.fact_set());
  }
  EXPECT_EQ(a[0].id, "s3-0000");
  // More facts than the vocabulary times categories forces synthetic entity names.
  EXPECT_NO_THROW(generate_scene(1, 300).validate());
  EXPECT_THROW(generate_scene(1, 0), ValidationError);
}

TEST(Scene, JsonAndImageRoundTrip) {
  for (const auto& s : generate_corpus(9, 10, 6)) {
    EXPECT_EQ(scene_from_json(to_json(s)), s);
    EXPECT_EQ(scene_from_image(scene_image(s)), s);
  }
  EXPECT_THROW(scene_from_json(nlohmann::json{{"id", "x"}}), ParseError);
  EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"id":"x","facts":[]})")), ValidationError);
  EXPECT_THROW(scene_from_image(ImageRef::from_bytes("x", "not json", kSimSceneMediaType)), ParseError);
}

TEST(Scene, ValidateRejectsDuplicates) {
  Scene s = fixed_scene();
  s.facts.push_back({"car", Category::kColor, "blue"});
  EXPECT_THROW(s.validate(), ValidationError);
  Scene t = fixed_scene();
  t.vqa.push_back({"qx", "ghost", Category::kColor});
  EXPECT_THROW(t.validate(), ValidationError);
}

TEST(Caption, RenderParseInverse) {
  Gen g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Scene s = generate_scene(g.raw(), 1 + g.below(20));
    EXPECT_EQ(parse_caption_facts(render_facts(s.facts)), s.facts);
  }
  EXPECT_TRUE(parse_caption_facts(render_facts({})).empty());
  EXPECT_EQ(render_fact({"sign", Category::kTextSign, "reading OPEN"}), "The sign has sign text reading OPEN.");
  EXPECT_THROW(parse_caption_facts("A lovely day at the park."), ParseError);
}

TEST(DecisionUnit, DeterministicUniform) {
  EXPECT_EQ(decision_unit(1, "s", "a", "b", "omit"), decision_unit(1, "s", "a", "b", "omit"));
  EXPECT_NE(decision_unit(1, "s", "a", "b", "omit"), decision_unit(2, "s", "a", "b", "omit"));
  EXPECT_NE(decision_unit(1, "s", "ab", "", "omit"), decision_unit(1, "s", "a", "b", "omit"));
  double sum = 0;
  int below_03 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = decision_unit(7, "scene", std::to_string(i), "x", "h");
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    below_03 += u < 0.3 ? 1 : 0;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
  EXPECT_NEAR(static_cast<double>(below_03) / n, 0.3, 0.015);
}

TEST(SimCaption, UnbiasedModelIsExact) {
  const Scene s = fixed_scene();
  const Caption c = sim_caption(s, {}, BiasProfile{}, 0);
  EXPECT_EQ(parse_caption_facts(c.text), s.facts);
}

TEST(SimCaption, HallucinationReplacesValue) {
  BiasProfile p;
  p.halluc_rate[Category::kColor] = 1.0;
  const Scene s = fixed_scene();
  const auto facts = parse_caption_facts(sim_caption(s, {}, p, 0).text);
  ASSERT_EQ(facts.size(), s.facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) {
    EXPECT_EQ(facts[i].entity, s.facts[i].entity);
    if (facts[i].category == Category::kColor) {
      EXPECT_NE(facts[i].value, "red");
    } else {
      EXPECT_EQ(facts[i], s.facts[i]);
    }
  }
  p.confusion_values[Category::kColor] = {"red", "teal"};
  EXPECT_EQ(parse_caption_facts(sim_caption(s, {}, p, 0).text)[0].value, "teal");
}

TEST(SimCaption, DirectivesSuppressBiasUnderCompliance) {
  BiasProfile p;
  p.halluc_rate[Category::kColor] = 1.0;
  p.omit_rate[Category::kBackground] = 1.0;
  const Scene s = fixed_scene();
  const std::vector<Directive> d = {{DirectiveKind::kAvoid, std::string(avoid_directive(Category::kColor))},
                                    {DirectiveKind::kInclude, std::string(include_directive(Category::kBackground))}};
  EXPECT_EQ(parse_caption_facts(sim_caption(s, d, p, 0).text), s.facts);

  p.compliance = 0.0;
  const auto ignored = caption_fact_set(sim_caption(s, d, p, 0).text);
  EXPECT_FALSE(ignored.count(s.facts[0]));
  EXPECT_FALSE(ignored.count(s.facts[3]));

  // Capacity 1: only the first directive is heeded.
  p.compliance = 1.0;
  p.instruction_capacity = 1;
  const auto capped = caption_fact_set(sim_caption(s, d, p, 0).text);
  EXPECT_TRUE(capped.count(s.facts[0]));
  EXPECT_FALSE(capped.count(s.facts[3]));
}

TEST(SimCaption, OmitRateMatchesFrequency) {
  BiasProfile p;
  p.omit_rate[Category::kLighting] = 0.4;
  std::size_t total = 0;
  std::size_t omitted = 0;
  for (const auto& s : generate_corpus(21, 400, 10)) {
    const auto out = caption_fact_set(sim_caption(s, {}, p, 0).text);
    for (const auto& f : s.facts) {
      if (f.category != Category::kLighting) {
        EXPECT_TRUE(out.count(f));
        continue;
      }
      ++total;
      omitted += out.count(f) ? 0 : 1;
    }
  }
  ASSERT_GT(total, 200u);
  EXPECT_NEAR(static_cast<double>(omitted) / static_cast<double>(total), 0.4, 0.06);
}

TEST(Category, RecognizePicksEarliestKeyword) {
  EXPECT_EQ(recognize_category("Give the count of repeated objects."), Category::kCount);
  EXPECT_EQ(recognize_category("the shadow color"), Category::kLighting);
  EXPECT_EQ(recognize_category("the colour of the shadow"), Category::kColor);
  EXPECT_EQ(recognize_category("nothing relevant"), std::nullopt);
  for (Category c : kAllCategories) {
    EXPECT_EQ(recognize_category(avoid_directive(c)), c) << to_string(c);
    EXPECT_EQ(recognize_category(include_directive(c)), c) << to_string(c);
    EXPECT_EQ(parse_category(to_string(c)), c);
  }
  EXPECT_THROW(parse_category("smell"), ParseError);
}

TEST(SimFeedback, MatchesSetOracle) {
  Gen g(17);
  BiasProfile p;
  for (Category c : kAllCategories) {
    p.halluc_rate[c] = 0.3;
    p.omit_rate[c] = 0.3;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const Scene s = generate_scene(g.raw(), 2 + g.below(12));
    const Caption cand = sim_caption(s, {}, p, g.raw());
    const Caption ref{render_facts(s.facts)};
    const IssueReport r = sim_feedback(s, cand, ref);

    const FactSet cf = caption_fact_set(cand.text);
    std::size_t false_facts = 0;
    for (const auto& f : cf) false_facts += s.contains(f) ? 0 : 1;
    std::size_t missing = 0;
    for (const auto& f : s.facts) missing += cf.count(f) ? 0 : 1;
    EXPECT_EQ(r.hallucinations.size(), false_facts);
    EXPECT_EQ(r.missing_details.size(), missing);
    for (const auto& i : r.hallucinations) {
      ASSERT_TRUE(i.rule.has_value());
      EXPECT_EQ(recognize_category(*i.rule), parse_category(*i.category_hint));
    }
  }
}

TEST(SimMerge, BaseFactsAlwaysSurvive) {
  Gen g(23);
  BiasProfile p;
  for (Category c : kAllCategories) {
    p.halluc_rate[c] = 0.4;
    p.omit_rate[c] = 0.4;
  }
  for (int trial = 0; trial < 500; ++trial) {
    const Scene s = generate_scene(g.raw(), 1 + g.below(12));
    const Caption base = sim_caption(s, {}, p, g.raw());
    const Caption detail = sim_caption(s, {}, p, g.raw());
    const Caption merged = sim_merge(base, detail);
    const auto bf = parse_caption_facts(base.text);
    const auto mf = parse_caption_facts(merged.text);
    const FactSet mset(mf.begin(), mf.end());
    for (const auto& f : bf) EXPECT_TRUE(mset.count(f));
    // One fact per (entity, category); base wins conflicts.
    std::set<std::pair<std::string, Category>> keys;
    for (const auto& f : mf) EXPECT_TRUE(keys.emplace(f.entity, f.category).second);
    for (const auto& f : parse_caption_facts(detail.text)) EXPECT_TRUE(keys.count({f.entity, f.category}));
  }
}

TEST(SimScore, PrecisionRecall) {
  const Scene s = fixed_scene();
  FactSet facts = {s.facts[0], s.facts[1], {"dog", Category::kColor, "blue"}};
  const auto sc = sim_score(facts, s);
  EXPECT_DOUBLE_EQ(sc.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(sc.recall, 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(sim_score({}, s).precision, 0.0);
  EXPECT_EQ(sim_judge(Caption{render_facts(s.facts)}, Caption{render_fact(s.facts[0])}, s), JudgeOutcome::kAWins);
  EXPECT_EQ(sim_judge(Caption{render_fact(s.facts[0])}, Caption{render_facts(s.facts)}, s), JudgeOutcome::kBWins);
  EXPECT_EQ(sim_judge(Caption{render_fact(s.facts[0])}, Caption{render_fact(s.facts[1])}, s), JudgeOutcome::kTie);
}

IssueReport report_with(std::vector<Category> halluc, std::vector<Category> missing) {
  IssueReport r;
  for (Category c : halluc) {
    r.hallucinations.push_back(
        {IssueKind::kHallucination, "x", std::nullopt, std::string(avoid_directive(c)), std::nullopt});
  }
  for (Category c : missing) {
    r.missing_details.push_back(
        {IssueKind::kMissingDetail, "y", std::nullopt, std::string(include_directive(c)), std::nullopt});
  }
  return r;
}

TEST(SimOrganize, RespectsCapAndRanksByFrequency) {
  Gen g(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<IssueReport> batch;
    for (std::size_t i = 0, n = 1 + g.below(10); i < n; ++i) {
      std::vector<Category> h, m;
      for (std::size_t j = 0, c = g.below(6); j < c; ++j) h.push_back(g.category());
      for (std::size_t j = 0, c = g.below(6); j < c; ++j) m.push_back(g.category());
      batch.push_back(report_with(h, m));
    }
    const std::size_t k = 1 + g.below(6);
    const ReflectionNotes n = sim_organize(batch, {}, k);
    EXPECT_LE(n.avoid.size(), k);
    EXPECT_LE(n.include.size(), k);
    EXPECT_TRUE(validate_notes(n, k).empty());
  }
  auto n = sim_organize({report_with({Category::kColor, Category::kCount, Category::kColor}, {})}, {}, 1);
  ASSERT_EQ(n.avoid.size(), 1u);
  EXPECT_EQ(n.avoid[0].text, avoid_directive(Category::kColor));
  EXPECT_TRUE(n.include.empty());
}

TEST(SimOrganize, EmptyBatchIsIdentityOnOrganizedNotes) {
  const auto once = sim_organize({report_with({Category::kColor, Category::kSpatial}, {Category::kBackground})}, {}, 5);
  const auto twice = sim_organize({}, once, 5);
  EXPECT_EQ(twice.avoid, once.avoid);
  EXPECT_EQ(twice.include, once.include);
}

ModelRequest sim_request(std::vector<ChatMessage> messages) {
  ModelRequest r;
  r.messages = std::move(messages);
  r.model_id = "sim-lvlm";
  r.seed_hint = 0;
  return r;
}

TEST(SimBackend, DispatchesOnSystemPrompt) {
  SimBackend backend(BiasProfile{});
  const Scene s = fixed_scene();
  const auto cap = backend.send(sim_request({ChatMessage::system(std::string(prompts::kCaptionerSystem)),
                                             ChatMessage::user("Describe this image in detail.", scene_image(s))}));
  EXPECT_EQ(cap.text, render_facts(s.facts));
  EXPECT_GT(cap.usage.image_tokens, 0);
  EXPECT_EQ(backend.category_hint("Do not infer colors"), "color");
  EXPECT_EQ(backend.verify_locally(scene_image(s), render_fact(s.facts[0])), true);
  EXPECT_EQ(backend.verify_locally(scene_image(s), "The car has color blue."), false);
  EXPECT_EQ(backend.verify_locally(scene_image(s), "gibberish"), false);
}

TEST(SimBackend, MalformedPromptsAreProviderErrors) {
  SimBackend backend(BiasProfile{});
  auto expect_malformed = [&](const ModelRequest& r) {
    try {
      backend.send(r);
      FAIL() << "expected ProviderError";
    } catch (const ProviderError& e) {
      EXPECT_EQ(e.kind(), ProviderErrorKind::kMalformed);
    }
  };
  expect_malformed(sim_request({ChatMessage::system("Unknown role"), ChatMessage::user("hi")}));
  expect_malformed(sim_request({ChatMessage::system(std::string(prompts::kCaptionerSystem)), ChatMessage::user("hi")}));
  expect_malformed(sim_request({ChatMessage::system(std::string(prompts::kCaptionerSystem)),
                                ChatMessage::user("x", ImageRef::from_bytes("i", "junk", kSimSceneMediaType))}));
}

TEST(BiasProfile, JsonRoundTripAndValidation) {
  BiasProfile p;
  p.halluc_rate[Category::kColor] = 0.3;
  p.omit_rate[Category::kLighting] = 0.4;
  p.compliance = 0.9;
  p.instruction_capacity = 5;
  p.confusion_values[Category::kColor] = {"red", "blue"};
  const BiasProfile q = bias_from_json(to_json(p));
  EXPECT_EQ(q.halluc_rate, p.halluc_rate);
  EXPECT_EQ(q.omit_rate, p.omit_rate);
  EXPECT_EQ(q.compliance, p.compliance);
  EXPECT_EQ(q.instruction_capacity, 5u);
  EXPECT_EQ(q.confusion_values, p.confusion_values);
  EXPECT_THROW(bias_from_json(nlohmann::json::parse(R"({"halluc_rate":{"color":1.5}})")), ValidationError);
  EXPECT_THROW(bias_from_json(nlohmann::json::parse(R"({"compliance":-0.1})")), ValidationError);
}

}  // namespace
}  // namespace reflectcap::sim
