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

#include <cmath>
#include <set>

#include "reflectcap/error.hpp"
#include "reflectcap/online.hpp"
#include "reflectcap/prompts.hpp"
#include "reflectcap/simworld.hpp"
#include "support/fakes.hpp"

namespace reflectcap::online {
namespace {

using reflectcap::testing::Gen;
using reflectcap::testing::ScriptedBackend;
using sim::Category;

ImageRef png(const std::string& id) { return ImageRef::from_bytes(id, "px-" + id, "image/png"); }

ReflectionNotes sample_notes() {
  ReflectionNotes n;
  n.avoid = {{std::string(sim::avoid_directive(Category::kColor)), std::nullopt},
             {std::string(sim::avoid_directive(Category::kCount)), std::nullopt}};
  n.include = {{std::string(sim::include_directive(Category::kBackground)), std::nullopt},
               {std::string(sim::include_directive(Category::kLighting)), std::nullopt}};
  return n;
}

ExemplarSet pool_of(std::size_t n) {
  std::vector<Exemplar> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({png("p" + std::to_string(i)), "reference caption " + std::to_string(i)});
  return ExemplarSet(std::move(v));
}

sim::BiasProfile biased(double compliance = 1.0) {
  sim::BiasProfile b;
  b.halluc_rate = {{Category::kColor, 0.3}, {Category::kCount, 0.3}, {Category::kSpatial, 0.3}};
  b.omit_rate = {{Category::kBackground, 0.4}, {Category::kLighting, 0.4}, {Category::kMaterial, 0.4}};
  b.compliance = compliance;
  return b;
}

std::shared_ptr<ScriptedBackend> echo_backend() {
  return std::make_shared<ScriptedBackend>([](const ModelRequest& r, std::size_t i) -> std::string {
    if (r.system_text() == prompts::kDecomposeSystem) return "- fact one\n- fact two\n- fact three";
    if (r.system_text() == prompts::kVerifySystem) {
      return r.last_user_text().find("two") != std::string::npos ? "Unsupported." : "Supported";
    }
    return "caption " + std::to_string(i);
  });
}

TEST(Generate, CallCountsPerMethod) {
  auto backend = echo_backend();
  auto p = testing::make_provider(backend);
  const Bindings b = testing::bind_all(p);
  auto count = [&](MethodId m) {
    const std::size_t before = backend->calls();
    GenerationRequest req;
    req.image = png("img");
    req.method = m;
    req.notes = sample_notes();
    req.exemplar_pool = pool_of(5);
    const auto result = generate(req, b);
    EXPECT_EQ(result.final_caption().calls.size(), backend->calls() - before) << to_string(m);
    return backend->calls() - before;
  };
  EXPECT_EQ(count(MethodId::kZeroShot), 1u);
  EXPECT_EQ(count(MethodId::kFewShot), 1u);
  EXPECT_EQ(count(MethodId::kSelfCorrection), 2u);
  EXPECT_EQ(count(MethodId::kReflectcapBase), 1u);
  EXPECT_EQ(count(MethodId::kReflectcapFull), 3u);
  EXPECT_EQ(count(MethodId::kCombinedNotes), 1u);
  // Caption, decompose, one verify per proposition, rewrite.
  EXPECT_EQ(count(MethodId::kCapmasLite), 3u + 3u);
}

TEST(Generate, MissingInputsAreUsageErrors) {
  auto p = testing::make_provider(echo_backend());
  const Bindings b = testing::bind_all(p);
  GenerationRequest req;
  req.image = png("img");
  for (MethodId m : {MethodId::kReflectcapFull, MethodId::kCombinedNotes, MethodId::kReflectcapBase}) {
    req.method = m;
    EXPECT_THROW(generate(req, b), UsageError) << to_string(m);
  }
  req.method = MethodId::kFewShot;
  EXPECT_THROW(generate(req, b), UsageError);
  req.exemplar_pool = pool_of(2);
  EXPECT_THROW(generate(req, b), UsageError);
  req.exemplar_pool = pool_of(3);
  EXPECT_NO_THROW(generate(req, b));
}

TEST(ReflectCap, PromptsCarryNotesAndRoles) {
  auto cap = echo_backend();
  auto det = echo_backend();
  auto mer = echo_backend();
  Bindings b;
  b.bind(Role::kCaptioner, testing::make_provider(cap, "cap"));
  b.bind(Role::kDetailer, testing::make_provider(det, "det"));
  b.bind(Role::kMerger, testing::make_provider(mer, "mer"));
  const auto r = caption_reflectcap(png("img"), sample_notes(), b, 0);
  ASSERT_EQ(cap->calls(), 1u);
  ASSERT_EQ(det->calls(), 1u);
  ASSERT_EQ(mer->calls(), 1u);
  const auto base_sys = cap->requests()[0].system_text();
  EXPECT_EQ(base_sys.rfind(prompts::kBaseSystemPrefix, 0), 0u);
  EXPECT_NE(base_sys.find("- Do not infer object colors"), std::string::npos);
  EXPECT_EQ(base_sys.find("background"), std::string::npos);
  EXPECT_NE(det->requests()[0].last_user_text().find("- Describe the background"), std::string::npos);
  EXPECT_EQ(det->requests()[0].last_user_text().find("colors"), std::string::npos);
  const auto merge_user = mer->requests()[0].last_user_text();
  EXPECT_NE(merge_user.find("Base caption: caption 0\nSecond caption: caption 0"), std::string::npos);
  EXPECT_NE(mer->requests()[0].image(), nullptr);
  EXPECT_EQ(r.captions.at("base").text, "caption 0");
  EXPECT_EQ(r.captions.at("detail").text, "caption 0");
  EXPECT_EQ(r.final_caption().text, "caption 0");
}

TEST(FewShot, TextOnlyDemosFromThePool) {
  auto backend = echo_backend();
  auto p = testing::make_provider(backend);
  const auto pool = pool_of(10);
  caption_few_shot(png("img"), pool, *p, 4);
  const auto req = backend->requests()[0];
  const std::string user = req.last_user_text();
  EXPECT_EQ(user.rfind(prompts::kFewShotPreamble, 0), 0u);
  EXPECT_NE(user.find("\n\nExample 3:\nreference caption "), std::string::npos);
  EXPECT_EQ(user.find("Example 4:"), std::string::npos);
  EXPECT_NE(user.find("\n\nDescribe this image in detail."), std::string::npos);
  ASSERT_NE(req.image(), nullptr);
  EXPECT_EQ(req.image()->id, "img");
}

TEST(Sampling, DeterministicDistinctAndUniform) {
  EXPECT_EQ(sample_without_replacement(10, 3, 5), sample_without_replacement(10, 3, 5));
  EXPECT_THROW(sample_without_replacement(2, 3, 0), UsageError);
  auto all = sample_without_replacement(3, 3, 9);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2}));

  std::vector<int> freq(10, 0);
  for (std::int64_t seed = 0; seed < 1000; ++seed) {
    const auto s = sample_without_replacement(10, 3, seed);
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 3u);
    for (auto i : s) ++freq[i];
  }
  // Each index is drawn with probability 3/10: mean 300, sigma ~14.5.
  for (int f : freq) EXPECT_NEAR(f, 300, 43.5);
}

TEST(Propositions, Parsing) {
  EXPECT_EQ(parse_propositions("- a  b\n* c\n\nd\n- "), (std::vector<std::string>{"a b", "c", "d"}));
  EXPECT_TRUE(parse_propositions("").empty());
}

TEST(Capmas, ScriptedVerification) {
  auto p = testing::make_provider(echo_backend());
  const auto r = caption_capmas_lite(png("img"), *p, *p, 0);
  EXPECT_EQ(r.captions.at("draft").text, "caption 0");
  // Rewrite call gets the supported propositions only.
  EXPECT_EQ(r.final_caption().text, "caption 5");

  auto none = std::make_shared<ScriptedBackend>([](const ModelRequest& r, std::size_t) -> std::string {
    if (r.system_text() == prompts::kDecomposeSystem) return "- x";
    if (r.system_text() == prompts::kVerifySystem) return "unsupported";
    return "draft";
  });
  auto q = testing::make_provider(none);
  const auto removed = caption_capmas_lite(png("img"), *q, *q, 0);
  EXPECT_EQ(removed.final_caption().text, prompts::kEmptyCaption);
  EXPECT_EQ(removed.final_caption().flags, (std::vector<std::string>{"all_propositions_removed"}));
  EXPECT_EQ(none->calls(), 3u);

  auto empty = std::make_shared<ScriptedBackend>([](const ModelRequest& r, std::size_t) -> std::string {
    return r.system_text() == prompts::kDecomposeSystem ? "" : "draft";
  });
  auto e = testing::make_provider(empty);
  EXPECT_EQ(caption_capmas_lite(png("img"), *e, *e, 0).final_caption().flags,
            (std::vector<std::string>{"no_propositions"}));
}

class SimOnline : public ::testing::Test {
 protected:
  Bindings bindings(const sim::BiasProfile& bias) { return testing::bind_all(testing::sim_provider(bias)); }
  std::vector<sim::Scene> scenes = sim::generate_corpus(77, 150, 10);
};

TEST_F(SimOnline, SelfCorrectionIsIdentity) {
  const auto b = bindings(biased());
  for (std::size_t i = 0; i < 30; ++i) {
    const auto r = caption_self_correct(sim::scene_image(scenes[i]), b.at(Role::kCaptioner), 3);
    EXPECT_EQ(r.final_caption().text, r.captions.at("draft").text);
  }
}

TEST_F(SimOnline, CapmasKeepsOnlyTrueDraftFacts) {
  const auto b = bindings(biased());
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& s = scenes[i];
    const auto r = caption_capmas_lite(sim::scene_image(s), b.at(Role::kCaptioner), b.at(Role::kJudge), 0);
    EXPECT_EQ(r.final_caption().calls.size(), 2u);
    const auto draft = sim::caption_fact_set(r.captions.at("draft").text);
    const auto final = sim::caption_fact_set(r.final_caption().text);
    for (const auto& f : final) {
      EXPECT_TRUE(draft.count(f));
      EXPECT_TRUE(s.contains(f));
    }
    for (const auto& f : draft) {
      if (s.contains(f)) EXPECT_TRUE(final.count(f));
    }
  }
}

TEST_F(SimOnline, BaseFactsSurviveMergeAndWinConflicts) {
  sim::BiasProfile noisy;
  for (Category c : sim::kAllCategories) {
    noisy.halluc_rate[c] = 0.3;
    noisy.omit_rate[c] = 0.3;
  }
  const auto b = bindings(noisy);
  Gen g(5);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto seed = static_cast<std::int64_t>(g.below(1000));
    const auto r = caption_reflectcap(sim::scene_image(scenes[i]), sample_notes(), b, seed);
    const auto base = sim::parse_caption_facts(r.captions.at("base").text);
    const auto final = sim::caption_fact_set(r.final_caption().text);
    for (const auto& f : base) EXPECT_TRUE(final.count(f));
    std::set<std::pair<std::string, Category>> keys;
    for (const auto& f : final) EXPECT_TRUE(keys.emplace(f.entity, f.category).second);
  }
}

TEST_F(SimOnline, CombinedMatchesFullUnderUnlimitedCapacity) {
  const auto b = bindings(biased());
  for (std::size_t i = 0; i < 60; ++i) {
    const auto img = sim::scene_image(scenes[i]);
    const auto full = caption_reflectcap(img, sample_notes(), b, 1);
    const auto combined = caption_combined(img, sample_notes(), b.at(Role::kCaptioner), 1);
    EXPECT_EQ(sim::caption_fact_set(full.final_caption().text), sim::caption_fact_set(combined.text));
  }
}

TEST_F(SimOnline, NonCompliantModelIgnoresNotes) {
  const auto b = bindings(biased(0.0));
  for (std::size_t i = 0; i < 40; ++i) {
    const auto img = sim::scene_image(scenes[i]);
    EXPECT_EQ(caption_reflectcap_base(img, sample_notes(), b.at(Role::kCaptioner), 2).text,
              caption_zero_shot(img, b.at(Role::kCaptioner), 2).text);
  }
}

TEST_F(SimOnline, EmptyNotesReduceFullToBase) {
  const auto b = bindings(biased());
  for (std::size_t i = 0; i < 40; ++i) {
    const auto img = sim::scene_image(scenes[i]);
    const auto r = caption_reflectcap(img, ReflectionNotes{}, b, 0);
    EXPECT_EQ(r.final_caption().text, r.captions.at("base").text);
    EXPECT_EQ(r.captions.at("base").text, caption_zero_shot(img, b.at(Role::kCaptioner), 0).text);
  }
}

TEST_F(SimOnline, NotesImproveOverZeroShot) {
  const auto b = bindings(biased());
  double zs = 0;
  double full = 0;
  for (const auto& s : scenes) {
    const auto img = sim::scene_image(s);
    zs += sim::sim_score(sim::caption_fact_set(caption_zero_shot(img, b.at(Role::kCaptioner), 0).text), s).f1;
    full += sim::sim_score(sim::caption_fact_set(caption_reflectcap(img, sample_notes(), b, 0).final_caption().text), s).f1;
  }
  EXPECT_GT(full, zs);
}

TEST(Batch, RecordsErrorsAndKeepsOrder) {
  auto backend = std::make_shared<ScriptedBackend>([](const ModelRequest& r, std::size_t) -> std::string {
    if (r.image()->id == "bad") throw ProviderError(ProviderErrorKind::kHttpStatus, "HTTP 400", 1, 400);
    return "caption for " + r.image()->id;
  });
  auto p = testing::make_provider(backend);
  BatchOptions opt;
  opt.concurrency = 3;
  const auto out = caption_batch({png("a"), png("bad"), png("c"), png("d")}, opt, testing::bind_all(p));
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].final_caption(), "caption for a");
  EXPECT_EQ(out[1].status, "error");
  EXPECT_NE(out[1].error.find("HTTP 400"), std::string::npos);
  EXPECT_EQ(out[3].image_id, "d");
  EXPECT_EQ(out[2].model_id, "test-model");
  EXPECT_EQ(out[2].calls.size(), 1u);

  opt.method = MethodId::kReflectcapFull;
  EXPECT_THROW(caption_batch({png("a")}, opt, testing::bind_all(p)), UsageError);
}

}  // namespace
}  // namespace reflectcap::online
