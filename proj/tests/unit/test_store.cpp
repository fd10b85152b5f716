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

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "reflectcap/error.hpp"
#include "reflectcap/store.hpp"
#include "support/fakes.hpp"

namespace reflectcap::store {
namespace {

using nlohmann::json;
using reflectcap::testing::TempDir;

ReflectionNotes notes_fixture() {
  ReflectionNotes n;
  n.avoid = {{"Do not infer object colors when they are ambiguous.", "color"}, {"no guessing", std::nullopt}};
  n.include = {{"Describe the background.", "background"}};
  n.meta.target_model = "sim-lvlm";
  n.meta.exemplar_set_digest = std::string(64, 'a');
  n.meta.num_exemplars = 30;
  n.meta.created_at = "2026-01-01T00:00:00Z";
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Notes, SaveLoadRoundTripIsByteStable) {
  TempDir dir;
  const auto n = notes_fixture();
  save_notes(n, dir / "a.json");
  const auto loaded = load_notes(dir / "a.json");
  EXPECT_EQ(loaded, n);
  save_notes(loaded, dir / "b.json");
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  const auto j = read_json_file(dir / "a.json");
  EXPECT_EQ(j["format_version"], kNotesFormatVersion);
  EXPECT_EQ(j["meta"]["K"], 5);
  EXPECT_EQ(j["meta"]["M"], 30);
}

TEST(Notes, RejectsInvalidDocuments) {
  TempDir dir;
  auto n = notes_fixture();
  for (int i = 0; i < 5; ++i) n.avoid.push_back({"extra " + std::to_string(i), std::nullopt});
  ASSERT_EQ(n.avoid.size(), 7u);
  EXPECT_THROW(save_notes(n, dir / "x.json"), ValidationError);
  EXPECT_FALSE(std::filesystem::exists(dir / "x.json"));

  // A hand-edited file with 7 avoid items under K=5 is refused on load.
  write_json_file(dir / "seven.json", notes_to_json(n));
  EXPECT_THROW(load_notes(dir / "seven.json"), ValidationError);

  json j = notes_to_json(notes_fixture());
  j["format_version"] = 99;
  write_json_file(dir / "v99.json", j);
  EXPECT_THROW(load_notes(dir / "v99.json"), ValidationError);
  j = notes_to_json(notes_fixture());
  j["meta"].erase("K");
  EXPECT_THROW(notes_from_json(j), ValidationError);
  EXPECT_THROW(notes_from_json(json::array()), ValidationError);
  EXPECT_THROW(load_notes(dir / "missing.json"), IoError);
  std::ofstream(dir / "junk.json") << "{not json";
  EXPECT_THROW(load_notes(dir / "junk.json"), ParseError);
}

TEST(Ledger, ConcurrentAppendsKeepWholeLines) {
  TempDir dir;
  const auto path = dir / "ledger.jsonl";
  std::vector<std::thread> threads;
  for (int t = 0; t < 10; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 10; ++i) {
        append_ledger(json{{"thread", t}, {"i", i}, {"pad", std::string(500, 'x')}}, path);
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto records = read_ledger(path);
  ASSERT_EQ(records.size(), 100u);
  std::set<std::pair<int, int>> seen;
  for (const auto& r : records) seen.emplace(r["thread"].get<int>(), r["i"].get<int>());
  EXPECT_EQ(seen.size(), 100u);
}

TEST(Ledger, TornTailIsIgnoredButCorruptionIsNot) {
  TempDir dir;
  const auto path = dir / "ledger.jsonl";
  append_ledger(json{{"a", 1}}, path);
  append_ledger(json{{"a", 2}}, path);
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"a\": 3, \"trunc";
  }
  EXPECT_EQ(read_ledger(path).size(), 2u);

  std::ofstream(dir / "bad.jsonl") << "{\"a\":1}\ngarbage\n{\"a\":2}\n";
  EXPECT_THROW(read_ledger(dir / "bad.jsonl"), ParseError);
  EXPECT_TRUE(read_ledger(dir / "absent.jsonl").empty());
}

TEST(Ledger, EmptyBatchWritesNothing) {
  TempDir dir;
  append_ledger(std::span<const json>{}, dir / "none.jsonl");
  EXPECT_FALSE(std::filesystem::exists(dir / "none.jsonl"));
  const std::vector<json> two = {json{{"x", 1}}, json{{"x", 2}}};
  append_ledger(std::span<const json>(two), dir / "two.jsonl");
  EXPECT_EQ(slurp(dir / "two.jsonl"), "{\"x\":1}\n{\"x\":2}\n");
}

TEST(Manifest, ResolvesPathsAndIds) {
  TempDir dir;
  std::filesystem::create_directories(dir / "imgs");
  std::ofstream(dir / "imgs" / "cat.png") << "png";
  std::ofstream(dir / "m.jsonl") << "{\"image\":\"imgs/cat.png\",\"reference\":\"A cat.\"}\n"
                                    "{\"id\":\"x\",\"image\":\"corpus.jsonl#s1-0002\"}\n"
                                    "{\"image\":\"corpus.jsonl#s1-0003\"}\n";
  const auto m = read_manifest(dir / "m.jsonl");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].image.id, "cat");
  EXPECT_EQ(m[0].reference, "A cat.");
  EXPECT_EQ(m[0].image.media_type, "image/png");
  EXPECT_EQ(load_image_bytes(m[0].image), "png");
  EXPECT_EQ(m[1].image.id, "x");
  EXPECT_EQ(m[2].image.id, "s1-0003");
  EXPECT_EQ(m[2].image.media_type, kSimSceneMediaType);

  write_manifest(m, dir / "copy.jsonl");
  const auto again = read_manifest(dir / "copy.jsonl");
  ASSERT_EQ(again.size(), 3u);
  EXPECT_EQ(again[0].image.id, "cat");
  EXPECT_EQ(again[0].reference, "A cat.");

  std::ofstream(dir / "bad.jsonl") << "{\"reference\":\"no image\"}\n";
  EXPECT_THROW(read_manifest(dir / "bad.jsonl"), ParseError);
  EXPECT_THROW(read_manifest(dir / "absent.jsonl"), IoError);
  EXPECT_THROW(write_manifest({{ImageRef::from_bytes("b", "x", "image/png"), ""}}, dir / "w.jsonl"), ValidationError);
}

TEST(Corpus, RoundTrip) {
  TempDir dir;
  const auto scenes = sim::generate_corpus(5, 12, 7);
  write_corpus(scenes, dir / "c.jsonl");
  EXPECT_EQ(read_corpus(dir / "c.jsonl"), scenes);
  EXPECT_THROW(read_corpus(dir / "none.jsonl"), IoError);
}

TEST(Results, RecordRoundTrip) {
  TempDir dir;
  ResultRecord r;
  r.image_id = "img";
  r.method = MethodId::kReflectcapFull;
  r.captions = {{"final", "F"}, {"base", "B"}, {"detail", "D"}};
  r.calls = {{"call-1", {10, 256, 5, "img"}}, {"call-2", {3, 0, 1, ""}}};
  r.seed = 4;
  r.model_id = "m";
  r.flags = {"f"};
  ResultRecord e;
  e.image_id = "bad";
  e.status = "error";
  e.error = "boom";
  const json j = to_json(r);
  EXPECT_EQ(j["usage"]["prompt_text_tokens"], 13);
  EXPECT_EQ(j["call_ids"], json({"call-1", "call-2"}));
  append_ledger(j, dir / "r.jsonl");
  append_ledger(to_json(e), dir / "r.jsonl");
  const auto back = read_results(dir / "r.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].captions, r.captions);
  EXPECT_EQ(back[0].calls, r.calls);
  EXPECT_EQ(back[0].method, r.method);
  EXPECT_EQ(back[0].flags, r.flags);
  EXPECT_EQ(back[0].final_caption(), "F");
  EXPECT_EQ(back[1].status, "error");
  EXPECT_EQ(back[1].final_caption(), "");
  EXPECT_THROW(result_from_json(json{{"image_id", "x"}, {"method", "bogus"}}), ParseError);
  EXPECT_THROW(result_from_json(json{{"method", "zero_shot"}}), ParseError);
}

}  // namespace
}  // namespace reflectcap::store
