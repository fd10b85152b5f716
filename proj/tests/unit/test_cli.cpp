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

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "reflectcap/cli.hpp"
#include "reflectcap/store.hpp"
#include "support/fakes.hpp"

namespace reflectcap {
namespace {

using nlohmann::json;
using reflectcap::testing::TempDir;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "reflectcap");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

// Corpus + manifest under dir, returns the manifest path.
std::string make_corpus(const TempDir& dir, const std::string& name, int seed, int scenes, int facts) {
  const auto corpus = (dir / (name + ".jsonl")).string();
  const auto manifest = (dir / (name + ".manifest.jsonl")).string();
  const auto r = cli({"simgen", "--seed", std::to_string(seed), "--scenes", std::to_string(scenes), "--facts",
                      std::to_string(facts), "--out", corpus, "--manifest", manifest});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  return manifest;
}

std::string write_config(const TempDir& dir, const json& j) {
  const auto path = (dir / "config.json").string();
  std::ofstream(path) << j.dump(2);
  return path;
}

TEST(Cli, SimgenIsDeterministicAndParsesBack) {
  TempDir dir;
  ASSERT_EQ(cli({"simgen", "--seed", "5", "--scenes", "100", "--facts", "10", "--out", (dir / "a.jsonl").string()}).code,
            kExitOk);
  ASSERT_EQ(cli({"simgen", "--seed", "5", "--scenes", "100", "--facts", "10", "--out", (dir / "b.jsonl").string()}).code,
            kExitOk);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  const auto scenes = store::read_corpus(dir / "a.jsonl");
  ASSERT_EQ(scenes.size(), 100u);
  for (const auto& s : scenes) EXPECT_EQ(s.facts.size(), 10u);

  const auto manifest = make_corpus(dir, "one", 1, 1, 1);
  const auto entries = store::read_manifest(manifest);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(count_lines(entries[0].reference), 0u);
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir dir;
  const auto cache = (dir / "cache").string();
  std::ofstream(dir / "empty.jsonl") << "";
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"simgen", "--scenes", "0", "--facts", "1", "--out", "x"}).code, kExitUsage);
  EXPECT_EQ(cli({"distill", "--exemplars", (dir / "empty.jsonl").string(), "--out", (dir / "n.json").string(),
                 "--cache-root", cache})
                .code,
            kExitUsage);

  const auto manifest = make_corpus(dir, "c", 2, 3, 4);
  EXPECT_EQ(cli({"caption", "--images", manifest, "--method", "reflectcap_full", "--out", (dir / "r.jsonl").string(),
                 "--cache-root", cache})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"caption", "--images", manifest, "--method", "nope", "--out", (dir / "r.jsonl").string(),
                 "--cache-root", cache})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"ablate", "--sweep", "temperature:1,2", "--exemplars", manifest, "--images", manifest, "--out",
                 (dir / "s.csv").string(), "--cache-root", cache})
                .code,
            kExitUsage);
  EXPECT_EQ(cli({"eval", "--results", (dir / "r.jsonl").string(), "--out", (dir / "e.json").string()}).code,
            kExitUsage);

  const auto keyed = write_config(dir, json{{"providers", {{"sim", {{"api_key", "sk-123"}}}}}});
  const auto r = cli({"distill", "--config", keyed, "--exemplars", manifest, "--out", (dir / "n.json").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("api_key_env"), std::string::npos);

  ::unsetenv("REFLECTCAP_TEST_UNSET_KEY");
  json remote = {{"providers",
                  {{"remote",
                    {{"kind", "openai"},
                     {"base_url", "http://127.0.0.1:1"},
                     {"model", "m"},
                     {"api_key_env", "REFLECTCAP_TEST_UNSET_KEY"}}}}},
                 {"roles", {{"captioner", "remote"}}}};
  const auto unset = write_config(dir, remote);
  EXPECT_EQ(cli({"caption", "--config", unset, "--images", manifest, "--method", "zero_shot", "--out",
                 (dir / "r.jsonl").string(), "--cache-root", cache})
                .code,
            kExitUsage);
}

TEST(Cli, DistillHonorsK) {
  TempDir dir;
  const auto cache = (dir / "cache").string();
  const auto manifest = make_corpus(dir, "ex", 3, 30, 10);
  const auto notes_path = (dir / "notes.json").string();
  const auto r = cli({"distill", "--exemplars", manifest, "--out", notes_path, "--cache-root", cache, "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("distilled M=30 K=5 B=10: 3 organizer calls"), std::string::npos) << r.out;
  const auto notes = store::load_notes(notes_path);
  EXPECT_LE(notes.avoid.size(), 5u);
  EXPECT_LE(notes.include.size(), 5u);
  EXPECT_FALSE(notes.avoid.empty());
  EXPECT_TRUE(std::filesystem::exists(notes_path + ".ledger.jsonl"));

  const auto k1 = (dir / "k1.json").string();
  ASSERT_EQ(cli({"distill", "--exemplars", manifest, "--out", k1, "--k", "1", "--cache-root", cache, "-q"}).code,
            kExitOk);
  const auto one = store::load_notes(k1);
  EXPECT_LE(one.avoid.size(), 1u);
  EXPECT_LE(one.include.size(), 1u);
  EXPECT_EQ(one.meta.max_items, 1u);
}

TEST(Cli, CaptionCachesAndEvalIsStable) {
  TempDir dir;
  const auto cache = (dir / "cache").string();
  const auto manifest = make_corpus(dir, "held", 4, 10, 8);
  const auto results = (dir / "r.jsonl").string();
  const auto config = write_config(dir, json{{"providers", {{"sim", {{"bias", json::object()}}}}}});

  auto r = cli({"caption", "--config", config, "--images", manifest, "--method", "zero_shot", "--out", results,
                "--cache-root", cache, "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(count_lines(slurp(results)), 10u);
  EXPECT_NE(r.out.find("provider requests: 10 (network calls: 10, cache hits: 0)"), std::string::npos) << r.out;
  const std::string first = slurp(results);

  r = cli({"caption", "--config", config, "--images", manifest, "--method", "zero_shot", "--out", results,
           "--cache-root", cache, "-q"});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("network calls: 0"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(results), first);

  const auto report = (dir / "e.json").string();
  r = cli({"eval", "--results", results, "--scenes", (dir / "held.jsonl").string(), "--out", report, "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = store::read_json_file(report);
  EXPECT_DOUBLE_EQ(j["f1"].get<double>(), 1.0);
  const std::string bytes = slurp(report);
  ASSERT_EQ(cli({"eval", "--results", results, "--scenes", (dir / "held.jsonl").string(), "--out", report, "-q"}).code,
            kExitOk);
  EXPECT_EQ(slurp(report), bytes);
}

TEST(Cli, ArenaCostAndAblate) {
  TempDir dir;
  const auto cache = (dir / "cache").string();
  const auto ex = make_corpus(dir, "ex", 5, 12, 8);
  const auto held = make_corpus(dir, "held", 6, 6, 8);
  const auto zs = (dir / "zs.jsonl").string();
  ASSERT_EQ(cli({"caption", "--images", held, "--method", "zero_shot", "--out", zs, "--cache-root", cache, "-q"}).code,
            kExitOk);
  std::vector<std::string> refs;
  for (const char* name : {"ref_a", "ref_b", "ref_c"}) {
    const auto p = (dir / (std::string(name) + ".jsonl")).string();
    std::filesystem::copy_file(zs, p);
    refs.push_back(p);
  }
  const auto arena = (dir / "arena.json").string();
  auto r = cli({"arena", "--candidates", zs, "--references", refs[0] + "," + refs[1] + "," + refs[2], "--scenes",
                (dir / "held.jsonl").string(), "--out", arena, "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_DOUBLE_EQ(store::read_json_file(arena)["margin"].get<double>(), 0.0);
  EXPECT_NE(r.out.find("margin: 0.0"), std::string::npos);

  const auto cost = (dir / "cost.json").string();
  r = cli({"cost", "--results", zs, "--out", cost, "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto table = store::read_json_file(cost)["methods"];
  ASSERT_TRUE(table.is_array());
  ASSERT_EQ(table.size(), 1u);
  EXPECT_GT(table[0]["mean_tflops"].get<double>(), 0.0);

  std::ofstream(dir / "params.json") << "{\"other\": 5}";
  r = cli({"cost", "--config", write_config(dir, json{{"model_params", json::object()}}), "--results", zs,
           "--params-table", (dir / "params.json").string(), "--out", cost, "-q"});
  EXPECT_EQ(r.code, kExitOk);

  const auto csv = (dir / "sweep.csv").string();
  r = cli({"ablate", "--sweep", "k_items:3", "--exemplars", ex, "--images", held, "--out", csv, "--cache-root", cache,
           "-q"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string text = slurp(csv);
  EXPECT_EQ(count_lines(text), 2u);
  EXPECT_EQ(text.rfind("axis,value,method,precision,recall,f1,tflops,seed\nk_items,3,reflectcap_full,", 0), 0u) << text;
}

}  // namespace
}  // namespace reflectcap
