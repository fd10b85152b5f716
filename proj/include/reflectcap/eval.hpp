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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reflectcap/core.hpp"
#include "reflectcap/provider.hpp"
#include "reflectcap/simworld.hpp"
#include "reflectcap/store.hpp"

namespace reflectcap::eval {

// Harmonic mean; 0 when P+R=0. Throws ValidationError outside [0, 1].
double f1(double precision, double recall);

enum class Verdict { kSupported, kUnsupported, kUnknown };
std::string_view to_string(Verdict v);

struct Proposition {
  std::string text;
  Verdict verdict = Verdict::kUnknown;
};

struct Factuality {
  double precision = 0.0;
  std::vector<Proposition> propositions;
  std::size_t n_unknown = 0;
};

struct Coverage {
  double recall = 0.0;
  std::size_t n_vqa = 0;
  std::size_t n_answered = 0;
  std::size_t n_unanswered = 0;  // judge failures, counted incorrect
};

// Judge prompts for real-model evaluation. Defaults are built in; a directory of
// "<name>.txt" files overrides any subset.
struct EvalPrompts {
  std::string decompose_system;
  std::string decompose_user;   // {caption}
  std::string verify_system;
  std::string verify_user;      // {ground_truth} {proposition}
  std::string vqa_system;
  std::string vqa_user;         // {caption} {question}
  std::string arena_system;
  std::string arena_user;       // {caption_a} {caption_b}

  static EvalPrompts defaults();
  static EvalPrompts load(const std::filesystem::path& dir);
  void write(const std::filesystem::path& dir) const;
};

// Exact set arithmetic over canonical caption lines. An empty caption scores 0 with no
// propositions.
Factuality factuality_sim(std::string_view caption, const sim::Scene& scene);
Coverage coverage_sim(std::string_view caption, const sim::Scene& scene);

// Decompose, then one image-grounded verify call per proposition. Judge failures on a
// proposition become kUnknown and leave the denominator.
Factuality factuality_judge(std::string_view caption, const ImageRef& image, std::string_view ground_truth,
                            Provider& judge, const EvalPrompts& prompts, std::int64_t seed,
                            std::vector<CallUsage>* calls = nullptr);

struct VqaQuestion {
  std::string question;
  std::string answer;
};

// Each question answered from the caption text alone. An answer is correct when, after
// case and whitespace normalization, it equals or contains the keyed answer.
Coverage coverage_judge(std::string_view caption, const std::vector<VqaQuestion>& questions, Provider& judge,
                        const EvalPrompts& prompts, std::int64_t seed, std::vector<CallUsage>* calls = nullptr);

struct EvalItem {
  std::string image_id;
  std::string method;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t n_propositions = 0;
  std::size_t n_unknown = 0;
  std::size_t n_vqa = 0;
  std::vector<std::string> flags;
};

struct EvalReport {
  double precision = 0.0;  // mean over items
  double recall = 0.0;     // mean over items
  double f1 = 0.0;         // f1 of the means
  std::size_t n_propositions = 0;
  std::size_t n_vqa = 0;
  std::size_t n_failed = 0;  // records that carried no caption
  std::vector<EvalItem> items;
};

EvalReport aggregate(std::vector<EvalItem> items, std::size_t n_failed = 0);
nlohmann::json to_json(const EvalReport& report);

// Scores every successful record against its scene; failed records count in n_failed.
// Throws ValidationError when a record's scene is missing.
EvalReport evaluate_sim(const std::vector<store::ResultRecord>& results, const std::vector<sim::Scene>& scenes);

// Ground truth for real-mode evaluation of one image.
struct EvalTarget {
  ImageRef image;
  std::string ground_truth;
  std::vector<VqaQuestion> vqa;
};

// JSONL: {image, id?, ground_truth, vqa:[{question, answer}]}.
std::vector<EvalTarget> read_eval_targets(const std::filesystem::path& path);

EvalReport evaluate_judge(const std::vector<store::ResultRecord>& results, const std::vector<EvalTarget>& targets,
                          Provider& judge, const EvalPrompts& prompts, std::int64_t seed, int concurrency);

// ---- Arena ----

enum class Outcome { kWin, kTie, kLoss };
std::string_view to_string(Outcome o);

inline constexpr std::size_t kArenaReferences = 3;

struct Comparison {
  std::string image_id;
  std::string reference_id;
  Outcome outcome = Outcome::kTie;
  bool candidate_first = true;
  std::string error;
};

struct ArenaResult {
  std::vector<Comparison> comparisons;
  double margin = 0.0;
};

// 100 * (wins - losses) / n; ties count 0. An empty list has margin 0.
double arena_margin(const std::vector<Outcome>& outcomes);
ArenaResult make_arena_result(std::vector<Comparison> comparisons);
nlohmann::json to_json(const ArenaResult& result);

// image id -> caption
using CaptionSet = std::map<std::string, std::string>;

struct ReferenceSet {
  std::string id;
  CaptionSet captions;
};

// Aligned inputs: every candidate image needs a caption in each of the three reference
// sets. Throws ValidationError otherwise.
void check_arena_inputs(const CaptionSet& candidates, const std::vector<ReferenceSet>& references);

ArenaResult arena_score_sim(const CaptionSet& candidates, const std::vector<ReferenceSet>& references,
                            const std::map<std::string, sim::Scene>& scenes);

// Order of the two captions is drawn per comparison from the seed and recorded. A judge
// failure is a tie carrying the error.
ArenaResult arena_score_judge(const CaptionSet& candidates, const std::vector<ReferenceSet>& references,
                              const std::map<std::string, ImageRef>& images, Provider& judge,
                              const EvalPrompts& prompts, std::int64_t seed);

CaptionSet final_captions(const std::vector<store::ResultRecord>& results);

// ---- Cost ----

struct CostReport {
  std::int64_t model_params = 0;
  std::int64_t total_tokens = 0;
  double tflops = 0.0;
  std::vector<CallUsage> calls;
};

// T = sum of text and completion tokens plus each distinct image's tokens once.
CostReport cost(const std::vector<CallUsage>& calls, std::int64_t n_params);

struct MethodCost {
  std::string method;
  std::string model_id;
  std::size_t n_captions = 0;
  double mean_tokens = 0.0;
  double mean_tflops = 0.0;
  double total_tflops = 0.0;
  std::size_t total_calls = 0;
};

// Per (method, model) mean TFLOPs per final caption. Throws UsageError for a model
// missing from the table.
std::vector<MethodCost> cost_table(const std::vector<store::ResultRecord>& results,
                                   const std::map<std::string, std::int64_t>& params);
nlohmann::json to_json(const std::vector<MethodCost>& table);

}  // namespace reflectcap::eval
