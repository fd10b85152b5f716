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
#include <optional>
#include <string>
#include <vector>

#include "reflectcap/core.hpp"
#include "reflectcap/provider.hpp"
#include "reflectcap/store.hpp"

namespace reflectcap::online {

inline constexpr std::size_t kFewShotExamples = 3;

struct GenerationRequest {
  ImageRef image;
  MethodId method = MethodId::kZeroShot;
  std::optional<ReflectionNotes> notes;
  std::optional<ExemplarSet> exemplar_pool;
  std::int64_t seed = 0;
  std::size_t few_shot_n = kFewShotExamples;

  // Throws UsageError when the method's inputs are missing.
  void validate() const;
};

struct GenerationResult {
  MethodId method = MethodId::kZeroShot;
  // "final" always; reflectcap_full adds "base" and "detail", self_correction and
  // capmas_lite add "draft".
  std::map<std::string, Caption> captions;

  const Caption& final_caption() const { return captions.at("final"); }
};

// Every call of the method, in call order. The final caption carries them all.
Caption caption_zero_shot(const ImageRef& image, Provider& captioner, std::int64_t seed);
Caption caption_few_shot(const ImageRef& image, const ExemplarSet& pool, Provider& captioner, std::int64_t seed,
                         std::size_t n = kFewShotExamples);
GenerationResult caption_self_correct(const ImageRef& image, Provider& captioner, std::int64_t seed);
GenerationResult caption_capmas_lite(const ImageRef& image, Provider& captioner, Provider& judge, std::int64_t seed);
Caption caption_reflectcap_base(const ImageRef& image, const ReflectionNotes& notes, Provider& captioner,
                                std::int64_t seed);
Caption caption_detail(const ImageRef& image, const ReflectionNotes& notes, Provider& detailer, std::int64_t seed);
Caption merge_captions(const ImageRef& image, const Caption& base, const Caption& detail, Provider& merger,
                       std::int64_t seed);
GenerationResult caption_reflectcap(const ImageRef& image, const ReflectionNotes& notes, const Bindings& bindings,
                                    std::int64_t seed);
Caption caption_combined(const ImageRef& image, const ReflectionNotes& notes, Provider& captioner, std::int64_t seed);

GenerationResult generate(const GenerationRequest& request, const Bindings& bindings);

// Seeded sampling of n distinct indices from [0, pool_size), in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t pool_size, std::size_t n, std::int64_t seed);

// Lines of "- item" parsed back out of a decomposition answer.
std::vector<std::string> parse_propositions(std::string_view text);

struct BatchOptions {
  MethodId method = MethodId::kZeroShot;
  std::optional<ReflectionNotes> notes;
  std::optional<ExemplarSet> exemplar_pool;
  std::int64_t seed = 0;
  std::size_t few_shot_n = kFewShotExamples;
  int concurrency = 4;
};

// One record per image, in input order. Failures are recorded with status "error".
std::vector<store::ResultRecord> caption_batch(const std::vector<ImageRef>& images, const BatchOptions& options,
                                               const Bindings& bindings);

store::ResultRecord to_record(const ImageRef& image, const GenerationResult& result, std::int64_t seed,
                              const std::string& model_id);

}  // namespace reflectcap::online
