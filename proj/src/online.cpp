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

#include "reflectcap/online.hpp"

#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "reflectcap/error.hpp"
#include "reflectcap/grammar.hpp"
#include "reflectcap/parallel.hpp"
#include "reflectcap/prompts.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap::online {

namespace {

Caption single_call(MethodId method, std::vector<ChatMessage> messages, Provider& provider, std::int64_t seed) {
  const ModelResponse resp = provider.complete(provider.make_request(std::move(messages), seed));
  Caption cap;
  cap.text = trim(resp.text);
  cap.method = method;
  cap.calls.push_back(CallUsage{resp.call_id, resp.usage});
  return cap;
}

std::vector<ChatMessage> captioner_messages(const ImageRef& image) {
  return {ChatMessage::system(std::string(prompts::kCaptionerSystem)),
          ChatMessage::user(std::string(prompts::kCaptionerUser), image)};
}

void append_calls(Caption& to, const Caption& from) { to.calls.insert(to.calls.end(), from.calls.begin(), from.calls.end()); }

}  // namespace

void GenerationRequest::validate() const {
  if (requires_notes(method) && !notes) {
    throw UsageError(std::string(to_string(method)) + " requires reflection notes");
  }
  if (method == MethodId::kFewShot) {
    if (!exemplar_pool) throw UsageError("few_shot requires an exemplar pool");
    if (few_shot_n < 1) throw UsageError("few_shot needs at least one example");
    if (exemplar_pool->size() < few_shot_n) {
      throw UsageError("few_shot requires at least " + std::to_string(few_shot_n) + " exemplars, got " +
                       std::to_string(exemplar_pool->size()));
    }
  }
}

std::vector<std::size_t> sample_without_replacement(std::size_t pool_size, std::size_t n, std::int64_t seed) {
  if (n > pool_size) throw UsageError("cannot sample " + std::to_string(n) + " of " + std::to_string(pool_size));
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates on raw engine output; std distributions are not portable.
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool_size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

std::vector<std::string> parse_propositions(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(text)) {
    std::string t = trim(line);
    if (t == "-" || t == "*") continue;
    if (t.rfind("- ", 0) == 0 || t.rfind("* ", 0) == 0) t = trim(std::string_view(t).substr(2));
    if (!t.empty()) out.push_back(normalize_whitespace(t));
  }
  return out;
}

Caption caption_zero_shot(const ImageRef& image, Provider& captioner, std::int64_t seed) {
  return single_call(MethodId::kZeroShot, captioner_messages(image), captioner, seed);
}

Caption caption_few_shot(const ImageRef& image, const ExemplarSet& pool, Provider& captioner, std::int64_t seed,
                         std::size_t n) {
  if (pool.size() < n) throw UsageError("few_shot exemplar pool too small");
  std::string user(prompts::kFewShotPreamble);
  std::size_t index = 1;
  for (std::size_t i : sample_without_replacement(pool.size(), n, seed)) {
    user += "\n\n" + render_template(prompts::kFewShotExample,
                                     {{"index", std::to_string(index++)}, {"caption", pool[i].reference}});
  }
  user += "\n\n";
  user += prompts::kCaptionerUser;
  std::vector<ChatMessage> messages{ChatMessage::system(std::string(prompts::kCaptionerSystem)),
                                    ChatMessage::user(user, image)};
  return single_call(MethodId::kFewShot, std::move(messages), captioner, seed);
}

GenerationResult caption_self_correct(const ImageRef& image, Provider& captioner, std::int64_t seed) {
  const Caption draft = caption_zero_shot(image, captioner, seed);
  auto messages = captioner_messages(image);
  messages.push_back(ChatMessage::assistant(draft.text));
  messages.push_back(ChatMessage::user(std::string(prompts::kSelfCorrectRevision)));
  const Caption revised = single_call(MethodId::kSelfCorrection, std::move(messages), captioner, seed);

  GenerationResult out;
  out.method = MethodId::kSelfCorrection;
  Caption final = revised;
  final.calls = draft.calls;
  append_calls(final, revised);
  out.captions["draft"] = draft;
  out.captions["final"] = std::move(final);
  return out;
}

GenerationResult caption_capmas_lite(const ImageRef& image, Provider& captioner, Provider& judge, std::int64_t seed) {
  const Caption draft = caption_zero_shot(image, captioner, seed);
  Caption final;
  final.method = MethodId::kCapmasLite;
  final.calls = draft.calls;

  const Caption decomposed = single_call(
      MethodId::kCapmasLite,
      {ChatMessage::system(std::string(prompts::kDecomposeSystem)),
       ChatMessage::user(render_template(prompts::kDecomposeUser, {{"caption", draft.text}}))},
      judge, seed);
  append_calls(final, decomposed);
  const std::vector<std::string> props = parse_propositions(decomposed.text);

  std::vector<std::string> supported;
  bool local = true;
  for (const auto& p : props) {
    std::optional<bool> verdict = judge.backend().verify_locally(image, p);
    if (!verdict) {
      local = false;
      const Caption v = single_call(
          MethodId::kCapmasLite,
          {ChatMessage::system(std::string(prompts::kVerifySystem)),
           ChatMessage::user(render_template(prompts::kVerifyUser, {{"proposition", p}}), image)},
          judge, seed);
      append_calls(final, v);
      verdict = starts_with_icase(trim(v.text), "supported");
    }
    if (*verdict) supported.push_back(p);
  }

  if (supported.empty()) {
    final.text = std::string(prompts::kEmptyCaption);
    final.flags.push_back(props.empty() ? "no_propositions" : "all_propositions_removed");
  } else if (local) {
    // Backends that verify locally also accept their own propositions verbatim as a caption.
    final.text = join(supported, "\n");
  } else {
    std::vector<NoteItem> items;
    for (const auto& s : supported) items.push_back(NoteItem{s, std::nullopt});
    const Caption rewritten = single_call(
        MethodId::kCapmasLite,
        {ChatMessage::system(std::string(prompts::kRewriteSystem)),
         ChatMessage::user(render_template(prompts::kRewriteUser,
                                           {{"caption", draft.text}, {"propositions", render_bullets(items)}}))},
        judge, seed);
    append_calls(final, rewritten);
    final.text = rewritten.text;
  }

  GenerationResult out;
  out.method = MethodId::kCapmasLite;
  out.captions["draft"] = draft;
  out.captions["final"] = std::move(final);
  return out;
}

Caption caption_reflectcap_base(const ImageRef& image, const ReflectionNotes& notes, Provider& captioner,
                                std::int64_t seed) {
  const std::string system = render_template(prompts::kBaseSystem, {{"hallucination_notes", render_bullets(notes.avoid)}});
  return single_call(MethodId::kReflectcapBase,
                     {ChatMessage::system(system), ChatMessage::user(std::string(prompts::kBaseUser), image)}, captioner,
                     seed);
}

Caption caption_detail(const ImageRef& image, const ReflectionNotes& notes, Provider& detailer, std::int64_t seed) {
  const std::string user = render_template(prompts::kDetailUser, {{"missing_detail_notes", render_bullets(notes.include)}});
  return single_call(MethodId::kReflectcapFull,
                     {ChatMessage::system(std::string(prompts::kDetailSystem)), ChatMessage::user(user, image)}, detailer,
                     seed);
}

Caption merge_captions(const ImageRef& image, const Caption& base, const Caption& detail, Provider& merger,
                       std::int64_t seed) {
  const std::string user =
      render_template(prompts::kMergeUser, {{"base_caption", base.text}, {"detail_caption", detail.text}});
  return single_call(MethodId::kReflectcapFull,
                     {ChatMessage::system(std::string(prompts::kMergeSystem)), ChatMessage::user(user, image)}, merger,
                     seed);
}

GenerationResult caption_reflectcap(const ImageRef& image, const ReflectionNotes& notes, const Bindings& bindings,
                                    std::int64_t seed) {
  GenerationResult out;
  out.method = MethodId::kReflectcapFull;
  Caption base = caption_reflectcap_base(image, notes, bindings.at(Role::kCaptioner), seed);
  base.method = MethodId::kReflectcapFull;
  out.captions["base"] = base;
  const Caption detail = caption_detail(image, notes, bindings.at(Role::kDetailer), seed);
  out.captions["detail"] = detail;
  const Caption merged = merge_captions(image, base, detail, bindings.at(Role::kMerger), seed);
  Caption final = merged;
  final.calls = base.calls;
  append_calls(final, detail);
  append_calls(final, merged);
  out.captions["final"] = std::move(final);
  return out;
}

Caption caption_combined(const ImageRef& image, const ReflectionNotes& notes, Provider& captioner, std::int64_t seed) {
  const std::string system =
      render_template(prompts::kCombinedSystem, {{"hallucination_notes", render_bullets(notes.avoid)},
                                                 {"missing_detail_notes", render_bullets(notes.include)}});
  return single_call(MethodId::kCombinedNotes,
                     {ChatMessage::system(system), ChatMessage::user(std::string(prompts::kBaseUser), image)}, captioner,
                     seed);
}

GenerationResult generate(const GenerationRequest& request, const Bindings& bindings) {
  request.validate();
  auto wrap = [&](Caption c) {
    GenerationResult out;
    out.method = request.method;
    out.captions["final"] = std::move(c);
    return out;
  };
  Provider& captioner = bindings.at(Role::kCaptioner);
  switch (request.method) {
    case MethodId::kZeroShot:
      return wrap(caption_zero_shot(request.image, captioner, request.seed));
    case MethodId::kFewShot:
      return wrap(caption_few_shot(request.image, *request.exemplar_pool, captioner, request.seed, request.few_shot_n));
    case MethodId::kSelfCorrection:
      return caption_self_correct(request.image, captioner, request.seed);
    case MethodId::kCapmasLite:
      return caption_capmas_lite(request.image, captioner, bindings.at(Role::kJudge), request.seed);
    case MethodId::kReflectcapBase:
      return wrap(caption_reflectcap_base(request.image, *request.notes, captioner, request.seed));
    case MethodId::kReflectcapFull:
      return caption_reflectcap(request.image, *request.notes, bindings, request.seed);
    case MethodId::kCombinedNotes:
      return wrap(caption_combined(request.image, *request.notes, captioner, request.seed));
  }
  throw UsageError("unknown method");
}

store::ResultRecord to_record(const ImageRef& image, const GenerationResult& result, std::int64_t seed,
                              const std::string& model_id) {
  store::ResultRecord r;
  r.image_id = image.id;
  r.method = result.method;
  for (const auto& [name, cap] : result.captions) r.captions[name] = cap.text;
  r.calls = result.final_caption().calls;
  r.flags = result.final_caption().flags;
  r.seed = seed;
  r.model_id = model_id;
  return r;
}

std::vector<store::ResultRecord> caption_batch(const std::vector<ImageRef>& images, const BatchOptions& options,
                                               const Bindings& bindings) {
  GenerationRequest probe;
  probe.method = options.method;
  probe.notes = options.notes;
  probe.exemplar_pool = options.exemplar_pool;
  probe.few_shot_n = options.few_shot_n;
  probe.validate();

  const std::string model_id = bindings.at(Role::kCaptioner).config().model_id;
  std::vector<store::ResultRecord> out(images.size());
  parallel_ordered(
      images.size(), options.concurrency,
      [&](std::size_t i) {
        GenerationRequest req = probe;
        req.image = images[i];
        req.seed = options.seed;
        try {
          return to_record(images[i], generate(req, bindings), options.seed, model_id);
        } catch (const Error& e) {
          spdlog::error("{}: {}", images[i].id, e.what());
          store::ResultRecord r;
          r.image_id = images[i].id;
          r.method = options.method;
          r.seed = options.seed;
          r.model_id = model_id;
          r.status = "error";
          r.error = e.what();
          return r;
        }
      },
      [&](std::size_t i, store::ResultRecord& r) { out[i] = std::move(r); });
  return out;
}

}  // namespace reflectcap::online
