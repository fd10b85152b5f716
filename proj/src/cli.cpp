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

#include "reflectcap/cli.hpp"

#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "reflectcap/config.hpp"
#include "reflectcap/error.hpp"
#include "reflectcap/eval.hpp"
#include "reflectcap/offline.hpp"
#include "reflectcap/online.hpp"
#include "reflectcap/store.hpp"
#include "reflectcap/text.hpp"

namespace reflectcap {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::optional<std::string> config;
  std::optional<std::int64_t> seed;
  std::optional<int> concurrency;
  std::optional<std::string> cache_root;
  bool no_cache = false;
  bool quiet = false;

  void add_to(CLI::App& sub) {
    sub.add_option("--config", config, "Config JSON (default: $" + std::string(kConfigEnvVar) + ")");
    sub.add_option("--seed", seed, "Run seed");
    sub.add_option("--concurrency", concurrency, "Parallel requests")->check(CLI::PositiveNumber);
    sub.add_option("--cache-root", cache_root, "Response cache directory");
    sub.add_flag("--no-cache", no_cache, "Disable the response cache");
    sub.add_flag("-q,--quiet", quiet, "Only log warnings and errors");
  }

  RunConfig resolve() const {
    RunConfig c = load_config(config ? std::optional<fs::path>(*config) : std::nullopt);
    if (seed) c.seed = *seed;
    if (concurrency) c.concurrency = *concurrency;
    if (cache_root) c.cache_root = *cache_root;
    if (no_cache) c.cache = false;
    c.validate();
    return c;
  }
};

void setup_logging(bool quiet) {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("reflectcap");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
  });
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
}

void print_stats(std::ostream& out, const Bindings& b) {
  const ProviderStats s = b.total_stats();
  out << fmt::format("provider requests: {} (network calls: {}, cache hits: {})\n", s.requests, s.network_calls,
                     s.cache_hits);
}

std::vector<Exemplar> load_exemplars(const fs::path& manifest) {
  auto entries = store::read_manifest(manifest);
  if (entries.empty()) throw UsageError("exemplar manifest is empty: " + manifest.string());
  return store::to_exemplars(entries);
}

std::vector<ImageRef> load_images(const fs::path& manifest) {
  std::vector<ImageRef> out;
  for (auto& e : store::read_manifest(manifest)) out.push_back(std::move(e.image));
  if (out.empty()) throw UsageError("image manifest is empty: " + manifest.string());
  return out;
}

void write_results(const std::vector<store::ResultRecord>& records, const fs::path& path) {
  std::string text;
  for (const auto& r : records) text += store::to_json(r).dump() + "\n";
  store::write_text_file(path, text);
}

eval::EvalPrompts eval_prompts(const RunConfig& c) {
  return c.prompts_dir.empty() ? eval::EvalPrompts::defaults() : eval::EvalPrompts::load(c.prompts_dir);
}

std::map<std::string, sim::Scene> scene_map(const std::vector<sim::Scene>& scenes) {
  std::map<std::string, sim::Scene> out;
  for (const auto& s : scenes) out[s.id] = s;
  return out;
}

void print_eval(std::ostream& out, const eval::EvalReport& report) {
  std::map<std::string, std::vector<eval::EvalItem>> by_method;
  for (const auto& i : report.items) by_method[i.method].push_back(i);
  out << fmt::format("{:<18} {:>6} {:>9} {:>9} {:>9}\n", "method", "items", "precision", "recall", "f1");
  for (auto& [m, items] : by_method) {
    const auto sub = eval::aggregate(items);
    out << fmt::format("{:<18} {:>6} {:>9.4f} {:>9.4f} {:>9.4f}\n", m, sub.items.size(), sub.precision, sub.recall,
                       sub.f1);
  }
  if (by_method.size() != 1) {
    out << fmt::format("{:<18} {:>6} {:>9.4f} {:>9.4f} {:>9.4f}\n", "all", report.items.size(), report.precision,
                       report.recall, report.f1);
  }
  if (report.n_failed > 0) out << fmt::format("failed records skipped: {}\n", report.n_failed);
}

// ---- subcommands ----

struct SimgenArgs {
  std::uint64_t seed = 0;
  std::size_t scenes = 0;
  std::size_t facts = 0;
  std::string out;
  std::optional<std::string> manifest;
};

int cmd_simgen(const SimgenArgs& a, std::ostream& out) {
  const auto corpus = sim::generate_corpus(a.seed, a.scenes, a.facts);
  store::write_corpus(corpus, a.out);
  if (a.manifest) {
    const fs::path mdir = fs::absolute(fs::path(*a.manifest)).parent_path();
    const fs::path rel = fs::absolute(a.out).lexically_relative(mdir);
    std::vector<store::ManifestEntry> entries;
    for (const auto& s : corpus) {
      store::ManifestEntry e;
      e.image = ImageRef::from_path(s.id, rel.string() + "#" + s.id, kSimSceneMediaType);
      e.reference = sim::render_facts(s.facts);
      entries.push_back(std::move(e));
    }
    store::write_manifest(entries, *a.manifest);
  }
  out << fmt::format("wrote {} scenes x {} facts to {}\n", corpus.size(), a.facts, a.out);
  return kExitOk;
}

struct DistillArgs {
  Common common;
  std::string exemplars;
  std::string out;
  std::optional<std::size_t> k;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> max_exemplars;
  std::optional<std::string> ledger;
  bool resume = false;
};

int cmd_distill(const DistillArgs& a, std::ostream& out) {
  RunConfig c = a.common.resolve();
  if (a.k) c.k = *a.k;
  if (a.batch) c.batch = *a.batch;
  c.validate();
  std::vector<Exemplar> items = load_exemplars(a.exemplars);
  ExemplarSet set(std::move(items));
  if (a.max_exemplars) {
    if (*a.max_exemplars < 1) throw UsageError("--max-exemplars must be >= 1");
    set = set.prefix(*a.max_exemplars);
  }
  const Bindings bindings = make_bindings(c);
  offline::DistillOptions opt;
  opt.k = c.k;
  opt.batch_size = c.batch;
  opt.seed = c.seed;
  opt.concurrency = c.concurrency;
  opt.ledger_path = a.ledger ? fs::path(*a.ledger) : fs::path(a.out + ".ledger.jsonl");
  opt.resume = a.resume;
  const auto result = offline::distill(set, bindings, opt);
  store::save_notes(result.notes, a.out);
  out << fmt::format("distilled M={} K={} B={}: {} organizer calls, {} avoid / {} include items -> {}\n", set.size(),
                     c.k, c.batch, result.batch_sizes.size(), result.notes.avoid.size(), result.notes.include.size(),
                     a.out);
  if (!result.warnings.empty()) out << fmt::format("organizer warnings: {}\n", result.warnings.size());
  print_stats(out, bindings);
  return kExitOk;
}

struct CaptionArgs {
  Common common;
  std::string images;
  std::string method;
  std::optional<std::string> notes;
  std::optional<std::string> exemplars;
  std::string out;
};

int cmd_caption(const CaptionArgs& a, std::ostream& out) {
  RunConfig c = a.common.resolve();
  online::BatchOptions opt;
  opt.method = parse_method(a.method);
  if (a.notes) opt.notes = store::load_notes(*a.notes);
  if (a.exemplars) opt.exemplar_pool = ExemplarSet(load_exemplars(*a.exemplars));
  opt.seed = c.seed;
  opt.few_shot_n = c.few_shot_n;
  opt.concurrency = c.concurrency;
  {
    online::GenerationRequest probe;
    probe.method = opt.method;
    probe.notes = opt.notes;
    probe.exemplar_pool = opt.exemplar_pool;
    probe.few_shot_n = opt.few_shot_n;
    probe.validate();
  }
  const auto images = load_images(a.images);
  const Bindings bindings = make_bindings(c);
  const auto records = online::caption_batch(images, opt, bindings);
  write_results(records, a.out);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.status == "ok" ? 0 : 1;
  out << fmt::format("captioned {} images with {} ({} failed) -> {}\n", records.size(), a.method, failed, a.out);
  print_stats(out, bindings);
  return failed == 0 ? kExitOk : kExitFailure;
}

struct EvalArgs {
  Common common;
  std::string results;
  std::optional<std::string> scenes;
  std::optional<std::string> targets;
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.scenes.has_value() == a.targets.has_value()) throw UsageError("eval needs exactly one of --scenes or --targets");
  RunConfig c = a.common.resolve();
  const auto results = store::read_results(a.results);
  eval::EvalReport report;
  std::optional<Bindings> bindings;
  if (a.scenes) {
    report = eval::evaluate_sim(results, store::read_corpus(*a.scenes));
  } else {
    bindings = make_bindings(c);
    report = eval::evaluate_judge(results, eval::read_eval_targets(*a.targets), bindings->at(Role::kJudge),
                                  eval_prompts(c), c.seed, c.concurrency);
  }
  store::write_json_file(a.out, eval::to_json(report));
  print_eval(out, report);
  if (bindings) print_stats(out, *bindings);
  return kExitOk;
}

struct ArenaArgs {
  Common common;
  std::string candidates;
  std::vector<std::string> references;
  std::optional<std::string> scenes;
  std::optional<std::string> images;
  std::string out;
};

int cmd_arena(const ArenaArgs& a, std::ostream& out) {
  if (a.scenes.has_value() == a.images.has_value()) throw UsageError("arena needs exactly one of --scenes or --images");
  RunConfig c = a.common.resolve();
  const auto candidates = eval::final_captions(store::read_results(a.candidates));
  std::vector<eval::ReferenceSet> refs;
  for (const auto& r : a.references) refs.push_back({fs::path(r).stem().string(), eval::final_captions(store::read_results(r))});
  try {
    eval::check_arena_inputs(candidates, refs);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  eval::ArenaResult result;
  std::optional<Bindings> bindings;
  if (a.scenes) {
    result = eval::arena_score_sim(candidates, refs, scene_map(store::read_corpus(*a.scenes)));
  } else {
    std::map<std::string, ImageRef> images;
    for (auto& img : load_images(*a.images)) images.emplace(img.id, img);
    bindings = make_bindings(c);
    result = eval::arena_score_judge(candidates, refs, images, bindings->at(Role::kJudge), eval_prompts(c), c.seed);
  }
  store::write_json_file(a.out, eval::to_json(result));
  out << fmt::format("{:<24} {:>5} {:>5} {:>5}\n", "reference", "win", "tie", "loss");
  for (const auto& ref : refs) {
    int w = 0, t = 0, l = 0, errors = 0;
    for (const auto& cmp : result.comparisons) {
      if (cmp.reference_id != ref.id) continue;
      w += cmp.outcome == eval::Outcome::kWin;
      t += cmp.outcome == eval::Outcome::kTie;
      l += cmp.outcome == eval::Outcome::kLoss;
      errors += !cmp.error.empty();
    }
    out << fmt::format("{:<24} {:>5} {:>5} {:>5}{}\n", ref.id, w, t, l,
                       errors ? fmt::format("  ({} judge errors)", errors) : "");
  }
  out << fmt::format("margin: {:.1f}\n", result.margin);
  if (bindings) print_stats(out, *bindings);
  return kExitOk;
}

struct CostArgs {
  Common common;
  std::string results;
  std::optional<std::string> params_table;
  std::string out;
};

int cmd_cost(const CostArgs& a, std::ostream& out) {
  RunConfig c = a.common.resolve();
  auto params = c.model_params;
  if (a.params_table) {
    json j = store::read_json_file(*a.params_table);
    if (j.contains("model_params")) j = j["model_params"];
    for (const auto& [model, n] : j.items()) {
      if (!n.is_number()) throw UsageError("params table: " + model + " must be a number");
      params[model] = static_cast<std::int64_t>(n.get<double>());
    }
  }
  const auto table = eval::cost_table(store::read_results(a.results), params);
  store::write_json_file(a.out, eval::to_json(table));
  out << fmt::format("{:<18} {:<16} {:>8} {:>12} {:>12}\n", "method", "model", "captions", "tokens/cap", "TFLOPs/cap");
  for (const auto& r : table) {
    out << fmt::format("{:<18} {:<16} {:>8} {:>12.1f} {:>12.4f}\n", r.method, r.model_id, r.n_captions, r.mean_tokens,
                       r.mean_tflops);
  }
  return kExitOk;
}

struct AblateArgs {
  Common common;
  std::vector<std::string> sweeps;
  std::string exemplars;
  std::string images;
  std::optional<std::string> scenes;
  std::optional<std::string> targets;
  std::vector<std::int64_t> seeds;
  std::string out;
};

struct SweepAxis {
  std::string name;
  std::vector<std::string> values;
};

SweepAxis parse_sweep(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw UsageError("sweep must look like axis:v1,v2,...: " + spec);
  SweepAxis axis{spec.substr(0, colon), {}};
  std::string rest = spec.substr(colon + 1);
  std::size_t start = 0;
  while (start <= rest.size()) {
    const auto comma = rest.find(',', start);
    std::string v = trim(rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!v.empty()) axis.values.push_back(v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (axis.values.empty()) throw UsageError("sweep axis " + axis.name + " has no values");
  if (axis.name == "n_exemplars" || axis.name == "k_items") {
    for (const auto& v : axis.values) {
      if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw UsageError("sweep " + axis.name + " needs non-negative integers, got " + v);
      }
      if (axis.name == "k_items" && std::stoul(v) == 0) throw UsageError("k_items values must be >= 1");
    }
  } else if (axis.name == "injection") {
    for (const auto& v : axis.values) {
      if (v != "separate" && v != "combined") throw UsageError("injection values are separate or combined, got " + v);
    }
  } else {
    throw UsageError("unknown sweep axis: " + axis.name + " (n_exemplars, k_items, injection)");
  }
  return axis;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  if (a.scenes.has_value() && a.targets.has_value()) throw UsageError("ablate takes at most one of --scenes or --targets");
  std::vector<SweepAxis> axes;
  for (const auto& s : a.sweeps) axes.push_back(parse_sweep(s));
  RunConfig c = a.common.resolve();
  const std::vector<std::int64_t> seeds = a.seeds.empty() ? std::vector<std::int64_t>{c.seed} : a.seeds;
  const ExemplarSet all(load_exemplars(a.exemplars));
  const auto images = load_images(a.images);

  // Sim scenes come from --scenes or from the images themselves.
  std::vector<sim::Scene> scenes;
  std::vector<eval::EvalTarget> targets;
  if (a.targets) {
    targets = eval::read_eval_targets(*a.targets);
  } else if (a.scenes) {
    scenes = store::read_corpus(*a.scenes);
  } else {
    try {
      for (const auto& img : images) scenes.push_back(sim::scene_from_image(img));
    } catch (const Error& e) {
      throw UsageError(std::string("ablate without --targets needs simworld images: ") + e.what());
    }
  }

  const Bindings bindings = make_bindings(c);
  const std::string model_id = bindings.at(Role::kCaptioner).config().model_id;
  auto params = c.model_params.find(model_id);
  if (params == c.model_params.end()) throw UsageError("model " + model_id + " missing from model_params");
  const eval::EvalPrompts prompts = eval_prompts(c);

  std::string csv = "axis,value,method,precision,recall,f1,tflops,seed\n";
  std::size_t rows = 0;
  for (const auto& axis : axes) {
    for (const auto& value : axis.values) {
      for (std::int64_t seed : seeds) {
        std::optional<ReflectionNotes> notes;
        MethodId method = MethodId::kReflectcapFull;
        std::size_t n = all.size();
        std::size_t k = c.k;
        if (axis.name == "n_exemplars") n = std::stoul(value);
        if (axis.name == "k_items") k = std::stoul(value);
        if (axis.name == "injection" && value == "combined") method = MethodId::kCombinedNotes;
        if (n == 0) {
          method = MethodId::kZeroShot;
        } else {
          offline::DistillOptions opt;
          opt.k = k;
          opt.batch_size = c.batch;
          opt.seed = seed;
          opt.concurrency = c.concurrency;
          notes = offline::distill(all.prefix(n), bindings, opt).notes;
        }
        online::BatchOptions bo;
        bo.method = method;
        bo.notes = notes;
        bo.seed = seed;
        bo.concurrency = c.concurrency;
        const auto records = online::caption_batch(images, bo, bindings);
        for (const auto& r : records) {
          if (r.status != "ok") throw Error("captioning failed for " + r.image_id + ": " + r.error);
        }
        const eval::EvalReport report =
            targets.empty() ? eval::evaluate_sim(records, scenes)
                            : eval::evaluate_judge(records, targets, bindings.at(Role::kJudge), prompts, seed,
                                                   c.concurrency);
        double tflops = 0.0;
        for (const auto& r : records) tflops += eval::cost(r.calls, params->second).tflops;
        tflops /= static_cast<double>(records.size());
        csv += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", axis.name, value, to_string(method),
                           report.precision, report.recall, report.f1, tflops, seed);
        out << fmt::format("{}={} {} seed={}: P={:.4f} R={:.4f} F1={:.4f}\n", axis.name, value, to_string(method), seed,
                           report.precision, report.recall, report.f1);
        ++rows;
      }
    }
  }
  store::write_text_file(a.out, csv);
  out << fmt::format("wrote {} rows to {}\n", rows, a.out);
  print_stats(out, bindings);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured reflection notes for image captioning", "reflectcap"};
  app.require_subcommand(1);

  SimgenArgs simgen;
  auto* s = app.add_subcommand("simgen", "Generate a synthetic scene corpus");
  s->add_option("--seed", simgen.seed, "Corpus seed");
  s->add_option("--scenes", simgen.scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  s->add_option("--facts", simgen.facts, "Facts per scene")->required()->check(CLI::PositiveNumber);
  s->add_option("--out", simgen.out, "Corpus JSONL")->required();
  s->add_option("--manifest", simgen.manifest, "Also write an exemplar/image manifest");

  DistillArgs distill;
  auto* d = app.add_subcommand("distill", "Build reflection notes from exemplars");
  distill.common.add_to(*d);
  d->add_option("--exemplars", distill.exemplars, "Exemplar manifest JSONL")->required();
  d->add_option("--out", distill.out, "Notes JSON")->required();
  d->add_option("--k", distill.k, "Max items per note list");
  d->add_option("--batch", distill.batch, "Organizer batch size");
  d->add_option("--max-exemplars", distill.max_exemplars, "Use the first M exemplars");
  d->add_option("--ledger", distill.ledger, "Progress ledger (default: <out>.ledger.jsonl)");
  d->add_flag("--resume", distill.resume, "Reuse completed stages from the ledger");

  CaptionArgs caption;
  auto* c = app.add_subcommand("caption", "Caption images with one method");
  caption.common.add_to(*c);
  c->add_option("--images", caption.images, "Image manifest JSONL")->required();
  c->add_option("--method", caption.method, "zero_shot, few_shot, self_correction, capmas_lite, reflectcap_base, "
                                              "reflectcap_full, combined_notes")
      ->required();
  c->add_option("--notes", caption.notes, "Notes JSON");
  c->add_option("--exemplars", caption.exemplars, "Exemplar pool manifest for few_shot");
  c->add_option("--out", caption.out, "Results JSONL")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score captions for factuality and coverage");
  ev.common.add_to(*e);
  e->add_option("--results", ev.results, "Results JSONL")->required();
  e->add_option("--scenes", ev.scenes, "Simworld scene corpus");
  e->add_option("--targets", ev.targets, "Judge targets JSONL {image, ground_truth, vqa}");
  e->add_option("--out", ev.out, "Report JSON")->required();

  ArenaArgs arena;
  auto* ar = app.add_subcommand("arena", "Pairwise win-rate margin against three references");
  arena.common.add_to(*ar);
  ar->add_option("--candidates", arena.candidates, "Candidate results JSONL")->required();
  ar->add_option("--references", arena.references, "Three reference results JSONL files")
      ->required()
      ->delimiter(',');
  ar->add_option("--scenes", arena.scenes, "Simworld scene corpus");
  ar->add_option("--images", arena.images, "Image manifest for judge mode");
  ar->add_option("--out", arena.out, "Arena report JSON")->required();

  CostArgs cost;
  auto* co = app.add_subcommand("cost", "TFLOPs per final caption");
  cost.common.add_to(*co);
  co->add_option("--results", cost.results, "Results JSONL")->required();
  co->add_option("--params-table", cost.params_table, "JSON {model_id: non-embedding params}");
  co->add_option("--out", cost.out, "Cost report JSON")->required();

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Parameter sweeps");
  ablate.common.add_to(*ab);
  ab->add_option("--sweep", ablate.sweeps, "axis:v1,v2 with axis n_exemplars, k_items or injection")->required();
  ab->add_option("--exemplars", ablate.exemplars, "Exemplar manifest JSONL")->required();
  ab->add_option("--images", ablate.images, "Held-out image manifest JSONL")->required();
  ab->add_option("--scenes", ablate.scenes, "Simworld scene corpus (default: decode the images)");
  ab->add_option("--targets", ablate.targets, "Judge targets JSONL");
  ab->add_option("--seeds", ablate.seeds, "Seeds to repeat each point with")->delimiter(',');
  ab->add_option("--out", ablate.out, "Sweep CSV")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_simgen(simgen, out);
    bool quiet = false;
    for (const Common* cm : {&distill.common, &caption.common, &ev.common, &arena.common, &cost.common, &ablate.common}) {
      quiet = quiet || cm->quiet;
    }
    setup_logging(quiet);
    if (d->parsed()) return cmd_distill(distill, out);
    if (c->parsed()) return cmd_caption(caption, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (ar->parsed()) return cmd_arena(arena, out);
    if (co->parsed()) return cmd_cost(cost, out);
    if (ab->parsed()) return cmd_ablate(ablate, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace reflectcap
