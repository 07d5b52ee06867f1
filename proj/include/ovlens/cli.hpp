#pragma once

// Command-line driver: make-toy, build-lens, embed, eval and icl
// subcommands. Exit codes: 0 success, 1 embedding-coverage failure,
// 2 configuration or file error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ovlens/analogy.hpp"
#include "ovlens/lens.hpp"
#include "ovlens/model_store.hpp"
#include "ovlens/report.hpp"
#include "ovlens/toy.hpp"

namespace ovlens::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCoverage = 1;
inline constexpr int kExitConfig = 2;

struct RunConfig {
  std::string model;
  std::string tokenizer;
  std::string heads_concept;
  std::string heads_token;
  std::size_t k = 80;
  std::vector<std::string> tasks;
  std::string layers = "all";
  std::string ranks;
  std::string metric = "cosine";
  bool no_prefix = false;
  std::size_t shots = 5;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string store;
  std::string lenses;
  bool icl = false;
};

/// Context prefixes for the standard analogy sections and function-vector tasks.
inline std::string default_prefix(const std::string& task) {
  static const std::map<std::string, std::string> table = {
      {"capital-common-countries", "She travelled to"},
      {"capital-world", "She travelled to"},
      {"currency", "You will have to pay in"},
      {"city-in-state", "She travelled to"},
      {"family", "Did you talk to her"},
      {"gram1-adjective-to-adverb", "Here is a random word in English:"},
      {"gram2-opposite", "Here is a random word in English:"},
      {"gram3-comparative", "Here is a random word in English:"},
      {"gram4-superlative", "Here is a random word in English:"},
      {"gram5-present-participle", "Here is a random word in English:"},
      {"gram6-nationality-adjective", "Here is a random word in English:"},
      {"gram7-past-tense", "Here is a random word in English:"},
      {"gram8-plural", "Here is a random word in English:"},
      {"gram9-plural-verbs", "Here is a random word in English:"},
      {"antonym", "Here is a random word in English:"},
      {"synonym", "Here is a random word in English:"},
      {"present-past", "Here is a random word in English:"},
      {"singular-plural", "Here is a random word in English:"},
      {"word-length", "Here is a random word in English:"},
      {"capitalize-first-letter", "Here is a random word/character:"},
      {"capitalize-last-letter", "Here is a random word/character:"},
      {"capitalize-second-letter", "Here is a random word/character:"},
      {"lowercase-first-letter", "Here is a random word/character:"},
      {"lowercase-last-letter", "Here is a random word/character:"},
      {"next-capital-letter", "Here is a random word/character:"},
      {"next-item", "Here is a random word/character:"},
      {"prev-item", "Here is a random word/character:"},
      {"capitalize", "Here is a random word in English:"},
      {"country-capital", "She travelled to"},
      {"country-currency", "You will have to pay in"},
      {"english-french", "Voici un mot al\xc3\xa9" "atoire en fran\xc3\xa7" "ais:"},
      {"english-german", "Hier ist ein beliebiges Wort im Deutschen:"},
      {"english-spanish", "Aqu\xc3\xad hay una palabra arbitraria en espa\xc3\xb1ol:"},
      {"landmark-country", "On vacation, we went to"},
      {"national-parks", "On vacation, we went to"},
      {"park-country", "On vacation, we went to"},
      {"person-instrument", "I am a big fan of"},
      {"person-occupation", "I am a big fan of"},
      {"person-sport", "I am a big fan of"},
      {"product-company", "I am a big fan of"},
      {"sentiment", "Here's my take on this film:"},
  };
  auto it = table.find(task);
  return it == table.end() ? std::string() : it->second;
}

/// "file.json" (task JSON), "file.txt#section" (one analogy section) or
/// "file.txt" (every section). Sections get their default prefix.
inline std::vector<AnalogyTask> load_tasks(const std::vector<std::string>& specs, bool no_prefix) {
  std::vector<AnalogyTask> tasks;
  for (const auto& spec : specs) {
    const auto hash = spec.find('#');
    const fs::path path = spec.substr(0, hash);
    if (!fs::exists(path)) throw NotFoundError("task file '" + path.string() + "' not found");
    if (hash != std::string::npos) {
      const std::string section = spec.substr(hash + 1);
      tasks.push_back(parse_word2vec_file(path, section, default_prefix(section)));
    } else if (path.extension() == ".json") {
      tasks.push_back(parse_pairs_file(path));
    } else {
      for (const auto& section : list_word2vec_sections(path))
        tasks.push_back(parse_word2vec_file(path, section, default_prefix(section)));
    }
  }
  if (no_prefix)
    for (auto& t : tasks) t.prefix.clear();
  return tasks;
}

/// "all", "3", "0-4", "0,2,4" or combinations such as "0-2,8".
inline std::vector<std::size_t> parse_index_list(const std::string& spec, std::size_t all_max) {
  std::vector<std::size_t> out;
  if (spec.empty() || spec == "all") {
    for (std::size_t i = 0; i <= all_max; ++i) out.push_back(i);
    return out;
  }
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      const auto dash = part.find('-');
      if (part == "full") {
        out.push_back(all_max);
      } else if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const std::size_t lo = std::stoull(part.substr(0, dash));
        const std::size_t hi = std::stoull(part.substr(dash + 1));
        for (std::size_t i = lo; i <= hi; ++i) out.push_back(i);
      }
    } catch (const std::logic_error&) {
      throw ArgumentError("cannot parse index list '" + spec + "'");
    }
  }
  return out;
}

inline ModelBundle load_model(const RunConfig& cfg) {
  if (cfg.model.empty()) throw ArgumentError("--model is required");
  if (!fs::exists(cfg.model)) throw NotFoundError("model '" + cfg.model + "' not found");
  std::optional<fs::path> tok;
  if (!cfg.tokenizer.empty()) tok = cfg.tokenizer;
  return load_model_bundle(cfg.model, tok);
}

inline fs::path lens_path(const fs::path& dir, const std::string& kind) {
  return dir / ("lens-" + kind + ".safetensors");
}

/// Lenses in report order: raw, concept, token, all.
inline std::vector<Lens> build_lenses(const RunConfig& cfg, const ModelBundle& bundle) {
  std::vector<Lens> lenses{identity_lens(bundle.config.d)};
  for (const auto& [path, kind] : {std::pair{cfg.heads_concept, HeadSetKind::concept_heads},
                                   std::pair{cfg.heads_token, HeadSetKind::token_heads}}) {
    if (path.empty()) continue;
    HeadSet set = top_k(load_head_set(path, bundle), cfg.k);
    set.kind = kind;
    lenses.push_back(build_lens(bundle, set));
  }
  lenses.push_back(build_lens(bundle, all_heads(bundle)));
  return lenses;
}

inline std::vector<Lens> read_lens_dir(const fs::path& dir) {
  std::vector<Lens> lenses;
  for (const char* kind : {"raw", "concept", "token", "all"}) {
    const auto p = lens_path(dir, kind);
    if (fs::exists(p)) lenses.push_back(read_lens(p));
  }
  if (lenses.empty()) throw NotFoundError("no lens-*.safetensors files in '" + dir.string() + "'");
  return lenses;
}

inline int cmd_make_toy(const RunConfig& cfg, ToyConfig toy) {
  std::vector<std::string> extra;
  if (!cfg.tasks.empty()) {
    for (const auto& task : load_tasks(cfg.tasks, false))
      for (const auto& w : candidate_words(task)) {
        extra.push_back(w);
        extra.push_back(" " + w);
      }
  }
  toy.extra_tokens = extra;
  toy.seed = cfg.seed;
  const ModelBundle bundle = make_toy_bundle(toy);
  const fs::path dir = cfg.out;
  const auto model = write_toy_bundle(bundle, dir);

  // Seeded stand-in rankings; real rankings are supplied as head-set files.
  HeadSet all = all_heads(bundle);
  GaussianSource rng(cfg.seed + 1);
  for (const auto& [name, kind] : {std::pair{"heads-concept.json", HeadSetKind::concept_heads},
                                   std::pair{"heads-token.json", HeadSetKind::token_heads}}) {
    HeadSet ranked = all;
    for (std::size_t i = ranked.heads.size(); i > 1; --i)
      std::swap(ranked.heads[i - 1], ranked.heads[rng.next_u64() % i]);
    ranked.kind = kind;
    ranked.source = "toy-random";
    ranked.scores.clear();
    for (std::size_t i = 0; i < ranked.heads.size(); ++i)
      ranked.scores.push_back(1.0 - static_cast<double>(i) / static_cast<double>(ranked.heads.size()));
    write_head_set(ranked, dir / name);
  }
  std::cerr << "wrote " << model.string() << "\n";
  return kExitOk;
}

inline int cmd_build_lens(const RunConfig& cfg) {
  const ModelBundle bundle = load_model(cfg);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  for (const auto& lens : build_lenses(cfg, bundle)) {
    write_lens(lens, lens_path(dir, lens.name()));
    std::cerr << "wrote " << lens_path(dir, lens.name()).string() << "\n";
  }
  return kExitOk;
}

inline int cmd_embed(const RunConfig& cfg) {
  const ModelBundle bundle = load_model(cfg);
  const auto tasks = load_tasks(cfg.tasks, cfg.no_prefix);
  const auto layers = parse_index_list(cfg.layers, bundle.config.n_layers);
  const EmbeddingStore store = build_embedding_store(bundle, tasks, layers);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_embedding_store(store, dir / "embeddings.safetensors");
  std::cerr << "wrote " << store.size() << " embeddings to "
            << (dir / "embeddings.safetensors").string() << "\n";
  return kExitOk;
}

inline std::vector<IclResult> run_icl(const RunConfig& cfg, const ModelBundle& bundle,
                                      const std::vector<AnalogyTask>& tasks) {
  std::vector<IclResult> results;
  for (const auto& task : tasks) results.push_back(icl_evaluate(bundle, task, cfg.shots, cfg.seed));
  return results;
}

inline int cmd_eval(const RunConfig& cfg) {
  const auto tasks = load_tasks(cfg.tasks, cfg.no_prefix);
  if (tasks.empty()) throw ArgumentError("--tasks is required");
  const Metric metric = parse_metric(cfg.metric);

  std::optional<ModelBundle> bundle;
  if (!cfg.model.empty()) bundle = load_model(cfg);
  std::vector<Lens> lenses;
  if (!cfg.lenses.empty()) {
    lenses = read_lens_dir(cfg.lenses);
  } else if (bundle) {
    lenses = build_lenses(cfg, *bundle);
  } else {
    throw ArgumentError("eval needs --model or --lenses");
  }

  EmbeddingStore store;
  if (!cfg.store.empty()) {
    if (!fs::exists(cfg.store)) throw NotFoundError("embedding store '" + cfg.store + "' not found");
    store = read_embedding_store(cfg.store);
  } else if (bundle) {
    store = build_embedding_store(*bundle, tasks,
                                  parse_index_list(cfg.layers, bundle->config.n_layers));
  } else {
    throw ArgumentError("eval needs --store or --model");
  }
  const std::size_t n_layers = bundle ? bundle->config.n_layers : store.n_layers();
  const auto layers = parse_index_list(cfg.layers, n_layers);
  const std::size_t d = lenses.front().dim();
  const auto ranks = cfg.ranks.empty() ? std::vector<std::size_t>{}
                                       : parse_index_list(cfg.ranks, d);

  std::map<std::string, double> icl_by_task;
  std::vector<IclResult> icl_results;
  if (cfg.icl) {
    if (!bundle) throw ArgumentError("--icl needs --model");
    icl_results = run_icl(cfg, *bundle, tasks);
    for (const auto& r : icl_results) icl_by_task[r.task] = r.accuracy;
  }

  std::vector<EvalReport> reports;
  std::vector<std::pair<std::string, std::vector<double>>> spectra;
  for (const auto& task : tasks) {
    auto sweep = layer_sweep(task, lenses, store, layers, metric);
    if (!ranks.empty()) {
      for (const auto& lens : lenses) {
        if (lens.kind == LensKind::identity) continue;
        const std::size_t best = best_layer(sweep, lens.name());
        auto by_rank = rank_sweep(task, lens, best, store, ranks, metric);
        sweep.insert(sweep.end(), by_rank.begin(), by_rank.end());
      }
    }
    for (auto& r : sweep) {
      if (auto it = icl_by_task.find(r.task); it != icl_by_task.end()) r.icl_accuracy = it->second;
      std::cerr << r.task << " " << r.lens << " layer=" << r.layer
                << (r.rank_r ? " rank=" + std::to_string(*r.rank_r) : std::string()) << " acc="
                << format_double(r.accuracy) << "\n";
    }
    reports.insert(reports.end(), sweep.begin(), sweep.end());
  }
  if (!ranks.empty()) {
    for (const auto& lens : lenses)
      if (lens.kind != LensKind::identity) spectra.emplace_back(lens.name(), singular_spectrum(lens).values);
  }

  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_file_bytes(dir / "report.csv", reports_to_csv(reports));
  nlohmann::json j;
  j["metric"] = metric_name(metric);
  j["prefix_mode"] = cfg.no_prefix ? "without" : "with";
  j["k"] = cfg.k;
  j["seed"] = cfg.seed;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(report_to_json(r));
  if (cfg.icl) {
    j["icl"] = nlohmann::json::array();
    for (const auto& r : icl_results) j["icl"].push_back(icl_to_json(r));
  }
  write_file_bytes(dir / "report.json", dump_json(j));
  if (!spectra.empty()) write_file_bytes(dir / "spectra.csv", spectra_to_csv(spectra));
  return kExitOk;
}

inline int cmd_icl(const RunConfig& cfg) {
  const ModelBundle bundle = load_model(cfg);
  const auto tasks = load_tasks(cfg.tasks, cfg.no_prefix);
  const auto results = run_icl(cfg, bundle, tasks);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  write_file_bytes(dir / "icl.csv", icl_to_csv(results));
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) j.push_back(icl_to_json(r));
  write_file_bytes(dir / "icl.json", dump_json(j));
  for (const auto& r : results)
    std::cerr << r.task << " " << r.shots << "-shot acc=" << format_double(r.accuracy) << "\n";
  return kExitOk;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Concept/token lens construction and parallelogram-arithmetic evaluation"};
  app.require_subcommand(1);
  RunConfig cfg;
  ToyConfig toy;

  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--model", cfg.model, "model bundle (named-tensor container)");
    sub->add_option("--tokenizer", cfg.tokenizer, "tokenizer JSON (default: next to the model)");
  };
  auto add_heads = [&](CLI::App* sub) {
    sub->add_option("--heads-concept", cfg.heads_concept, "ranked concept head-set JSON");
    sub->add_option("--heads-token", cfg.heads_token, "ranked token head-set JSON");
    sub->add_option("--k", cfg.k, "number of top-ranked heads per lens")->capture_default_str();
  };
  auto add_tasks = [&](CLI::App* sub) {
    sub->add_option("--tasks", cfg.tasks, "task JSON, analogy.txt#section or analogy.txt");
    sub->add_flag("--no-prefix", cfg.no_prefix, "embed words without their task prefix");
  };
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", cfg.out, "output directory")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "seed for all sampling")->capture_default_str();
  };

  auto* make_toy = app.add_subcommand("make-toy", "write a random toy model and head sets");
  add_common(make_toy);
  make_toy->add_option("--tasks", cfg.tasks, "tasks whose words become vocabulary tokens");
  make_toy->add_option("--layers", toy.n_layers, "number of blocks")->capture_default_str();
  make_toy->add_option("--heads", toy.n_heads, "attention heads per block")->capture_default_str();
  make_toy->add_option("--kv-heads", toy.n_kv_heads, "key/value heads")->capture_default_str();
  make_toy->add_option("--d", toy.d, "hidden dimension")->capture_default_str();
  make_toy->add_option("--d-ff", toy.d_ff, "MLP hidden dimension")->capture_default_str();

  auto* build = app.add_subcommand("build-lens", "build and cache raw/concept/token/all lenses");
  add_model(build);
  add_heads(build);
  add_common(build);

  auto* embed = app.add_subcommand("embed", "capture word embeddings for every task word");
  add_model(embed);
  add_tasks(embed);
  add_common(embed);
  embed->add_option("--layers", cfg.layers, "layers to capture (all, 0-4, 0,2)")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "layer and rank sweeps of nearest-neighbour accuracy");
  add_model(eval);
  add_heads(eval);
  add_tasks(eval);
  add_common(eval);
  eval->add_option("--layers", cfg.layers, "layers to evaluate")->capture_default_str();
  eval->add_option("--ranks", cfg.ranks, "ranks for the truncation sweep at each lens's best layer");
  eval->add_option("--metric", cfg.metric, "cosine or euclidean")->capture_default_str();
  eval->add_option("--store", cfg.store, "precomputed embedding store");
  eval->add_option("--lenses", cfg.lenses, "directory of cached lenses");
  eval->add_flag("--icl", cfg.icl, "also compute the few-shot baseline");
  eval->add_option("--shots", cfg.shots, "demonstrations per ICL prompt")->capture_default_str();

  auto* icl = app.add_subcommand("icl", "few-shot greedy-decoding baseline");
  add_model(icl);
  add_tasks(icl);
  add_common(icl);
  icl->add_option("--shots", cfg.shots, "demonstrations per prompt")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*make_toy) return cmd_make_toy(cfg, toy);
    if (*build) return cmd_build_lens(cfg);
    if (*embed) return cmd_embed(cfg);
    if (*eval) return cmd_eval(cfg);
    if (*icl) return cmd_icl(cfg);
  } catch (const CoverageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCoverage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace ovlens::cli
