#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovlens/error.hpp"
#include "ovlens/lens.hpp"
#include "ovlens/matrix.hpp"
#include "ovlens/model_store.hpp"
#include "ovlens/parallel.hpp"
#include "ovlens/tensor_file.hpp"
#include "ovlens/transformer.hpp"

namespace ovlens {

using WordPair = std::pair<std::string, std::string>;

/// Word tuples sharing one relation, plus the context prefix used when
/// embedding every word of the task.
struct AnalogyTask {
  std::string name;
  std::string prefix;
  std::vector<WordPair> pairs;
};

/// Query "a - b + b' ~ a'" built from tuple src = (a, b) and dst = (a', b').
struct AnalogyQuery {
  std::size_t src = 0;
  std::size_t dst = 0;

  bool operator==(const AnalogyQuery&) const = default;
};

enum class Metric { cosine, euclidean };

inline Metric parse_metric(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "euclidean") return Metric::euclidean;
  throw ArgumentError("unknown metric '" + s + "' (expected cosine or euclidean)");
}

inline std::string_view metric_name(Metric m) {
  return m == Metric::cosine ? "cosine" : "euclidean";
}

// ---------------------------------------------------------------------------
// Datasets

inline AnalogyTask make_task(std::string name, std::string prefix,
                             const std::vector<WordPair>& raw_pairs) {
  AnalogyTask task{std::move(name), std::move(prefix), {}};
  std::set<WordPair> seen;
  for (const auto& p : raw_pairs)
    if (seen.insert(p).second) task.pairs.push_back(p);
  if (task.pairs.size() < 2) {
    throw ValidationError("task '" + task.name + "' needs at least 2 distinct pairs, has " +
                          std::to_string(task.pairs.size()));
  }
  return task;
}

inline AnalogyTask parse_task_json(const nlohmann::json& j) {
  try {
    std::vector<WordPair> pairs;
    for (const auto& p : j.at("pairs")) {
      if (!p.is_array() || p.size() != 2) throw FormatError("each pair must be [a, b]");
      pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
    return make_task(j.at("name").get<std::string>(), j.value("prefix", std::string()), pairs);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("task JSON: ") + e.what());
  }
}

/// Task file: {"name": ..., "prefix": ..., "pairs": [[a, b], ...]}.
inline AnalogyTask parse_pairs_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open task file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("task file '" + path.string() + "': " + e.what());
  }
  return parse_task_json(j);
}

inline nlohmann::json task_to_json(const AnalogyTask& task) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : task.pairs) pairs.push_back({a, b});
  return {{"name", task.name}, {"prefix", task.prefix}, {"pairs", pairs}};
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// section name -> quadruple lines, in file order
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_word2vec_sections(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open analogy file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::vector<std::string>>> sections;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == ':') {
      sections.emplace_back(trim(std::string_view(t).substr(1)), std::vector<std::string>{});
    } else {
      if (sections.empty()) throw FormatError("analogy line before any ': section' header");
      sections.back().second.push_back(t);
    }
  }
  return sections;
}

}  // namespace detail

inline std::vector<std::string> list_word2vec_sections(const std::filesystem::path& path) {
  std::vector<std::string> names;
  for (const auto& [name, lines] : detail::read_word2vec_sections(path)) names.push_back(name);
  return names;
}

/// Unique (a, b) tuples of one section: each line "a b a' b'" yields (a, b)
/// and (a', b').
inline AnalogyTask parse_word2vec_file(const std::filesystem::path& path,
                                       const std::string& section, const std::string& prefix) {
  for (const auto& [name, lines] : detail::read_word2vec_sections(path)) {
    if (name != section) continue;
    std::vector<WordPair> pairs;
    for (const auto& line : lines) {
      std::istringstream ss(line);
      std::vector<std::string> w{std::istream_iterator<std::string>(ss),
                                 std::istream_iterator<std::string>()};
      if (w.size() != 4) {
        throw FormatError("section '" + section + "': expected 4 words in line '" + line + "'");
      }
      pairs.emplace_back(w[0], w[1]);
      pairs.emplace_back(w[2], w[3]);
    }
    return make_task(section, prefix, pairs);
  }
  throw NotFoundError("section '" + section + "' not found in '" + path.string() + "'");
}

/// All ordered (src, dst) with src != dst, src-major: n(n-1) queries.
inline std::vector<AnalogyQuery> enumerate_queries(const AnalogyTask& task) {
  std::vector<AnalogyQuery> q;
  const std::size_t n = task.pairs.size();
  q.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) q.push_back({i, j});
  return q;
}

/// Unique words over both tuple positions in first-occurrence order.
/// Operands stay in the pool.
inline std::vector<std::string> candidate_words(const AnalogyTask& task) {
  std::vector<std::string> words;
  std::set<std::string> seen;
  for (const auto& [a, b] : task.pairs) {
    if (seen.insert(a).second) words.push_back(a);
    if (seen.insert(b).second) words.push_back(b);
  }
  return words;
}

// ---------------------------------------------------------------------------
// Embedding store

/// Percent-encodes everything except RFC 3986 unreserved characters.
inline std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 15];
    }
  }
  return out;
}

inline std::string url_decode(std::string_view s) {
  auto hex = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw FormatError("bad percent-escape in '" + std::string(s) + "'");
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%') {
      if (i + 2 >= s.size()) throw FormatError("truncated percent-escape in '" + std::string(s) + "'");
      out += static_cast<char>(hex(s[i + 1]) * 16 + hex(s[i + 2]));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

/// Word vectors keyed by (prefix, word, layer).
class EmbeddingStore {
 public:
  using Key = std::tuple<std::string, std::string, std::size_t>;

  EmbeddingStore() = default;
  EmbeddingStore(std::size_t d, std::size_t n_layers, std::string source)
      : d_(d), n_layers_(n_layers), source_(std::move(source)) {}

  std::size_t d() const noexcept { return d_; }
  std::size_t n_layers() const noexcept { return n_layers_; }
  const std::string& source() const noexcept { return source_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<Key, Vector>& entries() const noexcept { return entries_; }

  void put(const std::string& prefix, const std::string& word, std::size_t layer, Vector vec) {
    if (vec.dim() != d_) {
      throw ShapeError("embedding for '" + word + "' has dim " + std::to_string(vec.dim()) +
                       ", store expects " + std::to_string(d_));
    }
    entries_[Key{prefix, word, layer}] = std::move(vec);
  }

  void put(const WordEmbedding& e) { put(e.prefix, e.word, e.layer, e.vec); }

  bool contains(const std::string& prefix, const std::string& word, std::size_t layer) const {
    return entries_.count(Key{prefix, word, layer}) != 0;
  }

  const Vector& get(const std::string& prefix, const std::string& word, std::size_t layer) const {
    auto it = entries_.find(Key{prefix, word, layer});
    if (it == entries_.end()) {
      throw CoverageError("no embedding for word '" + word + "' (prefix '" + prefix +
                          "', layer " + std::to_string(layer) + ")");
    }
    return it->second;
  }

  WordEmbedding embedding(const std::string& prefix, const std::string& word,
                          std::size_t layer) const {
    return {word, prefix, layer, get(prefix, word, layer)};
  }

  static std::string tensor_name(const std::string& prefix, const std::string& word,
                                 std::size_t layer) {
    return "emb/" + std::to_string(layer) + "/" + url_encode(prefix) + "/" + url_encode(word);
  }

  TensorFile to_file(DType dtype = DType::f64) const {
    TensorFile f;
    f.metadata = {{"d", std::to_string(d_)},
                  {"n_layers", std::to_string(n_layers_)},
                  {"source", source_}};
    for (const auto& [key, vec] : entries_) {
      const auto& [prefix, word, layer] = key;
      f.tensors[tensor_name(prefix, word, layer)] = Tensor::from_vector(vec, dtype);
    }
    return f;
  }

  static EmbeddingStore from_file(const TensorFile& f) {
    auto meta = [&](const std::string& key) {
      auto it = f.metadata.find(key);
      if (it == f.metadata.end()) throw FormatError("embedding store metadata missing '" + key + "'");
      return it->second;
    };
    EmbeddingStore store(std::stoull(meta("d")), std::stoull(meta("n_layers")),
                         f.metadata.count("source") ? f.metadata.at("source") : "imported");
    for (const auto& [name, t] : f.tensors) {
      // emb/{layer}/{prefix}/{word}; encoded parts never contain '/'
      const auto p1 = name.find('/');
      const auto p2 = name.find('/', p1 + 1);
      const auto p3 = name.find('/', p2 + 1);
      if (name.compare(0, 4, "emb/") != 0 || p2 == std::string::npos || p3 == std::string::npos ||
          name.find('/', p3 + 1) != std::string::npos) {
        throw FormatError("unexpected tensor '" + name + "' in embedding store");
      }
      const std::size_t layer = std::stoull(name.substr(p1 + 1, p2 - p1 - 1));
      if (t.value.size() != store.d_) {
        throw FormatError("tensor '" + name + "': expected " + std::to_string(store.d_) +
                          " values");
      }
      store.put(url_decode(name.substr(p2 + 1, p3 - p2 - 1)), url_decode(name.substr(p3 + 1)),
                layer, Vector(std::vector<double>(t.value.data().begin(), t.value.data().end())));
    }
    return store;
  }

 private:
  std::size_t d_ = 0;
  std::size_t n_layers_ = 0;
  std::string source_ = "internal-forward";
  std::map<Key, Vector> entries_;
};

inline void write_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  write_tensor_file(store.to_file(), path);
}

inline EmbeddingStore read_embedding_store(const std::filesystem::path& path) {
  return EmbeddingStore::from_file(read_tensor_file(path));
}

/// Embeds every candidate word of every task (one forward pass per word)
/// and keeps the requested layers.
inline EmbeddingStore build_embedding_store(const ModelBundle& bundle,
                                            const std::vector<AnalogyTask>& tasks,
                                            const std::vector<std::size_t>& layers) {
  for (std::size_t l : layers)
    if (l > bundle.config.n_layers) throw IndexError("layer " + std::to_string(l) + " out of range");
  std::set<std::pair<std::string, std::string>> unique;
  for (const auto& task : tasks)
    for (const auto& w : candidate_words(task)) unique.emplace(task.prefix, w);
  const std::vector<std::pair<std::string, std::string>> jobs(unique.begin(), unique.end());

  const Tokenizer tok = bundle.tokenizer();
  std::vector<std::vector<WordEmbedding>> results(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    results[i] = embed_word_all_layers(bundle, tok, jobs[i].first, jobs[i].second);
  });
  EmbeddingStore store(bundle.config.d, bundle.config.n_layers, "internal-forward");
  for (const auto& per_word : results)
    for (std::size_t l : layers) store.put(per_word[l]);
  return store;
}

// ---------------------------------------------------------------------------
// Parallelogram arithmetic

/// L a - L b + L b'.
inline Vector analogy_vector(const Lens& lens, const WordEmbedding& a, const WordEmbedding& b,
                             const WordEmbedding& b2) {
  if (a.layer != b.layer || a.layer != b2.layer) {
    throw ArgumentError("analogy_vector: operands come from different layers");
  }
  if (a.vec.dim() != lens.dim() || b.vec.dim() != lens.dim() || b2.vec.dim() != lens.dim()) {
    throw ArgumentError("analogy_vector: operand dim does not match lens dim " +
                        std::to_string(lens.dim()));
  }
  return mat_vec(lens.matrix, a.vec) - mat_vec(lens.matrix, b.vec) + mat_vec(lens.matrix, b2.vec);
}

/// Index of the best candidate: highest cosine (or lowest Euclidean
/// distance); ties go to the earliest candidate. Zero-norm candidates are
/// skipped under cosine.
inline std::size_t nearest_neighbor_index(const Vector& query, const std::vector<Vector>& candidates,
                                          Metric metric = Metric::cosine) {
  if (candidates.empty()) throw ArgumentError("nearest_neighbor: no candidates");
  if (norm(query.span()) == 0.0) throw DegenerateError("nearest_neighbor: zero query vector");
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double score = 0.0;
    if (metric == Metric::cosine) {
      if (norm(candidates[i].span()) == 0.0) continue;
      score = cosine_similarity(query, candidates[i]);
    } else {
      score = -euclidean_distance(query.span(), candidates[i].span());
    }
    if (!best || score > best_score) {
      best = i;
      best_score = score;
    }
  }
  if (!best) throw DegenerateError("nearest_neighbor: every candidate has zero norm");
  return *best;
}

inline std::string nearest_neighbor(const Vector& query,
                                    const std::vector<std::pair<std::string, Vector>>& candidates,
                                    Metric metric = Metric::cosine) {
  std::vector<Vector> vecs;
  vecs.reserve(candidates.size());
  for (const auto& c : candidates) vecs.push_back(c.second);
  return candidates[nearest_neighbor_index(query, vecs, metric)].first;
}

struct QueryRecord {
  AnalogyQuery query;
  std::string a, b, b2, expected;
  std::string predicted;  // empty when the query was degenerate
  bool correct = false;
};

struct EvalReport {
  std::string task;
  std::string lens;
  std::size_t layer = 0;
  std::optional<std::size_t> rank_r;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double chance = 0.0;
  std::optional<double> icl_accuracy;
  std::vector<QueryRecord> records;
};

/// Nearest-neighbour accuracy of L a - L b + L b' ~ L a' over every query.
/// Degenerate queries (zero vectors after aggressive truncation) count as wrong.
inline EvalReport evaluate_task(const AnalogyTask& task, const Lens& lens, std::size_t layer,
                                const EmbeddingStore& store, Metric metric = Metric::cosine) {
  const std::vector<std::string> words = candidate_words(task);
  std::map<std::string, std::size_t> index;
  std::vector<Vector> transformed(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    index[words[i]] = i;
    const Vector& v = store.get(task.prefix, words[i], layer);
    if (v.dim() != lens.dim()) {
      throw ArgumentError("embedding dim " + std::to_string(v.dim()) + " does not match lens dim " +
                          std::to_string(lens.dim()));
    }
    transformed[i] = mat_vec(lens.matrix, v);
  }

  const std::vector<AnalogyQuery> queries = enumerate_queries(task);
  EvalReport report;
  report.task = task.name;
  report.lens = lens.name();
  report.layer = layer;
  report.rank_r = lens.rank_r;
  report.total = queries.size();
  report.chance = 1.0 / static_cast<double>(words.size());
  report.records.resize(queries.size());
  parallel_for(queries.size(), [&](std::size_t qi) {
    const AnalogyQuery q = queries[qi];
    const auto& [a, b] = task.pairs[q.src];
    const auto& [a2, b2] = task.pairs[q.dst];
    QueryRecord& rec = report.records[qi];
    rec = {q, a, b, b2, a2, {}, false};
    const Vector query =
        transformed[index.at(a)] - transformed[index.at(b)] + transformed[index.at(b2)];
    try {
      rec.predicted = words[nearest_neighbor_index(query, transformed, metric)];
      rec.correct = rec.predicted == a2;
    } catch (const DegenerateError&) {
      rec.correct = false;
    }
  });
  for (const auto& r : report.records) report.correct += r.correct ? 1 : 0;
  report.accuracy =
      report.total == 0 ? 0.0 : static_cast<double>(report.correct) / static_cast<double>(report.total);
  return report;
}

/// One report per (lens, layer), lens-major.
inline std::vector<EvalReport> layer_sweep(const AnalogyTask& task, const std::vector<Lens>& lenses,
                                           const EmbeddingStore& store,
                                           const std::vector<std::size_t>& layers,
                                           Metric metric = Metric::cosine) {
  std::vector<EvalReport> out;
  out.reserve(lenses.size() * layers.size());
  for (const auto& lens : lenses)
    for (std::size_t layer : layers) out.push_back(evaluate_task(task, lens, layer, store, metric));
  return out;
}

/// Layer with the highest accuracy for `lens`; ties go to the lower layer.
inline std::size_t best_layer(const std::vector<EvalReport>& reports, const std::string& lens) {
  const EvalReport* best = nullptr;
  for (const auto& r : reports) {
    if (r.lens != lens || r.rank_r) continue;
    if (!best || r.accuracy > best->accuracy ||
        (r.accuracy == best->accuracy && r.layer < best->layer)) {
      best = &r;
    }
  }
  if (!best) throw NotFoundError("no reports for lens '" + lens + "'");
  return best->layer;
}

/// Evaluates rank-r truncations of `lens` at one layer. The SVD is
/// computed once and shared by every rank.
inline std::vector<EvalReport> rank_sweep(const AnalogyTask& task, const Lens& lens,
                                          std::size_t layer, const EmbeddingStore& store,
                                          const std::vector<std::size_t>& ranks,
                                          Metric metric = Metric::cosine) {
  for (std::size_t r : ranks) {
    if (r > lens.dim()) {
      throw ArgumentError("rank " + std::to_string(r) + " outside [0," +
                          std::to_string(lens.dim()) + "]");
    }
  }
  const bool need_svd = std::any_of(ranks.begin(), ranks.end(), [](std::size_t r) { return r > 0; });
  const SingularSpectrum spectrum = need_svd ? singular_spectrum(lens) : SingularSpectrum{};
  std::vector<EvalReport> out;
  for (std::size_t r : ranks)
    out.push_back(evaluate_task(task, truncate_lens(lens, spectrum, r), layer, store, metric));
  return out;
}

// ---------------------------------------------------------------------------
// Few-shot baseline

struct IclRecord {
  std::string prompt;
  std::string expected;
  std::string output;
  bool correct = false;
};

struct IclResult {
  std::string task;
  std::size_t shots = 0;
  double accuracy = 0.0;
  std::vector<IclRecord> records;
};

/// Indices of the demonstrations for item `query`: a seeded partial
/// Fisher-Yates draw of `shots` indices from [0, n) \ {query}.
inline std::vector<std::size_t> sample_shots(std::size_t n, std::size_t query, std::size_t shots,
                                             std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (i != query) pool.push_back(i);
  std::mt19937_64 engine(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(query) + 1)));
  for (std::size_t i = 0; i < shots; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(engine() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(shots);
  return pool;
}

/// Prompt of "a : b" demonstration lines ending with "a' :".
inline std::string icl_prompt(const AnalogyTask& task, const std::vector<std::size_t>& demos,
                              std::size_t query) {
  std::string prompt;
  for (std::size_t i : demos) prompt += task.pairs[i].first + " : " + task.pairs[i].second + "\n";
  prompt += task.pairs[query].first + " :";
  return prompt;
}

inline IclResult icl_evaluate(const ModelBundle& bundle, const AnalogyTask& task,
                              std::size_t shots = 5, std::uint64_t seed = 0,
                              std::size_t max_new = 16) {
  const std::size_t n = task.pairs.size();
  if (shots + 1 >= n) {
    throw ValidationError("task '" + task.name + "' has " + std::to_string(n) +
                          " pairs; " + std::to_string(shots) + "-shot evaluation needs at least " +
                          std::to_string(shots + 2));
  }
  require_forward(bundle);
  const Tokenizer tok = bundle.tokenizer();
  IclResult result{task.name, shots, 0.0, std::vector<IclRecord>(n)};
  parallel_for(n, [&](std::size_t q) {
    IclRecord& rec = result.records[q];
    rec.prompt = icl_prompt(task, sample_shots(n, q, shots, seed), q);
    rec.expected = task.pairs[q].second;
    std::string out = greedy_decode(bundle, tok, rec.prompt, max_new, "\n");
    rec.output = detail::trim(out.substr(0, out.find('\n')));
    rec.correct = rec.output == rec.expected;
  });
  std::size_t correct = 0;
  for (const auto& r : result.records) correct += r.correct ? 1 : 0;
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

/// Fraction of pairs (a', b') for which greedy decoding after `shots`
/// demonstrations produces exactly b'.
inline double icl_accuracy(const ModelBundle& bundle, const AnalogyTask& task,
                           std::size_t shots = 5, std::uint64_t seed = 0) {
  return icl_evaluate(bundle, task, shots, seed).accuracy;
}

}  // namespace ovlens
