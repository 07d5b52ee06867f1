#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovlens/error.hpp"
#include "ovlens/matrix.hpp"
#include "ovlens/tensor_file.hpp"
#include "ovlens/tokenizer.hpp"

namespace ovlens {

/// Attention head (layer, head), both 0-based.
struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;
};

inline std::string to_string(const HeadId& id) {
  return "(" + std::to_string(id.layer) + "," + std::to_string(id.head) + ")";
}

enum class HeadSetKind { concept_heads, token_heads, all_heads, custom };

inline std::string_view kind_name(HeadSetKind k) {
  switch (k) {
    case HeadSetKind::concept_heads: return "concept";
    case HeadSetKind::token_heads: return "token";
    case HeadSetKind::all_heads: return "all";
    case HeadSetKind::custom: return "custom";
  }
  return "custom";
}

inline HeadSetKind parse_head_set_kind(const std::string& s) {
  if (s == "concept") return HeadSetKind::concept_heads;
  if (s == "token") return HeadSetKind::token_heads;
  if (s == "all") return HeadSetKind::all_heads;
  if (s == "custom") return HeadSetKind::custom;
  throw ValidationError("unknown head-set kind '" + s + "'");
}

/// Ranked list of heads; order is descending prior-work score.
struct HeadSet {
  HeadSetKind kind = HeadSetKind::custom;
  std::vector<HeadId> heads;
  std::vector<double> scores;  // parallel to heads; empty when unscored
  std::string source;

  std::size_t k() const noexcept { return heads.size(); }
};

/// First k heads of a ranked set.
inline HeadSet top_k(const HeadSet& set, std::size_t k) {
  if (k > set.heads.size()) {
    throw ValidationError("requested top-" + std::to_string(k) + " but head set has only " +
                          std::to_string(set.heads.size()) + " heads");
  }
  HeadSet out = set;
  out.heads.resize(k);
  if (out.scores.size() > k) out.scores.resize(k);
  return out;
}

struct AttentionHeadWeights {
  HeadId head;
  Matrix value;   // m x d
  Matrix output;  // d x m
};

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t vocab_size = 0;
  double rope_theta = 10000.0;
  double rms_eps = 1e-5;
};

/// Tensor names follow the Hugging Face Llama layout.
namespace names {
inline std::string layer_prefix(std::size_t l) { return "model.layers." + std::to_string(l) + "."; }
inline std::string embed() { return "model.embed_tokens.weight"; }
inline std::string final_norm() { return "model.norm.weight"; }
inline std::string lm_head() { return "lm_head.weight"; }
inline std::string attn_norm(std::size_t l) { return layer_prefix(l) + "input_layernorm.weight"; }
inline std::string mlp_norm(std::size_t l) {
  return layer_prefix(l) + "post_attention_layernorm.weight";
}
inline std::string q_proj(std::size_t l) { return layer_prefix(l) + "self_attn.q_proj.weight"; }
inline std::string k_proj(std::size_t l) { return layer_prefix(l) + "self_attn.k_proj.weight"; }
inline std::string v_proj(std::size_t l) { return layer_prefix(l) + "self_attn.v_proj.weight"; }
inline std::string o_proj(std::size_t l) { return layer_prefix(l) + "self_attn.o_proj.weight"; }
inline std::string gate_proj(std::size_t l) { return layer_prefix(l) + "mlp.gate_proj.weight"; }
inline std::string up_proj(std::size_t l) { return layer_prefix(l) + "mlp.up_proj.weight"; }
inline std::string down_proj(std::size_t l) { return layer_prefix(l) + "mlp.down_proj.weight"; }
}  // namespace names

/// Loaded model: config, vocabulary and all tensors widened to doubles.
/// A bundle holding only the attention V/O projections is valid for lens
/// building; the forward pass additionally needs embeddings, norms, Q/K, MLP
/// and the output head (`has_forward()`).
struct ModelBundle {
  ModelConfig config;
  std::vector<std::string> vocab;
  TensorFile file;

  const Matrix& tensor(const std::string& name) const { return file.at(name).value; }
  bool has_forward() const { return file.contains(names::embed()); }
  Tokenizer tokenizer() const { return Tokenizer(vocab); }
};

namespace detail {

inline std::size_t metadata_count(const TensorFile& f, const std::string& key) {
  auto it = f.metadata.find(key);
  if (it == f.metadata.end()) throw FormatError("metadata missing '" + key + "'");
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size() || v < 0) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw FormatError("metadata '" + key + "' is not a non-negative integer: '" + it->second +
                      "'");
  }
}

inline double metadata_scalar(const TensorFile& f, const std::string& key, double fallback) {
  auto it = f.metadata.find(key);
  if (it == f.metadata.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::logic_error&) {
    throw FormatError("metadata '" + key + "' is not a number: '" + it->second + "'");
  }
}

inline void expect_shape(const TensorFile& f, const std::string& name, std::size_t rows,
                         std::size_t cols) {
  const Tensor& t = f.at(name);
  if (t.value.rows() != rows || t.value.cols() != cols) {
    throw FormatError("tensor '" + name + "': shape " + shape_string(t.value) + ", expected (" +
                      std::to_string(rows) + "," + std::to_string(cols) + ")");
  }
}

}  // namespace detail

inline std::vector<std::string> read_tokenizer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open tokenizer '" + path.string() + "'");
  try {
    const auto j = nlohmann::json::parse(in);
    return j.at("tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("tokenizer '" + path.string() + "': " + e.what());
  }
}

inline void write_tokenizer(const std::vector<std::string>& tokens,
                            const std::filesystem::path& path) {
  nlohmann::json j;
  j["tokens"] = tokens;
  write_file_bytes(path, j.dump() + "\n");
}

/// Tokenizer lookup order: explicit path, then "<stem>.tokenizer.json" next to
/// the model file, then "tokenizer.json" in the same directory.
inline std::optional<std::filesystem::path> find_tokenizer(const std::filesystem::path& model) {
  auto sibling = model;
  sibling.replace_extension(".tokenizer.json");
  if (std::filesystem::exists(sibling)) return sibling;
  auto shared = model.parent_path() / "tokenizer.json";
  if (std::filesystem::exists(shared)) return shared;
  return std::nullopt;
}

/// Reads config from metadata and validates every tensor shape.
inline ModelBundle make_bundle(TensorFile file, std::vector<std::string> vocab) {
  ModelBundle b;
  ModelConfig& c = b.config;
  c.n_layers = detail::metadata_count(file, "n_layers");
  c.n_heads = detail::metadata_count(file, "n_heads");
  c.n_kv_heads = file.metadata.count("n_kv_heads") ? detail::metadata_count(file, "n_kv_heads")
                                                    : c.n_heads;
  c.d = detail::metadata_count(file, "d");
  c.vocab_size = file.metadata.count("vocab_size") ? detail::metadata_count(file, "vocab_size")
                                                    : vocab.size();
  c.rope_theta = detail::metadata_scalar(file, "rope_theta", 10000.0);
  c.rms_eps = detail::metadata_scalar(file, "rms_eps", 1e-5);
  if (c.n_heads == 0 || c.n_kv_heads == 0 || c.d == 0) {
    throw FormatError("config: n_heads, n_kv_heads and d must be positive");
  }
  if (c.d % c.n_heads != 0) {
    throw FormatError("config: d=" + std::to_string(c.d) + " is not divisible by n_heads=" +
                      std::to_string(c.n_heads));
  }
  if (c.n_heads % c.n_kv_heads != 0) {
    throw FormatError("config: n_heads must be a multiple of n_kv_heads");
  }
  c.m = c.d / c.n_heads;
  const std::size_t kv_dim = c.n_kv_heads * c.m;

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    detail::expect_shape(file, names::v_proj(l), kv_dim, c.d);
    detail::expect_shape(file, names::o_proj(l), c.d, c.d);
  }
  if (file.contains(names::embed())) {
    detail::expect_shape(file, names::embed(), c.vocab_size, c.d);
    detail::expect_shape(file, names::final_norm(), 1, c.d);
    detail::expect_shape(file, names::lm_head(), c.vocab_size, c.d);
    const std::size_t d_ff = c.n_layers > 0 ? file.at(names::gate_proj(0)).value.rows() : 0;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      detail::expect_shape(file, names::attn_norm(l), 1, c.d);
      detail::expect_shape(file, names::mlp_norm(l), 1, c.d);
      detail::expect_shape(file, names::q_proj(l), c.d, c.d);
      detail::expect_shape(file, names::k_proj(l), kv_dim, c.d);
      detail::expect_shape(file, names::gate_proj(l), d_ff, c.d);
      detail::expect_shape(file, names::up_proj(l), d_ff, c.d);
      detail::expect_shape(file, names::down_proj(l), c.d, d_ff);
    }
    if (vocab.size() != c.vocab_size) {
      throw FormatError("tokenizer has " + std::to_string(vocab.size()) +
                        " tokens, model declares vocab_size=" + std::to_string(c.vocab_size));
    }
    if (!Tokenizer(vocab).has_full_byte_fallback()) {
      throw FormatError("tokenizer lacks <0xNN> byte-fallback tokens for some bytes");
    }
  }
  b.vocab = std::move(vocab);
  b.file = std::move(file);
  return b;
}

inline ModelBundle load_model_bundle(const std::filesystem::path& path,
                                     std::optional<std::filesystem::path> tokenizer = {}) {
  if (!std::filesystem::exists(path)) throw NotFoundError("model '" + path.string() + "' not found");
  TensorFile file = read_tensor_file(path);
  if (!tokenizer) tokenizer = find_tokenizer(path);
  std::vector<std::string> vocab;
  if (tokenizer) vocab = read_tokenizer(*tokenizer);
  return make_bundle(std::move(file), std::move(vocab));
}

/// Writes the container only; the tokenizer is written separately.
inline void write_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_tensor_file(bundle.file, path);
}

inline void check_head(const ModelConfig& c, const HeadId& id) {
  if (id.layer >= c.n_layers || id.head >= c.n_heads) {
    throw IndexError("head " + to_string(id) + " out of range for " + std::to_string(c.n_layers) +
                     " layers x " + std::to_string(c.n_heads) + " heads");
  }
}

/// V = rows [g*m, (g+1)*m) of W_V for the head's key/value group g;
/// O = columns [h*m, (h+1)*m) of W_O.
inline AttentionHeadWeights slice_head_weights(const ModelBundle& bundle, const HeadId& id) {
  const ModelConfig& c = bundle.config;
  check_head(c, id);
  const std::size_t group = id.head / (c.n_heads / c.n_kv_heads);
  const Matrix& wv = bundle.tensor(names::v_proj(id.layer));
  const Matrix& wo = bundle.tensor(names::o_proj(id.layer));
  AttentionHeadWeights w{id, Matrix(c.m, c.d), Matrix(c.d, c.m)};
  for (std::size_t r = 0; r < c.m; ++r) {
    auto src = wv.row(group * c.m + r);
    std::copy(src.begin(), src.end(), w.value.row(r).begin());
  }
  for (std::size_t r = 0; r < c.d; ++r)
    for (std::size_t k = 0; k < c.m; ++k) w.output(r, k) = wo(r, id.head * c.m + k);
  return w;
}

/// Every head in (layer, head) lexicographic order.
inline HeadSet all_heads(const ModelBundle& bundle) {
  HeadSet s;
  s.kind = HeadSetKind::all_heads;
  s.source = "all";
  for (std::size_t l = 0; l < bundle.config.n_layers; ++l)
    for (std::size_t h = 0; h < bundle.config.n_heads; ++h) s.heads.push_back({l, h});
  return s;
}

inline void validate_head_set(const HeadSet& set, const ModelConfig& c) {
  std::set<HeadId> seen;
  for (const auto& id : set.heads) {
    check_head(c, id);
    if (!seen.insert(id).second) throw ValidationError("duplicate head " + to_string(id));
  }
}

/// Parses {"kind": ..., "source": ..., "heads": [{layer, head, score}, ...]}.
/// A bare array is accepted as a custom set.
inline HeadSet parse_head_set(const nlohmann::json& j) {
  HeadSet s;
  try {
    const nlohmann::json* list = &j;
    if (j.is_object()) {
      s.kind = parse_head_set_kind(j.value("kind", std::string("custom")));
      s.source = j.value("source", std::string());
      list = &j.at("heads");
    }
    if (!list->is_array()) throw ValidationError("head set: 'heads' is not an array");
    for (const auto& e : *list) {
      const auto layer = e.at("layer").get<long long>();
      const auto head = e.at("head").get<long long>();
      if (layer < 0 || head < 0) throw ValidationError("head set: negative index");
      s.heads.push_back({static_cast<std::size_t>(layer), static_cast<std::size_t>(head)});
      s.scores.push_back(e.value("score", 0.0));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("head set: ") + e.what());
  }
  return s;
}

inline HeadSet load_head_set(const std::filesystem::path& path, const ModelBundle& bundle) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open head set '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("head set '" + path.string() + "': " + e.what());
  }
  HeadSet s = parse_head_set(j);
  validate_head_set(s, bundle.config);
  return s;
}

inline nlohmann::json head_set_to_json(const HeadSet& set) {
  nlohmann::json heads = nlohmann::json::array();
  for (std::size_t i = 0; i < set.heads.size(); ++i) {
    heads.push_back({{"layer", set.heads[i].layer},
                     {"head", set.heads[i].head},
                     {"score", i < set.scores.size() ? set.scores[i] : 0.0}});
  }
  return {{"kind", kind_name(set.kind)}, {"source", set.source}, {"heads", heads}};
}

inline void write_head_set(const HeadSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, head_set_to_json(set).dump(2) + "\n");
}

}  // namespace ovlens
