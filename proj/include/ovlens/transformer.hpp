#pragma once

// Minimal Llama-style decoder: pre-norm blocks with RMSNorm, causal
// multi-head attention with rotary embeddings (rotate-half pairing, as in
// the Hugging Face layout), and a SiLU-gated MLP. No KV cache.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "ovlens/error.hpp"
#include "ovlens/matrix.hpp"
#include "ovlens/model_store.hpp"
#include "ovlens/tokenizer.hpp"

namespace ovlens {

/// Residual stream capture. states[0] is the embedding output and
/// states[i] the residual after block i; every entry is indexed by position.
struct CaptureTrace {
  std::vector<std::vector<Vector>> states;              // [n_layers + 1][T]
  std::vector<std::vector<Vector>> normed_attn_inputs;  // [n_layers][T]
  std::vector<std::vector<Vector>> post_attn_states;    // [n_layers][T], before the MLP
  std::vector<std::vector<Matrix>> attention;           // [n_layers][n_heads], T x T
};

struct WordEmbedding {
  std::string word;
  std::string prefix;
  std::size_t layer = 0;
  Vector vec;
};

inline Vector rms_norm(std::span<const double> x, std::span<const double> gain, double eps) {
  if (x.size() != gain.size()) throw ShapeError("rms_norm: gain dim mismatch");
  const double ms = dot(x, x) / static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain[i];
  return y;
}

/// Rotates pairs (i, i + m/2) of one head vector by pos * theta^(-2i/m).
inline void apply_rope(std::span<double> head_vec, std::size_t pos, double theta) {
  const std::size_t half = head_vec.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq =
        std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_vec.size()));
    const double angle = static_cast<double>(pos) * freq;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double a = head_vec[i];
    const double b = head_vec[i + half];
    head_vec[i] = a * c - b * s;
    head_vec[i + half] = a * s + b * c;
  }
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

/// Per-head attention contributions for one layer.
struct AttentionOutputs {
  std::vector<std::vector<Vector>> per_head;  // [n_heads][T], each dim d
  std::vector<Matrix> probs;                  // [n_heads], T x T (row = query)
};

/// Attention of block `layer` given its normalized inputs. Each head's
/// contribution is O_h applied to its attention-weighted value mix.
inline AttentionOutputs attention_layer(const ModelBundle& bundle, std::size_t layer,
                                        const std::vector<Vector>& normed) {
  const ModelConfig& c = bundle.config;
  const std::size_t T = normed.size();
  const std::size_t m = c.m;
  const std::size_t group_size = c.n_heads / c.n_kv_heads;
  const Matrix& wq = bundle.tensor(names::q_proj(layer));
  const Matrix& wk = bundle.tensor(names::k_proj(layer));
  const Matrix& wv = bundle.tensor(names::v_proj(layer));
  const Matrix& wo = bundle.tensor(names::o_proj(layer));

  std::vector<Vector> q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    q[t] = mat_vec(wq, normed[t]);
    k[t] = mat_vec(wk, normed[t]);
    v[t] = mat_vec(wv, normed[t]);
    for (std::size_t h = 0; h < c.n_heads; ++h)
      apply_rope(q[t].span().subspan(h * m, m), t, c.rope_theta);
    for (std::size_t g = 0; g < c.n_kv_heads; ++g)
      apply_rope(k[t].span().subspan(g * m, m), t, c.rope_theta);
  }

  AttentionOutputs out;
  out.per_head.assign(c.n_heads, std::vector<Vector>(T, Vector(c.d)));
  out.probs.assign(c.n_heads, Matrix(T, T));
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  std::vector<double> mixed(m);
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::size_t g = h / group_size;
    Matrix& p = out.probs[h];
    for (std::size_t t = 0; t < T; ++t) {
      auto qh = q[t].span().subspan(h * m, m);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s <= t; ++s) {
        p(t, s) = dot(qh, k[s].span().subspan(g * m, m)) * scale;
        top = std::max(top, p(t, s));
      }
      double total = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        p(t, s) = std::exp(p(t, s) - top);
        total += p(t, s);
      }
      std::fill(mixed.begin(), mixed.end(), 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        p(t, s) /= total;
        auto vs = v[s].span().subspan(g * m, m);
        for (std::size_t i = 0; i < m; ++i) mixed[i] += p(t, s) * vs[i];
      }
      Vector& dst = out.per_head[h][t];
      for (std::size_t r = 0; r < c.d; ++r) {
        auto wo_row = wo.row(r).subspan(h * m, m);
        dst[r] = dot(wo_row, mixed);
      }
    }
  }
  return out;
}

inline void require_forward(const ModelBundle& bundle) {
  if (!bundle.has_forward()) {
    throw ArgumentError("model bundle has attention V/O weights only; forward pass unavailable");
  }
}

namespace detail {

inline std::vector<Vector> embed_tokens(const ModelBundle& bundle, const TokenSeq& tokens) {
  const Matrix& emb = bundle.tensor(names::embed());
  std::vector<Vector> x;
  x.reserve(tokens.ids.size());
  for (std::size_t id : tokens.ids) {
    if (id >= emb.rows()) throw IndexError("token id " + std::to_string(id) + " out of vocabulary");
    auto row = emb.row(id);
    x.emplace_back(std::vector<double>(row.begin(), row.end()));
  }
  return x;
}

inline std::vector<Vector> normalize_all(const std::vector<Vector>& x, const Matrix& gain,
                                         double eps) {
  std::vector<Vector> out;
  out.reserve(x.size());
  for (const auto& v : x) out.push_back(rms_norm(v.span(), gain.row(0), eps));
  return out;
}

}  // namespace detail

inline CaptureTrace forward_capture(const ModelBundle& bundle, const TokenSeq& tokens) {
  require_forward(bundle);
  if (tokens.ids.empty()) throw ArgumentError("forward_capture: empty token sequence");
  const ModelConfig& c = bundle.config;
  CaptureTrace trace;
  std::vector<Vector> x = detail::embed_tokens(bundle, tokens);
  trace.states.push_back(x);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto normed = detail::normalize_all(x, bundle.tensor(names::attn_norm(l)), c.rms_eps);
    AttentionOutputs attn = attention_layer(bundle, l, normed);
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t h = 0; h < c.n_heads; ++h) x[t] = x[t] + attn.per_head[h][t];
    trace.post_attn_states.push_back(x);

    const Matrix& gate = bundle.tensor(names::gate_proj(l));
    const Matrix& up = bundle.tensor(names::up_proj(l));
    const Matrix& down = bundle.tensor(names::down_proj(l));
    const Matrix& gain = bundle.tensor(names::mlp_norm(l));
    for (auto& xt : x) {
      const Vector h = rms_norm(xt.span(), gain.row(0), c.rms_eps);
      Vector g = mat_vec(gate, h);
      const Vector u = mat_vec(up, h);
      for (std::size_t i = 0; i < g.dim(); ++i) g[i] = silu(g[i]) * u[i];
      xt = xt + mat_vec(down, g);
    }
    trace.normed_attn_inputs.push_back(std::move(normed));
    trace.attention.push_back(std::move(attn.probs));
    trace.states.push_back(x);
  }
  return trace;
}

/// What each head writes into the residual stream at every position of
/// block `layer`: result[h][t].
inline std::vector<std::vector<Vector>> head_outputs(const ModelBundle& bundle,
                                                     const TokenSeq& tokens, std::size_t layer) {
  require_forward(bundle);
  if (tokens.ids.empty()) throw ArgumentError("head_outputs: empty token sequence");
  if (layer >= bundle.config.n_layers) {
    throw IndexError("layer " + std::to_string(layer) + " out of range");
  }
  const CaptureTrace trace = forward_capture(bundle, tokens);
  return attention_layer(bundle, layer, trace.normed_attn_inputs[layer]).per_head;
}

inline std::string join_prefix(std::string_view prefix, std::string_view word) {
  if (prefix.empty()) return std::string(word);
  return std::string(prefix) + " " + std::string(word);
}

/// Residual state at the word's final token, layer `layer`.
inline WordEmbedding embed_word(const ModelBundle& bundle, const Tokenizer& tok,
                                std::string_view prefix, std::string_view word, std::size_t layer) {
  if (word.empty()) throw ArgumentError("embed_word: empty word");
  if (layer > bundle.config.n_layers) {
    throw IndexError("layer " + std::to_string(layer) + " out of range [0," +
                     std::to_string(bundle.config.n_layers) + "]");
  }
  const CaptureTrace trace = forward_capture(bundle, tok.tokenize(join_prefix(prefix, word)));
  return {std::string(word), std::string(prefix), layer, trace.states[layer].back()};
}

inline WordEmbedding embed_word(const ModelBundle& bundle, std::string_view prefix,
                                std::string_view word, std::size_t layer) {
  return embed_word(bundle, bundle.tokenizer(), prefix, word, layer);
}

/// Every layer's state at the word's final token, from one forward pass.
inline std::vector<WordEmbedding> embed_word_all_layers(const ModelBundle& bundle,
                                                        const Tokenizer& tok,
                                                        std::string_view prefix,
                                                        std::string_view word) {
  if (word.empty()) throw ArgumentError("embed_word: empty word");
  const CaptureTrace trace = forward_capture(bundle, tok.tokenize(join_prefix(prefix, word)));
  std::vector<WordEmbedding> out;
  for (std::size_t l = 0; l < trace.states.size(); ++l)
    out.push_back({std::string(word), std::string(prefix), l, trace.states[l].back()});
  return out;
}

inline Vector final_logits(const ModelBundle& bundle, const Vector& last_state) {
  const Vector h =
      rms_norm(last_state.span(), bundle.tensor(names::final_norm()).row(0), bundle.config.rms_eps);
  return mat_vec(bundle.tensor(names::lm_head()), h);
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

/// Appends argmax tokens until `stop` appears in the generated text or
/// max_new tokens were produced. Returns only the generated text.
inline std::string greedy_decode(const ModelBundle& bundle, const Tokenizer& tok,
                                 std::string_view prompt, std::size_t max_new,
                                 std::string_view stop) {
  if (max_new == 0) throw ArgumentError("greedy_decode: max_new must be >= 1");
  TokenSeq seq = tok.tokenize(prompt);
  if (seq.ids.empty()) throw ArgumentError("greedy_decode: empty prompt");
  std::string generated;
  for (std::size_t step = 0; step < max_new; ++step) {
    const CaptureTrace trace = forward_capture(bundle, seq);
    const Vector logits = final_logits(bundle, trace.states.back().back());
    const std::size_t next = argmax(logits.span());
    seq.ids.push_back(next);
    generated += tok.decode(next);
    if (!stop.empty() && generated.find(stop) != std::string::npos) break;
  }
  return generated;
}

inline std::string greedy_decode(const ModelBundle& bundle, std::string_view prompt,
                                 std::size_t max_new, std::string_view stop) {
  return greedy_decode(bundle, bundle.tokenizer(), prompt, max_new, stop);
}

}  // namespace ovlens
