#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ovlens;

namespace {

TokenSeq random_tokens(const ModelBundle& b, std::mt19937_64& rng, std::size_t n) {
  TokenSeq seq;
  for (std::size_t i = 0; i < n; ++i) seq.ids.push_back(rng() % b.config.vocab_size);
  return seq;
}

double max_diff(const Vector& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST(Forward, SingleTokenLayerZeroIsEmbeddingRow) {
  const ModelBundle b = make_toy_bundle({});
  const auto trace = forward_capture(b, TokenSeq{{42}, ""});
  ASSERT_EQ(trace.states.size(), 3u);
  const auto row = b.tensor(names::embed()).row(42);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(trace.states[0][0][i], row[i]);
}

TEST(Forward, EmptySequenceThrows) {
  EXPECT_THROW(forward_capture(make_toy_bundle({}), TokenSeq{}), ArgumentError);
}

TEST(Forward, MatchesReferenceImplementation) {
  std::mt19937_64 rng(1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ToyConfig cfg;
    cfg.seed = seed;
    if (seed == 3) {
      cfg.n_heads = 8;
      cfg.n_kv_heads = 2;
    }
    const ModelBundle b = make_toy_bundle(cfg);
    for (std::size_t len : {2u, 5u}) {
      const TokenSeq seq = random_tokens(b, rng, len);
      const auto trace = forward_capture(b, seq);
      const auto ref = oracle::reference_forward(b, seq.ids);
      for (std::size_t l = 0; l <= b.config.n_layers; ++l)
        for (std::size_t t = 0; t < len; ++t) EXPECT_LT(max_diff(trace.states[l][t], ref.states[l][t]), 1e-6);
    }
  }
}

TEST(Forward, AttentionRowsAreCausalDistributions) {
  std::mt19937_64 rng(2);
  const ModelBundle b = make_toy_bundle({.seed = 9});
  const auto trace = forward_capture(b, random_tokens(b, rng, 7));
  for (const auto& layer : trace.attention)
    for (const Matrix& p : layer)
      for (std::size_t t = 0; t < p.rows(); ++t) {
        double sum = 0.0;
        for (std::size_t s = 0; s < p.cols(); ++s) {
          if (s > t) {
            EXPECT_EQ(p(t, s), 0.0);
          }
          EXPECT_GE(p(t, s), 0.0);
          sum += p(t, s);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
}

TEST(Forward, PrefixStatesUnchangedByLaterTokens) {
  std::mt19937_64 rng(3);
  const ModelBundle b = make_toy_bundle({.seed = 4});
  const TokenSeq full = random_tokens(b, rng, 8);
  const auto whole = forward_capture(b, full);
  for (std::size_t t = 1; t < 8; ++t) {
    TokenSeq cut{{full.ids.begin(), full.ids.begin() + t}, ""};
    const auto part = forward_capture(b, cut);
    for (std::size_t l = 0; l < part.states.size(); ++l)
      for (std::size_t p = 0; p < t; ++p)
        EXPECT_LT(max_diff(part.states[l][p], whole.states[l][p].values()), 1e-9);
  }
}

TEST(Rope, PreservesPairNorms) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Vector v = oracle::random_vector(rng, 16);
    const Vector before = v;
    const std::size_t pos = rng() % 5000;
    apply_rope(v.span(), pos, 10000.0);
    for (std::size_t i = 0; i < 8; ++i) {
      const double n0 = std::hypot(before[i], before[i + 8]);
      const double n1 = std::hypot(v[i], v[i + 8]);
      EXPECT_NEAR(n0, n1, 1e-12);
    }
  }
}

TEST(Rope, PositionZeroIsIdentity) {
  std::mt19937_64 rng(5);
  Vector v = oracle::random_vector(rng, 16);
  const Vector before = v;
  apply_rope(v.span(), 0, 10000.0);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(v[i], before[i]);
}

TEST(RmsNorm, UnitRmsAfterRemovingGain) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = oracle::random_vector(rng, 64, 3.0);
    Vector g = oracle::random_vector(rng, 64);
    for (std::size_t i = 0; i < 64; ++i) g[i] = 1.0 + std::abs(g[i]);
    const Vector y = rms_norm(x.span(), g.span(), 0.0);
    double ss = 0.0;
    for (std::size_t i = 0; i < 64; ++i) ss += (y[i] / g[i]) * (y[i] / g[i]);
    EXPECT_NEAR(std::sqrt(ss / 64.0), 1.0, 1e-9);
  }
}

TEST(Forward, NormalizedInputsHaveUnitRmsWithoutEpsilon) {
  std::mt19937_64 rng(7);
  ToyConfig cfg;
  cfg.rms_eps = 0.0;
  const ModelBundle b = make_toy_bundle(cfg);
  EXPECT_EQ(b.config.rms_eps, 0.0);
  const auto trace = forward_capture(b, random_tokens(b, rng, 4));
  for (std::size_t l = 0; l < b.config.n_layers; ++l) {
    const auto g = b.tensor(names::attn_norm(l)).row(0);
    for (const Vector& y : trace.normed_attn_inputs[l]) {
      double ss = 0.0;
      for (std::size_t i = 0; i < 64; ++i) ss += (y[i] / g[i]) * (y[i] / g[i]);
      EXPECT_NEAR(std::sqrt(ss / 64.0), 1.0, 1e-9);
    }
  }
}

TEST(HeadOutputs, SumPlusResidualIsPostAttentionState) {
  std::mt19937_64 rng(8);
  const ModelBundle b = make_toy_bundle({.seed = 11});
  const TokenSeq seq = random_tokens(b, rng, 5);
  const auto trace = forward_capture(b, seq);
  for (std::size_t l = 0; l < b.config.n_layers; ++l) {
    const auto per_head = head_outputs(b, seq, l);
    for (std::size_t t = 0; t < 5; ++t) {
      Vector sum = trace.states[l][t];
      for (const auto& h : per_head) sum = sum + h[t];
      EXPECT_LT(max_diff(sum, trace.post_attn_states[l][t].values()), 1e-9);
    }
  }
}

TEST(HeadOutputs, SingleTokenEqualsHeadProductOnNormedInput) {
  const ModelBundle b = make_toy_bundle({.seed = 12});
  const TokenSeq seq{{100}, ""};
  const auto trace = forward_capture(b, seq);
  for (std::size_t l = 0; l < b.config.n_layers; ++l) {
    const auto per_head = head_outputs(b, seq, l);
    for (std::size_t h = 0; h < b.config.n_heads; ++h) {
      const auto w = slice_head_weights(b, {l, h});
      const Matrix ov = oracle::naive_mat_mul(w.output, w.value);
      const auto expected = oracle::naive_mat_vec(ov, trace.normed_attn_inputs[l][0].values());
      EXPECT_LT(max_diff(per_head[h][0], expected), 1e-9);
    }
  }
}

TEST(HeadOutputs, ZeroOutputProjectionGivesZero) {
  ModelBundle toy = make_toy_bundle({});
  TensorFile f = toy.file;
  f.tensors[names::o_proj(1)].value = Matrix(64, 64);
  const ModelBundle b = make_bundle(f, toy.vocab);
  for (const auto& h : head_outputs(b, TokenSeq{{1, 2, 3}, ""}, 1))
    for (const auto& v : h) EXPECT_EQ(norm(v.span()), 0.0);
}

TEST(HeadOutputs, LayerOutOfRange) {
  EXPECT_THROW(head_outputs(make_toy_bundle({}), TokenSeq{{1}, ""}, 2), IndexError);
}

TEST(EmbedWord, PrefixedWordIsLastTokenState) {
  const ModelBundle b = make_toy_bundle({.extra_tokens = {" Athens", "She", " travelled", " to"}});
  const Tokenizer tok = b.tokenizer();
  const auto seq = tok.tokenize("She travelled to Athens");
  EXPECT_EQ(seq.ids.size(), 4u);
  const auto trace = forward_capture(b, seq);
  for (std::size_t l = 0; l <= 2; ++l) {
    const WordEmbedding e = embed_word(b, "She travelled to", "Athens", l);
    EXPECT_EQ(e.layer, l);
    EXPECT_EQ(e.prefix, "She travelled to");
    EXPECT_LT(max_diff(e.vec, trace.states[l].back().values()), 0.0 + 1e-15);
  }
}

TEST(EmbedWord, LayerZeroSingleTokenIsEmbeddingRow) {
  const ModelBundle b = make_toy_bundle({});
  const Tokenizer tok = b.tokenizer();
  const auto id = tok.tokenize("Q").ids.at(0);
  const WordEmbedding e = embed_word(b, "", "Q", 0);
  const auto row = b.tensor(names::embed()).row(id);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(e.vec[i], row[i]);
}

TEST(EmbedWord, MultiTokenWordUsesLastPosition) {
  const ModelBundle b = make_toy_bundle({});
  const auto seq = b.tokenizer().tokenize("Helsinki");
  EXPECT_EQ(seq.ids.size(), 8u);
  const auto trace = forward_capture(b, seq);
  const auto all = embed_word_all_layers(b, b.tokenizer(), "", "Helsinki");
  ASSERT_EQ(all.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_LT(max_diff(all[l].vec, trace.states[l][7].values()), 1e-15);
}

TEST(EmbedWord, Errors) {
  const ModelBundle b = make_toy_bundle({});
  EXPECT_THROW(embed_word(b, "x", "", 0), ArgumentError);
  EXPECT_THROW(embed_word(b, "", "x", 3), IndexError);
}

TEST(GreedyDecode, RiggedHeadEmitsTarget) {
  const ModelBundle b = oracle::bigram_bundle({{":", "X"}, {"X", "Y"}, {"Y", "Z"}});
  EXPECT_EQ(greedy_decode(b, "a :", 3, ""), "XYZ");
  EXPECT_EQ(greedy_decode(b, "a :", 10, "Y"), "XY");
  EXPECT_EQ(greedy_decode(b, "a :", 1, "\n"), "X");
  EXPECT_EQ(greedy_decode(b, "a :", 10, "\n"), "XYZ\n");
}

TEST(GreedyDecode, DeterministicAndSingleStep) {
  const ModelBundle b = make_toy_bundle({.seed = 21});
  const std::string one = greedy_decode(b, "king : queen\nman :", 1, "\n");
  const Tokenizer tok = b.tokenizer();
  const auto trace = forward_capture(b, tok.tokenize("king : queen\nman :"));
  EXPECT_EQ(one, tok.decode(argmax(final_logits(b, trace.states.back().back()).span())));
  EXPECT_EQ(greedy_decode(b, "king : queen\nman :", 6, "\n"), greedy_decode(b, "king : queen\nman :", 6, "\n"));
  EXPECT_THROW(greedy_decode(b, "x", 0, "\n"), ArgumentError);
}

TEST(Argmax, LowestIndexWinsTies) {
  const std::vector<double> xs{1.0, 3.0, 3.0, -1.0};
  EXPECT_EQ(argmax(xs), 1u);
}
