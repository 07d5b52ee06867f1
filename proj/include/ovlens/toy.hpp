#pragma once

// Seeded random Llama-architecture bundles small enough for tests, demos and
// the end-to-end CLI run. Weights are rounded to f32 so an in-memory bundle
// equals its serialized form.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovlens/model_store.hpp"
#include "ovlens/tensor_file.hpp"
#include "ovlens/tokenizer.hpp"

namespace ovlens {

/// Gaussian samples from mt19937_64 via Box-Muller; unlike
/// std::normal_distribution the sequence is identical on every platform.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    // 53 random bits in (0, 1)
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct ToyConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 4;
  std::size_t d = 64;
  std::size_t d_ff = 128;
  double rope_theta = 10000.0;
  double rms_eps = 1e-5;
  std::uint64_t seed = 0;
  std::vector<std::string> extra_tokens = {};  // whole-word tokens added to the vocabulary
};

/// 256 byte-fallback tokens, printable ASCII characters, then extra tokens.
inline std::vector<std::string> toy_vocabulary(const std::vector<std::string>& extra) {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  auto add = [&](const std::string& t) {
    if (!t.empty() && seen.insert(t).second) vocab.push_back(t);
  };
  for (int b = 0; b < 256; ++b) add(Tokenizer::byte_token(static_cast<unsigned char>(b)));
  for (char ch = 0x20; ch < 0x7f; ++ch) add(std::string(1, ch));
  add("\n");
  for (const auto& t : extra) add(t);
  return vocab;
}

inline Matrix random_matrix(GaussianSource& rng, std::size_t rows, std::size_t cols, double stddev,
                            double mean = 0.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = static_cast<double>(static_cast<float>(mean + stddev * rng.normal()));
  return m;
}

inline ModelBundle make_toy_bundle(const ToyConfig& cfg) {
  GaussianSource rng(cfg.seed);
  std::vector<std::string> vocab = toy_vocabulary(cfg.extra_tokens);
  const std::size_t m = cfg.d / cfg.n_heads;
  const std::size_t kv_dim = cfg.n_kv_heads * m;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  const double ff_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));

  TensorFile f;
  f.metadata = {{"n_layers", std::to_string(cfg.n_layers)},
                {"n_heads", std::to_string(cfg.n_heads)},
                {"n_kv_heads", std::to_string(cfg.n_kv_heads)},
                {"d", std::to_string(cfg.d)},
                {"vocab_size", std::to_string(vocab.size())},
                {"rope_theta", nlohmann::json(cfg.rope_theta).dump()},
                {"rms_eps", nlohmann::json(cfg.rms_eps).dump()},
                {"source", "toy:seed=" + std::to_string(cfg.seed)}};
  auto put = [&](const std::string& name, Matrix value, bool vector_shape = false) {
    Tensor t = Tensor::from_matrix(std::move(value));
    if (vector_shape) t.shape = {t.value.cols()};
    f.tensors[name] = std::move(t);
  };
  put(names::embed(), random_matrix(rng, vocab.size(), cfg.d, 1.0));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    put(names::attn_norm(l), random_matrix(rng, 1, cfg.d, 0.1, 1.0), true);
    put(names::q_proj(l), random_matrix(rng, cfg.d, cfg.d, w_std));
    put(names::k_proj(l), random_matrix(rng, kv_dim, cfg.d, w_std));
    put(names::v_proj(l), random_matrix(rng, kv_dim, cfg.d, w_std));
    put(names::o_proj(l), random_matrix(rng, cfg.d, cfg.d, w_std));
    put(names::mlp_norm(l), random_matrix(rng, 1, cfg.d, 0.1, 1.0), true);
    put(names::gate_proj(l), random_matrix(rng, cfg.d_ff, cfg.d, w_std));
    put(names::up_proj(l), random_matrix(rng, cfg.d_ff, cfg.d, w_std));
    put(names::down_proj(l), random_matrix(rng, cfg.d, cfg.d_ff, ff_std));
  }
  put(names::final_norm(), random_matrix(rng, 1, cfg.d, 0.1, 1.0), true);
  put(names::lm_head(), random_matrix(rng, vocab.size(), cfg.d, w_std));
  return make_bundle(std::move(f), std::move(vocab));
}

/// Writes "<dir>/<stem>.safetensors" and "<dir>/<stem>.tokenizer.json";
/// returns the model path.
inline std::filesystem::path write_toy_bundle(const ModelBundle& bundle,
                                              const std::filesystem::path& dir,
                                              const std::string& stem = "toy") {
  std::filesystem::create_directories(dir);
  const auto model = dir / (stem + ".safetensors");
  write_bundle(bundle, model);
  write_tokenizer(bundle.vocab, dir / (stem + ".tokenizer.json"));
  return model;
}

}  // namespace ovlens
