#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ovlens/error.hpp"
#include "ovlens/matrix.hpp"
#include "ovlens/model_store.hpp"
#include "ovlens/parallel.hpp"
#include "ovlens/svd.hpp"
#include "ovlens/tensor_file.hpp"

namespace ovlens {

enum class LensKind { identity, concept_lens, token_lens, all_heads, custom };

inline std::string_view lens_kind_name(LensKind k) {
  switch (k) {
    case LensKind::identity: return "raw";
    case LensKind::concept_lens: return "concept";
    case LensKind::token_lens: return "token";
    case LensKind::all_heads: return "all";
    case LensKind::custom: return "custom";
  }
  return "custom";
}

inline LensKind parse_lens_kind(const std::string& s) {
  if (s == "raw" || s == "identity") return LensKind::identity;
  if (s == "concept") return LensKind::concept_lens;
  if (s == "token") return LensKind::token_lens;
  if (s == "all") return LensKind::all_heads;
  if (s == "custom") return LensKind::custom;
  throw FormatError("unknown lens kind '" + s + "'");
}

inline LensKind lens_kind_for(HeadSetKind k) {
  switch (k) {
    case HeadSetKind::concept_heads: return LensKind::concept_lens;
    case HeadSetKind::token_heads: return LensKind::token_lens;
    case HeadSetKind::all_heads: return LensKind::all_heads;
    case HeadSetKind::custom: return LensKind::custom;
  }
  return LensKind::custom;
}

/// A d x d transform applied to residual states before analogy arithmetic.
struct Lens {
  Matrix matrix;
  LensKind kind = LensKind::custom;
  std::optional<HeadSet> source_heads;
  std::optional<std::size_t> rank_r;  // empty = untruncated

  std::size_t dim() const noexcept { return matrix.rows(); }
  std::string name() const { return std::string(lens_kind_name(kind)); }
};

/// O V for one head: the d x d map it writes into the residual stream.
inline Matrix head_ov(const AttentionHeadWeights& w) {
  if (w.output.cols() != w.value.rows() || w.output.rows() != w.value.cols()) {
    throw ShapeError("head_ov: O " + shape_string(w.output) + " and V " + shape_string(w.value) +
                     " are not (d,m) and (m,d)");
  }
  return mat_mul(w.output, w.value);
}

/// Sum of O V over the set. Rows are accumulated in parallel, each row
/// summing heads in set order, so the result is independent of threading.
inline Lens build_lens(const ModelBundle& bundle, const HeadSet& set) {
  const std::size_t d = bundle.config.d;
  for (const auto& id : set.heads) check_head(bundle.config, id);
  Lens lens{Matrix(d, d), lens_kind_for(set.kind), set, std::nullopt};
  for (const auto& id : set.heads) {
    const AttentionHeadWeights w = slice_head_weights(bundle, id);
    parallel_for(d, [&](std::size_t i) {
      auto out_row = lens.matrix.row(i);
      for (std::size_t k = 0; k < w.output.cols(); ++k) {
        const double o = w.output(i, k);
        if (o == 0.0) continue;
        auto v_row = w.value.row(k);
        for (std::size_t j = 0; j < d; ++j) out_row[j] += o * v_row[j];
      }
    });
  }
  return lens;
}

inline Lens identity_lens(std::size_t d) {
  if (d == 0) throw ArgumentError("identity_lens: d must be >= 1");
  return {Matrix::identity(d), LensKind::identity, std::nullopt, std::nullopt};
}

inline Lens custom_lens(Matrix m, LensKind kind = LensKind::custom) {
  if (m.rows() != m.cols()) throw ShapeError("lens matrix must be square, got " + shape_string(m));
  return {std::move(m), kind, std::nullopt, std::nullopt};
}

inline SingularSpectrum singular_spectrum(const Lens& lens) { return svd(lens.matrix); }

/// Truncation from a precomputed spectrum of lens.matrix.
inline Lens truncate_lens(const Lens& lens, const SingularSpectrum& spectrum, std::size_t r) {
  if (r > lens.dim()) {
    throw ArgumentError("truncate_lens: r=" + std::to_string(r) + " outside [0," +
                        std::to_string(lens.dim()) + "]");
  }
  Lens out = lens;
  out.matrix = r == 0 ? Matrix(lens.dim(), lens.dim()) : reconstruct(spectrum, r);
  out.rank_r = r;
  return out;
}

/// Keeps the top-r singular components of the lens.
inline Lens truncate_lens(const Lens& lens, std::size_t r) {
  if (r > lens.dim()) {
    throw ArgumentError("truncate_lens: r=" + std::to_string(r) + " outside [0," +
                        std::to_string(lens.dim()) + "]");
  }
  if (r == 0) return truncate_lens(lens, SingularSpectrum{}, 0);
  return truncate_lens(lens, singular_spectrum(lens), r);
}

// Cache file: one f64 tensor "lens" plus metadata {kind, k, rank_r, source_heads}.

inline TensorFile lens_to_file(const Lens& lens) {
  TensorFile f;
  f.tensors["lens"] = Tensor::from_matrix(lens.matrix, DType::f64);
  f.metadata["kind"] = lens_kind_name(lens.kind);
  f.metadata["d"] = std::to_string(lens.dim());
  f.metadata["k"] = std::to_string(lens.source_heads ? lens.source_heads->k() : 0);
  f.metadata["rank_r"] = lens.rank_r ? std::to_string(*lens.rank_r) : "none";
  f.metadata["source_heads"] =
      lens.source_heads ? head_set_to_json(*lens.source_heads).dump() : "null";
  return f;
}

inline Lens lens_from_file(const TensorFile& f) {
  Lens lens;
  lens.matrix = f.at("lens").value;
  if (lens.matrix.rows() != lens.matrix.cols()) {
    throw FormatError("lens tensor is not square: " + shape_string(lens.matrix));
  }
  auto meta = [&](const std::string& key) -> std::string {
    auto it = f.metadata.find(key);
    if (it == f.metadata.end()) throw FormatError("lens metadata missing '" + key + "'");
    return it->second;
  };
  lens.kind = parse_lens_kind(meta("kind"));
  const std::string rank = meta("rank_r");
  if (rank != "none") lens.rank_r = static_cast<std::size_t>(std::stoull(rank));
  const std::string heads = meta("source_heads");
  if (heads != "null") {
    try {
      lens.source_heads = parse_head_set(nlohmann::json::parse(heads));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("lens source_heads: ") + e.what());
    }
  }
  return lens;
}

inline void write_lens(const Lens& lens, const std::filesystem::path& path) {
  write_tensor_file(lens_to_file(lens), path);
}

inline Lens read_lens(const std::filesystem::path& path) {
  return lens_from_file(read_tensor_file(path));
}

}  // namespace ovlens
