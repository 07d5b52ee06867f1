#pragma once

// Named-tensor container: an 8-byte little-endian header length, a JSON
// header mapping tensor name -> {dtype, shape, data_offsets}, then the raw
// little-endian row-major payload. "__metadata__" holds string key/values.
// Layout is compatible with the safetensors format.

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovlens/error.hpp"
#include "ovlens/half.hpp"
#include "ovlens/matrix.hpp"

namespace ovlens {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

enum class DType { f16, f32, f64 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f16: return 2;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  return 0;
}

inline std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::f16: return "f16";
    case DType::f32: return "f32";
    case DType::f64: return "f64";
  }
  return "?";
}

inline DType parse_dtype(std::string s, const std::string& tensor) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "f16") return DType::f16;
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("tensor '" + tensor + "': unsupported dtype '" + s + "'");
}

/// A stored tensor widened to doubles. N-d shapes are viewed as
/// (product of leading dims) x (last dim); the original shape is kept.
struct Tensor {
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  Matrix value;

  static Tensor from_matrix(Matrix m, DType dtype = DType::f32) {
    Tensor t;
    t.dtype = dtype;
    t.shape = {m.rows(), m.cols()};
    t.value = std::move(m);
    return t;
  }

  static Tensor from_vector(const Vector& v, DType dtype = DType::f32) {
    Tensor t;
    t.dtype = dtype;
    t.shape = {v.dim()};
    t.value = Matrix(1, v.dim(), v.values());
    return t;
  }

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

struct TensorFile {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("missing tensor '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

namespace detail {

inline std::pair<std::size_t, std::size_t> matrix_view(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return {1, 1};
  const std::size_t last = shape.back();
  std::size_t lead = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) lead *= shape[i];
  return {lead, last};
}

inline void decode_payload(const char* src, DType dtype, std::span<double> dst) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    switch (dtype) {
      case DType::f16: {
        std::uint16_t h;
        std::memcpy(&h, src + 2 * i, 2);
        dst[i] = half_to_float(h);
        break;
      }
      case DType::f32: {
        float f;
        std::memcpy(&f, src + 4 * i, 4);
        dst[i] = f;
        break;
      }
      case DType::f64: std::memcpy(&dst[i], src + 8 * i, 8); break;
    }
  }
}

inline void encode_payload(std::span<const double> src, DType dtype, std::string& out) {
  const std::size_t base = out.size();
  out.resize(base + src.size() * dtype_size(dtype));
  char* dst = out.data() + base;
  for (std::size_t i = 0; i < src.size(); ++i) {
    switch (dtype) {
      case DType::f16: {
        const std::uint16_t h = float_to_half(static_cast<float>(src[i]));
        std::memcpy(dst + 2 * i, &h, 2);
        break;
      }
      case DType::f32: {
        const float f = static_cast<float>(src[i]);
        std::memcpy(dst + 4 * i, &f, 4);
        break;
      }
      case DType::f64: std::memcpy(dst + 8 * i, &src[i], 8); break;
    }
  }
}

}  // namespace detail

inline TensorFile parse_tensor_file(std::string_view bytes) {
  if (bytes.size() < 8) throw FormatError("container truncated: no header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) throw FormatError("container truncated: header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("container header is not a JSON object");

  const std::string_view payload = bytes.substr(8 + header_len);
  TensorFile file;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw FormatError("__metadata__ is not an object");
      for (const auto& [k, v] : entry.items())
        file.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      continue;
    }
    try {
      Tensor t;
      t.dtype = parse_dtype(entry.at("dtype").get<std::string>(), name);
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > payload.size()) {
        throw FormatError("tensor '" + name + "': data_offsets out of bounds");
      }
      const std::size_t expected = t.numel() * dtype_size(t.dtype);
      if (offsets[1] - offsets[0] != expected) {
        throw FormatError("tensor '" + name + "': payload has " +
                          std::to_string(offsets[1] - offsets[0]) + " bytes, shape needs " +
                          std::to_string(expected));
      }
      const auto [rows, cols] = detail::matrix_view(t.shape);
      t.value = Matrix(rows, cols);
      detail::decode_payload(payload.data() + offsets[0], t.dtype, t.value.data());
      if (!all_finite(t.value.data())) {
        throw FormatError("tensor '" + name + "': non-finite values");
      }
      file.tensors.emplace(name, std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("tensor '" + name + "': malformed header entry: " + e.what());
    }
  }
  return file;
}

/// Canonical encoding: tensors in name order, compact JSON with sorted keys,
/// header padded with spaces to a multiple of 8 bytes.
inline std::string serialize_tensor_file(const TensorFile& file) {
  nlohmann::json header = nlohmann::json::object();
  if (!file.metadata.empty()) header["__metadata__"] = file.metadata;
  std::string payload;
  for (const auto& [name, t] : file.tensors) {
    if (t.numel() != t.value.size()) {
      throw ShapeError("tensor '" + name + "': shape does not match value size");
    }
    const std::size_t begin = payload.size();
    detail::encode_payload(t.value.data(), t.dtype, payload);
    header[name] = {{"dtype", dtype_name(t.dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {begin, payload.size()}}};
  }
  std::string json = header.dump();
  json.append((8 - json.size() % 8) % 8, ' ');
  std::string out(8, '\0');
  const std::uint64_t len = json.size();
  std::memcpy(out.data(), &len, 8);
  out += json;
  out += payload;
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NotFoundError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  return parse_tensor_file(read_file_bytes(path));
}

inline void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_tensor_file(file));
}

}  // namespace ovlens
