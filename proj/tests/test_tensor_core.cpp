#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ovlens/half.hpp"

using namespace ovlens;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

// ||A - B||_2 via Eigen, independent of our SVD.
double eigen_spectral_diff(const Matrix& a, const Matrix& b) {
  const Eigen::MatrixXd diff = to_eigen(a) - to_eigen(b);
  Eigen::JacobiSVD<Eigen::MatrixXd> s(diff);
  return s.singularValues().size() ? s.singularValues()(0) : 0.0;
}

}  // namespace

TEST(Matrix, IdentityTimesMatrix) {
  std::mt19937_64 rng(1);
  const Matrix m = oracle::random_matrix(rng, 3, 5);
  EXPECT_EQ(max_abs_diff(mat_mul(Matrix::identity(3), m), m), 0.0);
}

TEST(Matrix, HandCheckedProduct) {
  const Matrix p = mat_mul(Matrix{{1, 2}, {3, 4}}, Matrix{{0}, {1}});
  ASSERT_EQ(p.rows(), 2u);
  ASSERT_EQ(p.cols(), 1u);
  EXPECT_EQ(p(0, 0), 2.0);
  EXPECT_EQ(p(1, 0), 4.0);
}

TEST(Matrix, ProductMatchesTripleLoop) {
  std::mt19937_64 rng(2);
  const Matrix a = oracle::random_matrix(rng, 8, 8), b = oracle::random_matrix(rng, 8, 8);
  EXPECT_LT(max_abs_diff(mat_mul(a, b), oracle::naive_mat_mul(a, b)), 1e-12);
}

TEST(Matrix, ProductShapeMismatchThrows) {
  EXPECT_THROW(mat_mul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(mat_vec(Matrix(2, 3), Vector(2)), ShapeError);
}

TEST(Matrix, ConstructorRejectsWrongLength) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Matrix, MatVecIdentityAndZero) {
  const Vector x{1.5, -2.0, 3.25};
  const Vector y = mat_vec(Matrix::identity(3), x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], x[i]);
  const Vector z = mat_vec(Matrix(3, 3), x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z[i], 0.0);
}

TEST(Matrix, MatVecMatchesLoop) {
  std::mt19937_64 rng(3);
  const Matrix a = oracle::random_matrix(rng, 16, 16);
  const Vector x = oracle::random_vector(rng, 16);
  const Vector y = mat_vec(a, x);
  const auto ref = oracle::naive_mat_vec(a, x.values());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Matrix, ProductIsAssociative) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = oracle::random_matrix(rng, 7, 9), b = oracle::random_matrix(rng, 9, 5),
                 c = oracle::random_matrix(rng, 5, 6);
    EXPECT_LT(relative_frobenius_error(mat_mul(mat_mul(a, b), c), mat_mul(a, mat_mul(b, c))), 1e-9);
  }
}

TEST(Cosine, HandValues) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vector{1, 1}, Vector{2, 0}), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ZeroOperandIsDegenerate) {
  EXPECT_THROW(cosine_similarity(Vector{0, 0}, Vector{1, 0}), DegenerateError);
  EXPECT_THROW(cosine_similarity(Vector{1, 0}, Vector{0, 0}), DegenerateError);
}

TEST(Cosine, PositiveScaleInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = oracle::random_vector(rng, 12), y = oracle::random_vector(rng, 12);
    const double a = scale(rng), b = scale(rng);
    EXPECT_NEAR(cosine_similarity(a * x, b * y), cosine_similarity(x, y), 1e-12);
  }
}

TEST(Svd, IdentityHasUnitValues) {
  const auto s = svd(Matrix::identity(4));
  ASSERT_EQ(s.values.size(), 4u);
  for (double v : s.values) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Svd, DiagonalWithNegativeEntry) {
  const auto s = svd(Matrix{{3, 0}, {0, -2}});
  EXPECT_NEAR(s.values[0], 3.0, 1e-14);
  EXPECT_NEAR(s.values[1], 2.0, 1e-14);
}

TEST(Svd, RandomReconstructionAndOrthonormality) {
  std::mt19937_64 rng(6);
  for (auto [r, c] : {std::pair{32, 32}, std::pair{20, 9}, std::pair{9, 20}}) {
    const Matrix a = oracle::random_matrix(rng, r, c);
    const auto s = svd(a);
    EXPECT_LE(frobenius_norm(a - reconstruct(s)), 1e-8 * frobenius_norm(a));
    for (std::size_t i = 1; i < s.values.size(); ++i) EXPECT_GE(s.values[i - 1], s.values[i]);
    const Matrix utu = mat_mul(transpose(s.left_basis), s.left_basis);
    const Matrix vtv = mat_mul(transpose(s.right_basis), s.right_basis);
    EXPECT_LT(max_abs_diff(utu, Matrix::identity(utu.rows())), 1e-8);
    EXPECT_LT(max_abs_diff(vtv, Matrix::identity(vtv.rows())), 1e-8);
  }
}

TEST(Svd, MatchesEigenSingularValues) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = oracle::random_matrix(rng, 24, 24);
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(to_eigen(a));
    const auto s = svd(a);
    for (std::size_t i = 0; i < s.values.size(); ++i)
      EXPECT_NEAR(s.values[i], ref.singularValues()(static_cast<Eigen::Index>(i)), 1e-10);
  }
}

TEST(Svd, RankDeficientBasesStayOrthonormal) {
  std::mt19937_64 rng(8);
  const Matrix a = mat_mul(oracle::random_matrix(rng, 16, 3), oracle::random_matrix(rng, 3, 16));
  const auto s = svd(a);
  EXPECT_EQ(numerical_rank(s.values), 3u);
  const Matrix utu = mat_mul(transpose(s.left_basis), s.left_basis);
  EXPECT_LT(max_abs_diff(utu, Matrix::identity(16)), 1e-8);
  EXPECT_LE(frobenius_norm(a - reconstruct(s)), 1e-8 * frobenius_norm(a));
}

TEST(Svd, ZeroMatrix) {
  const auto s = svd(Matrix(5, 5));
  for (double v : s.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(numerical_rank(Matrix(5, 5)), 0u);
}

TEST(Svd, NonFiniteInputThrows) {
  Matrix a = Matrix::identity(3);
  a(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(svd(a), NumericError);
  a(1, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd(a), NumericError);
}

TEST(TruncateRank, FullRankIsNoOp) {
  std::mt19937_64 rng(9);
  const Matrix a = oracle::random_matrix(rng, 10, 10);
  EXPECT_LT(max_abs_diff(truncate_rank(a, 10), a), 1e-8);
}

TEST(TruncateRank, ZeroGivesZeroMatrix) {
  std::mt19937_64 rng(10);
  const Matrix t = truncate_rank(oracle::random_matrix(rng, 6, 4), 0);
  EXPECT_EQ(t.rows(), 6u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(frobenius_norm(t), 0.0);
}

TEST(TruncateRank, DiagonalCase) {
  const Matrix t = truncate_rank(Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 1}}, 2);
  EXPECT_LT(max_abs_diff(t, Matrix{{3, 0, 0}, {0, 2, 0}, {0, 0, 0}}), 1e-12);
}

TEST(TruncateRank, OutOfRangeThrows) {
  EXPECT_THROW(truncate_rank(Matrix(3, 5), 4), ArgumentError);
}

TEST(TruncateRank, ErrorEqualsNextSingularValue) {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::random_matrix(rng, 20, 20);
  Eigen::JacobiSVD<Eigen::MatrixXd> ref(to_eigen(a));
  for (std::size_t r : {1u, 4u, 10u, 19u}) {
    const double expected = ref.singularValues()(static_cast<Eigen::Index>(r));
    EXPECT_NEAR(eigen_spectral_diff(a, truncate_rank(a, r)), expected, 1e-6 * expected);
  }
}

TEST(NumericalRank, HandCases) {
  EXPECT_EQ(numerical_rank(Matrix(4, 4)), 0u);
  Matrix outer(5, 7);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) outer(i, j) = (i + 1.0) * (j - 3.5);
  EXPECT_EQ(numerical_rank(outer), 1u);
  EXPECT_THROW(numerical_rank(outer, 0.0), ArgumentError);
  EXPECT_THROW(numerical_rank(outer, -1.0), ArgumentError);
}

TEST(NumericalRank, HeadProductBoundedByHeadDim) {
  std::mt19937_64 rng(12);
  const Matrix v = oracle::random_matrix(rng, 16, 64), o = oracle::random_matrix(rng, 64, 16);
  EXPECT_LE(numerical_rank(mat_mul(o, v)), 16u);
}

TEST(Half, KnownEncodings) {
  EXPECT_EQ(float_to_half(1.0f), 0x3c00);
  EXPECT_EQ(float_to_half(-2.0f), 0xc000);
  EXPECT_EQ(float_to_half(65504.0f), 0x7bff);
  EXPECT_EQ(half_to_float(0x3555), 0.333251953125f);
  EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));
  EXPECT_TRUE(std::isinf(half_to_float(0x7c00)));
}

TEST(Half, RoundTripsEveryFiniteHalf) {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const auto bits = static_cast<std::uint16_t>(h);
    if ((bits & 0x7c00) == 0x7c00) continue;
    const float f = half_to_float(bits);
    if (f == 0.0f) continue;
    EXPECT_EQ(float_to_half(f), bits) << std::hex << h;
  }
}

TEST(TensorFile, RoundTripIsByteIdentical) {
  std::mt19937_64 rng(13);
  TensorFile f;
  f.metadata = {{"d", "4"}, {"note", "hello"}};
  f.tensors["b"] = Tensor::from_matrix(oracle::random_matrix(rng, 3, 4), DType::f64);
  f.tensors["a"] = Tensor::from_vector(oracle::random_vector(rng, 5), DType::f32);
  Tensor h = Tensor::from_matrix(Matrix{{0.5, -1.25}, {2.0, 1024.0}}, DType::f16);
  h.shape = {1, 2, 2};
  f.tensors["c.half"] = h;
  const std::string bytes = serialize_tensor_file(f);
  const TensorFile g = parse_tensor_file(bytes);
  EXPECT_EQ(serialize_tensor_file(g), bytes);
  EXPECT_EQ(g.metadata, f.metadata);
  EXPECT_EQ(g.tensors.at("b").value.data()[5], f.tensors["b"].value.data()[5]);
  EXPECT_EQ(g.tensors.at("c.half").shape, (std::vector<std::size_t>{1, 2, 2}));
  EXPECT_EQ(g.tensors.at("c.half").value(1, 1), 1024.0);
  EXPECT_EQ(g.tensors.at("a").value.rows(), 1u);
  EXPECT_EQ(g.tensors.at("a").value(0, 2), static_cast<double>(static_cast<float>(f.tensors["a"].value(0, 2))));
}

TEST(TensorFile, LayoutIsSafetensorsCompatible) {
  TensorFile f;
  f.tensors["x"] = Tensor::from_matrix(Matrix{{1.0, 2.0}}, DType::f32);
  const std::string bytes = serialize_tensor_file(f);
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  EXPECT_EQ(n % 8, 0u);
  const auto header = nlohmann::json::parse(bytes.substr(8, n));
  EXPECT_EQ(header["x"]["dtype"], "f32");
  EXPECT_EQ(header["x"]["shape"], nlohmann::json({1, 2}));
  EXPECT_EQ(header["x"]["data_offsets"], nlohmann::json({0, 8}));
  float vals[2];
  std::memcpy(vals, bytes.data() + 8 + n, 8);
  EXPECT_EQ(vals[0], 1.0f);
  EXPECT_EQ(vals[1], 2.0f);
}

TEST(TensorFile, ReadsUppercaseDtypeAndNonStringMetadata) {
  const std::string header =
      R"({"__metadata__":{"n":3},"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
  std::string bytes(8, '\0');
  const std::uint64_t n = header.size();
  std::memcpy(bytes.data(), &n, 8);
  bytes += header;
  const float vals[2] = {3.0f, -1.0f};
  bytes.append(reinterpret_cast<const char*>(vals), 8);
  const TensorFile f = parse_tensor_file(bytes);
  EXPECT_EQ(f.metadata.at("n"), "3");
  EXPECT_EQ(f.at("w").value(0, 1), -1.0);
}

TEST(TensorFile, ShapeOverShortPayloadNamesTensor) {
  TensorFile f;
  f.tensors["model.layers.0.self_attn.v_proj.weight"] =
      Tensor::from_matrix(Matrix(4, 4, 1.0), DType::f32);
  std::string bytes = serialize_tensor_file(f);
  // Rewrite the declared shape to (64,64) over the same 16-float payload.
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  auto header = nlohmann::json::parse(bytes.substr(8, n));
  header["model.layers.0.self_attn.v_proj.weight"]["shape"] = {64, 64};
  const std::string h = header.dump();
  std::string forged(8, '\0');
  const std::uint64_t hn = h.size();
  std::memcpy(forged.data(), &hn, 8);
  forged += h + bytes.substr(8 + n);
  try {
    parse_tensor_file(forged);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("v_proj"), std::string::npos);
  }
}

TEST(TensorFile, GarbageIsFormatError) {
  EXPECT_THROW(parse_tensor_file("abc"), FormatError);
  EXPECT_THROW(parse_tensor_file(std::string("\xff\xff\xff\xff\x00\x00\x00\x00{}", 10)), FormatError);
  std::string bad(8, '\0');
  bad[0] = 4;
  bad += "nope";
  EXPECT_THROW(parse_tensor_file(bad), FormatError);
  std::string arr(8, '\0');
  arr[0] = 2;
  arr += "[]";
  EXPECT_THROW(parse_tensor_file(arr), FormatError);
}

TEST(TensorFile, UnknownDtypeAndOffsetsRejected) {
  auto build = [](const std::string& header, std::size_t payload) {
    std::string b(8, '\0');
    const std::uint64_t n = header.size();
    std::memcpy(b.data(), &n, 8);
    return b + header + std::string(payload, '\0');
  };
  EXPECT_THROW(parse_tensor_file(build(R"({"w":{"dtype":"I8","shape":[2],"data_offsets":[0,2]}})", 2)),
               FormatError);
  EXPECT_THROW(parse_tensor_file(build(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", 4)),
               FormatError);
  EXPECT_THROW(parse_tensor_file(build(R"({"w":{"dtype":"F32","shape":[2]}})", 8)), FormatError);
}

TEST(TensorFile, NonFiniteValuesRejected) {
  TensorFile f;
  f.tensors["w"] = Tensor::from_matrix(Matrix{{1.0, std::numeric_limits<double>::infinity()}}, DType::f64);
  EXPECT_THROW(parse_tensor_file(serialize_tensor_file(f)), FormatError);
}

TEST(TensorFile, MissingFileIsNotFound) {
  EXPECT_THROW(read_tensor_file("/nonexistent/x.safetensors"), NotFoundError);
  EXPECT_THROW(TensorFile{}.at("w"), FormatError);
}
