#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "ctcd/kernels.hpp"
#include "ctcd/tensor_ops.hpp"

using namespace ctcd;

namespace {

std::vector<float> randn(std::size_t n, std::mt19937_64& rng, float sd = 1.0f) {
  std::normal_distribution<float> g(0.0f, sd);
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Per-head transposed key layout [heads][head_dim][ld].
std::vector<float> transpose_keys(const std::vector<float>& k, std::size_t m, std::size_t d, std::size_t heads,
                                  std::size_t ld) {
  const std::size_t hd = d / heads;
  std::vector<float> kt(heads * hd * ld, 0.0f);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t j = 0; j < hd; ++j)
      for (std::size_t c = 0; c < m; ++c) kt[(h * hd + j) * ld + c] = k[c * d + h * hd + j];
  return kt;
}

}  // namespace

TEST(Gemm, MatchesNaiveDouble) {
  std::mt19937_64 rng(1);
  for (auto [n, k, p] : {std::tuple{1, 1, 1}, {3, 17, 5}, {7, 64, 200}, {13, 33, 65}, {2, 128, 259}}) {
    const auto A = randn(static_cast<std::size_t>(n * k), rng);
    const auto B = randn(static_cast<std::size_t>(k * p), rng);
    std::vector<float> C(static_cast<std::size_t>(n * p), 1.0f);
    kernels::gemm<float>(n, k, p, A.data(), k, B.data(), p, C.data(), p, true);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) {
        double ref = 1.0;
        for (int q = 0; q < k; ++q) ref += double(A[i * k + q]) * B[q * p + j];
        EXPECT_NEAR(C[i * p + j], ref, 1e-4 * (1 + std::abs(ref)));
      }
  }
}

TEST(Gemm, RowResultIndependentOfBatch) {
  std::mt19937_64 rng(2);
  const std::size_t k = 128, p = 387;
  for (std::size_t n : {2u, 5u, 6u, 7u, 13u, 20u}) {
    const auto A = randn(n * k, rng);
    const auto B = randn(k * p, rng);
    std::vector<float> all(n * p);
    kernels::gemm<float>(n, k, p, A.data(), k, B.data(), p, all.data(), p, false);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> one(p);
      kernels::gemm<float>(1, k, p, A.data() + i * k, k, B.data(), p, one.data(), p, false);
      EXPECT_EQ(std::memcmp(one.data(), all.data() + i * p, p * sizeof(float)), 0) << "n=" << n << " row " << i;
    }
  }
}

TEST(Transpose, RoundTrip) {
  std::mt19937_64 rng(3);
  const auto src = randn(5 * 7, rng);
  std::vector<float> t(7 * 5), back(5 * 7);
  kernels::transpose<float>(5, 7, src.data(), 7, t.data(), 5);
  kernels::transpose<float>(7, 5, t.data(), 5, back.data(), 7);
  EXPECT_EQ(src, back);
  EXPECT_EQ(t[2 * 5 + 4], src[4 * 7 + 2]);
}

TEST(ExpInplace, AccurateAcrossRange) {
  std::vector<float> x;
  for (float v = -100.0f; v <= 80.0f; v += 0.37f) x.push_back(v);
  x.push_back(-1e9f);
  auto y = x;
  kernels::exp_inplace(y.size(), y.data());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ref = std::exp(double(x[i]));
    EXPECT_NEAR(y[i], ref, 3e-7 * ref + 1.2e-38) << x[i];
  }
}

TEST(ExpInplace, LanePositionDoesNotMatter) {
  std::mt19937_64 rng(4);
  const auto x = randn(37, rng, 4.0f);
  auto all = x;
  kernels::exp_inplace(all.size(), all.data());
  for (std::size_t i = 0; i < x.size(); ++i) {
    float one = x[i];
    kernels::exp_inplace(1, &one);
    EXPECT_EQ(one, all[i]);
  }
}

TEST(LayerNormRows, MatchesTapedOp) {
  std::mt19937_64 rng(5);
  const std::size_t n = 3, d = 40;
  const auto x = randn(n * d, rng), g = randn(d, rng), b = randn(d, rng);
  std::vector<float> out(n * d);
  kernels::layer_norm_rows(n, d, x.data(), g.data(), b.data(), out.data());
  const Tensor ref = layer_norm(Tensor(Shape{n, d}, x), Tensor(Shape{d}, g), Tensor(Shape{d}, b));
  for (std::size_t i = 0; i < n * d; ++i) EXPECT_NEAR(out[i], ref[i], 1e-5);
}

TEST(GeluInplace, MatchesTapedOp) {
  std::mt19937_64 rng(6);
  const auto x = randn(45, rng, 3.0f);
  auto y = x;
  kernels::gelu_inplace(y.size(), y.data());
  const Tensor ref = gelu(Tensor(Shape{x.size()}, x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
}

TEST(AddBias, AddsToEveryRow) {
  std::vector<float> c(2 * 3, 1.0f);
  const std::vector<float> bias{1, 2, 3};
  kernels::add_bias(2, 3, c.data(), 3, bias.data());
  EXPECT_EQ(c, (std::vector<float>{2, 3, 4, 2, 3, 4}));
}

TEST(AttentionRows, MatchesMaskedAttention) {
  std::mt19937_64 rng(7);
  for (std::size_t d : {32u, 24u}) {
    const std::size_t heads = d == 32 ? 4 : 2, n = 4, m = 90, ld = 96;
    const auto q = randn(n * d, rng), k = randn(m * d, rng), v = randn(m * d, rng);
    const auto kt = transpose_keys(k, m, d, heads, ld);
    std::vector<kernels::RowVisibility> vis(n);
    std::vector<float> mask(n * m, kMaskedScore);
    for (std::size_t i = 0; i < n; ++i) {
      vis[i].prefix = 70 + i;
      for (std::size_t c = 0; c < vis[i].prefix; ++c) mask[i * m + c] = 0.0f;
      for (std::size_t c = 80; c < m; c += 1 + i) {
        vis[i].extra.push_back(c);
        mask[i * m + c] = 0.0f;
      }
    }
    std::vector<float> got(n * d), want(n * d);
    kernels::attention_rows(n, d, heads, q.data(), d, kt.data(), ld, v.data(), d, vis, got.data(), d);
    const auto kt_tight = transpose_keys(k, m, d, heads, m);
    kernels::attention<float>(n, m, d, heads, q.data(), d, kt_tight.data(), m, v.data(), d, mask.data(), nullptr,
                              want.data(), d);
    for (std::size_t i = 0; i < n * d; ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << "d=" << d;
  }
}

// A row that sees the same keys through `extra` instead of the prefix gets
// the same bits.
TEST(AttentionRows, VisibilityLayoutDoesNotChangeBits) {
  std::mt19937_64 rng(8);
  const std::size_t d = 64, heads = 4, ld = 64;
  const std::size_t ctx = 20, m = 30;
  const auto q = randn(d, rng), k = randn(m * d, rng), v = randn(m * d, rng);
  const auto kt = transpose_keys(k, m, d, heads, ld);
  kernels::RowVisibility split{ctx, {ctx, ctx + 1, ctx + 2}};
  kernels::RowVisibility straight{ctx + 3, {}};
  std::vector<float> o1(d), o2(d);
  kernels::attention_rows(1, d, heads, q.data(), d, kt.data(), ld, v.data(), d, {&split, 1}, o1.data(), d);
  kernels::attention_rows(1, d, heads, q.data(), d, kt.data(), ld, v.data(), d, {&straight, 1}, o2.data(), d);
  EXPECT_EQ(std::memcmp(o1.data(), o2.data(), d * sizeof(float)), 0);
}
