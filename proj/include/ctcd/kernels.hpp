#pragma once

// Raw dense kernels shared by the taped ops and the cached inference path.
//
// gemm computes every output element as a single accumulation over the inner
// dimension in ascending order, independent of how many rows or columns are
// processed together. Tree verification relies on this: a row computed
// inside a batch is bit-identical to the same row computed alone.

#include <cstddef>
#include <span>
#include <vector>

namespace ctcd::kernels {

/// c[n x p] (+)= a[n x k] * b[k x p], all row-major with leading dimensions.
template <class T>
void gemm(std::size_t n, std::size_t k, std::size_t p, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

/// dst[cols x rows] = src[rows x cols]^T.
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, std::size_t lds, T* dst,
               std::size_t ldd);

/// Multi-head scaled dot-product attention for n query rows over m keys.
///
/// q: n rows of width d (stride ldq). kt: per-head transposed keys laid out
/// [heads][head_dim][ldk]; only the first m columns are read. v: m rows of
/// width d (stride ldv). mask: optional n x m additive mask (row stride m).
/// probs: optional output of the softmax weights, [heads][n][m].
/// out: n rows of width d (stride ldo).
template <class T>
void attention(std::size_t n, std::size_t m, std::size_t d, std::size_t heads, const T* q,
               std::size_t ldq, const T* kt, std::size_t ldk, const T* v, std::size_t ldv,
               const T* mask, T* probs, T* out, std::size_t ldo);

// Inference kernels (float only). Elementwise results never depend on where
// an element sits inside a vector register, and every reduction runs over a
// row's own data in a fixed pattern, so a row's result depends only on that
// row's inputs.

/// exp over `count` values in place.
void exp_inplace(std::size_t count, float* x);

/// out = layer_norm(x) per row of width d.
void layer_norm_rows(std::size_t n, std::size_t d, const float* x, const float* gamma,
                     const float* beta, float* out, float eps = 1e-5f);

/// tanh-approximation GELU in place.
void gelu_inplace(std::size_t count, float* x);

/// c[i, :] += bias for each of n rows of width p.
void add_bias(std::size_t n, std::size_t p, float* c, std::size_t ldc, const float* bias);

/// Key columns a query row may see: 0..prefix-1, then `extra` (ascending).
struct RowVisibility {
  std::size_t prefix = 0;
  std::vector<std::size_t> extra;
};

/// Attention over an explicit visible-column list per row. The row's
/// scores, softmax and weighted sum run over the visible columns in order,
/// so two rows that see the same key/value sequence get bit-identical
/// outputs regardless of where those keys live in the cache.
void attention_rows(std::size_t n, std::size_t d, std::size_t heads, const float* q, std::size_t ldq,
                    const float* kt, std::size_t ldk, const float* v, std::size_t ldv,
                    std::span<const RowVisibility> visibility, float* out, std::size_t ldo);

}  // namespace ctcd::kernels
