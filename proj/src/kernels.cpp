#include "ctcd/kernels.hpp"

#include <algorithm>
#if defined(__AVX512F__)
#include <immintrin.h>
#endif
#include <cmath>
#include <limits>
#include <type_traits>
#include <vector>

namespace ctcd::kernels {

namespace {

// Column block width: 256 bytes of accumulators per row.
template <class T>
constexpr std::size_t kBlock = 256 / sizeof(T);

template <class T, std::size_t R>
void block_full(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                std::size_t ldc, bool accumulate) {
  constexpr std::size_t JB = kBlock<T>;
  T acc[R][JB];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < JB; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T(0);
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* brow = b + kk * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * lda + kk];
      for (std::size_t j = 0; j < JB; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < JB; ++j) c[r * ldc + j] = acc[r][j];
  }
}

template <class T, std::size_t R>
void block_tail(std::size_t k, std::size_t jb, const T* a, std::size_t lda, const T* b,
                std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t JB = kBlock<T>;
  T acc[R][JB];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < jb; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T(0);
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* brow = b + kk * ldb;
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * lda + kk];
      for (std::size_t j = 0; j < jb; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < jb; ++j) c[r * ldc + j] = acc[r][j];
  }
}

template <class T, std::size_t R>
void row_group(std::size_t k, std::size_t p, const T* a, std::size_t lda, const T* b,
               std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t JB = kBlock<T>;
  std::size_t j0 = 0;
  for (; j0 + JB <= p; j0 += JB) block_full<T, R>(k, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
  if (j0 < p) block_tail<T, R>(k, p - j0, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
}

#if defined(__AVX512F__)

// R rows x 64 columns; `cols` <= 64 handled with lane masks. Each output
// lane is one fused multiply-add chain over kk, exactly as in the scalar
// fallback order, so the row grouping never changes results.
template <std::size_t R, std::size_t NV>
void block_avx512(std::size_t k, std::size_t cols, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __mmask16 m[NV];
#pragma GCC unroll 16
  for (std::size_t v = 0; v < NV; ++v) {
    const std::size_t lo = v * 16;
    const std::size_t live = cols > lo ? std::min<std::size_t>(16, cols - lo) : 0;
    m[v] = static_cast<__mmask16>(live == 16 ? 0xFFFF : (1u << live) - 1u);
  }
  __m512 acc[R][NV];
#pragma GCC unroll 8
  for (std::size_t r = 0; r < R; ++r) {
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) {
      acc[r][v] = accumulate ? _mm512_maskz_loadu_ps(m[v], c + r * ldc + v * 16) : _mm512_setzero_ps();
    }
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* brow = b + kk * ldb;
    __m512 bv[NV];
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) bv[v] = _mm512_maskz_loadu_ps(m[v], brow + v * 16);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda + kk]);
#pragma GCC unroll 16
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] = _mm512_fmadd_ps(av, bv[v], acc[r][v]);
    }
  }
#pragma GCC unroll 8
  for (std::size_t r = 0; r < R; ++r) {
#pragma GCC unroll 16
    for (std::size_t v = 0; v < NV; ++v) _mm512_mask_storeu_ps(c + r * ldc + v * 16, m[v], acc[r][v]);
  }
}

void gemm_avx512(std::size_t n, std::size_t k, std::size_t p, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  // Short batches take wide panels so enough independent chains are in flight.
  if (n <= 2) {
    for (std::size_t j0 = 0; j0 < p; j0 += 192) {
      const std::size_t cols = std::min<std::size_t>(192, p - j0);
      if (n == 2) {
        block_avx512<2, 12>(k, cols, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
      } else if (n == 1) {
        block_avx512<1, 12>(k, cols, a, lda, b + j0, ldb, c + j0, ldc, accumulate);
      }
    }
    return;
  }
  // Column panels outside so one k x 64 panel of b stays hot across row groups.
  for (std::size_t j0 = 0; j0 < p; j0 += 64) {
    const std::size_t cols = std::min<std::size_t>(64, p - j0);
    std::size_t i = 0;
    for (; i + 6 <= n; i += 6) {
      block_avx512<6, 4>(k, cols, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, accumulate);
    }
    const float* ai = a + i * lda;
    float* ci = c + i * ldc + j0;
    switch (n - i) {
      case 5: block_avx512<5, 4>(k, cols, ai, lda, b + j0, ldb, ci, ldc, accumulate); break;
      case 4: block_avx512<4, 4>(k, cols, ai, lda, b + j0, ldb, ci, ldc, accumulate); break;
      case 3: block_avx512<3, 4>(k, cols, ai, lda, b + j0, ldb, ci, ldc, accumulate); break;
      case 2: block_avx512<2, 4>(k, cols, ai, lda, b + j0, ldb, ci, ldc, accumulate); break;
      case 1: block_avx512<1, 4>(k, cols, ai, lda, b + j0, ldb, ci, ldc, accumulate); break;
      default: break;
    }
  }
}

#endif

}  // namespace

template <class T>
void gemm(std::size_t n, std::size_t k, std::size_t p, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    gemm_avx512(n, k, p, a, lda, b, ldb, c, ldc, accumulate);
    return;
  }
#endif
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) row_group<T, 4>(k, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  switch (n - i) {
    case 3: row_group<T, 3>(k, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    case 2: row_group<T, 2>(k, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    case 1: row_group<T, 1>(k, p, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate); break;
    default: break;
  }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, std::size_t lds, T* dst,
               std::size_t ldd) {
  constexpr std::size_t tile = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
    const std::size_t r1 = std::min(rows, r0 + tile);
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t c1 = std::min(cols, c0 + tile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t col = c0; col < c1; ++col) dst[col * ldd + r] = src[r * lds + col];
      }
    }
  }
}

template <class T>
void attention(std::size_t n, std::size_t m, std::size_t d, std::size_t heads, const T* q,
               std::size_t ldq, const T* kt, std::size_t ldk, const T* v, std::size_t ldv,
               const T* mask, T* probs, T* out, std::size_t ldo) {
  const std::size_t hd = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<T> local;
  if (!probs) local.resize(n * m);
  for (std::size_t h = 0; h < heads; ++h) {
    T* p = probs ? probs + h * n * m : local.data();
    gemm<T>(n, hd, m, q + h * hd, ldq, kt + h * hd * ldk, ldk, p, m, false);
    for (std::size_t i = 0; i < n; ++i) {
      T* row = p + i * m;
      const T* mrow = mask ? mask + i * m : nullptr;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = row[j] * scale + (mrow ? mrow[j] : T(0));
        mx = std::max(mx, row[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
    }
    gemm<T>(n, m, hd, p, m, v + h * hd, ldv, out + h * hd, ldo, false);
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                          const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                           const double*, std::size_t, double*, std::size_t, bool);
template void transpose<float>(std::size_t, std::size_t, const float*, std::size_t, float*,
                               std::size_t);
template void transpose<double>(std::size_t, std::size_t, const double*, std::size_t, double*,
                                std::size_t);
template void attention<float>(std::size_t, std::size_t, std::size_t, std::size_t, const float*,
                               std::size_t, const float*, std::size_t, const float*, std::size_t,
                               const float*, float*, float*, std::size_t);
template void attention<double>(std::size_t, std::size_t, std::size_t, std::size_t,
                                const double*, std::size_t, const double*, std::size_t,
                                const double*, std::size_t, const double*, double*, double*,
                                std::size_t);

namespace {

#if defined(__AVX512F__)

inline __mmask16 tail_mask(std::size_t live) {
  return static_cast<__mmask16>(live >= 16 ? 0xFFFF : (1u << live) - 1u);
}

// Cephes-style single-precision exp: range reduction by ln 2, degree-6
// polynomial, exact scaling by 2^n. Inputs below the float range give 0.
inline __m512 exp512(__m512 x) {
  const __m512 hi = _mm512_set1_ps(88.3762626647949f);
  const __m512 lo = _mm512_set1_ps(-87.3365447504f);
  const __mmask16 under = _mm512_cmp_ps_mask(x, lo, _CMP_LT_OQ);
  x = _mm512_min_ps(_mm512_max_ps(x, lo), hi);
  const __m512 n = _mm512_roundscale_ps(_mm512_mul_ps(x, _mm512_set1_ps(1.44269504088896341f)),
                                        _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m512 r = _mm512_fnmadd_ps(n, _mm512_set1_ps(0.693359375f), x);
  r = _mm512_fnmadd_ps(n, _mm512_set1_ps(-2.12194440e-4f), r);
  __m512 p = _mm512_set1_ps(1.9875691500e-4f);
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.3981999507e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(8.3334519073e-3f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(4.1665795894e-2f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(1.6666665459e-1f));
  p = _mm512_fmadd_ps(p, r, _mm512_set1_ps(5.0000001201e-1f));
  const __m512 y = _mm512_add_ps(_mm512_fmadd_ps(p, _mm512_mul_ps(r, r), r), _mm512_set1_ps(1.0f));
  return _mm512_maskz_mov_ps(static_cast<__mmask16>(~under), _mm512_scalef_ps(y, n));
}

#endif

}  // namespace

void exp_inplace(std::size_t count, float* x) {
#if defined(__AVX512F__)
  for (std::size_t i = 0; i < count; i += 16) {
    const __mmask16 m = tail_mask(count - i);
    _mm512_mask_storeu_ps(x + i, m, exp512(_mm512_maskz_loadu_ps(m, x + i)));
  }
#else
  for (std::size_t i = 0; i < count; ++i) x[i] = std::exp(x[i]);
#endif
}

void gelu_inplace(std::size_t count, float* x) {
  // 0.5 x (1 + tanh(u)) == x * sigmoid(2u)
  const float c = 0.7978845608028654f;
#if defined(__AVX512F__)
  const __m512 two_c = _mm512_set1_ps(-2.0f * c);
  const __m512 k3 = _mm512_set1_ps(0.044715f);
  const __m512 one = _mm512_set1_ps(1.0f);
  for (std::size_t i = 0; i < count; i += 16) {
    const __mmask16 m = tail_mask(count - i);
    const __m512 v = _mm512_maskz_loadu_ps(m, x + i);
    const __m512 inner = _mm512_fmadd_ps(_mm512_mul_ps(k3, v), _mm512_mul_ps(v, v), v);
    const __m512 e = exp512(_mm512_mul_ps(two_c, inner));
    _mm512_mask_storeu_ps(x + i, m, _mm512_div_ps(v, _mm512_add_ps(one, e)));
  }
#else
  for (std::size_t i = 0; i < count; ++i) {
    const float v = x[i];
    x[i] = v / (1.0f + std::exp(-2.0f * c * (v + 0.044715f * v * v * v)));
  }
#endif
}

void add_bias(std::size_t n, std::size_t p, float* c, std::size_t ldc, const float* bias) {
  for (std::size_t i = 0; i < n; ++i) {
    float* row = c + i * ldc;
    for (std::size_t j = 0; j < p; ++j) row[j] += bias[j];
  }
}

namespace {

float row_sum(std::size_t d, const float* x) {
#if defined(__AVX512F__)
  __m512 acc = _mm512_setzero_ps();
  for (std::size_t j = 0; j < d; j += 16) acc = _mm512_add_ps(acc, _mm512_maskz_loadu_ps(tail_mask(d - j), x + j));
  return _mm512_reduce_add_ps(acc);
#else
  float s = 0.0f;
  for (std::size_t j = 0; j < d; ++j) s += x[j];
  return s;
#endif
}

}  // namespace

void layer_norm_rows(std::size_t n, std::size_t d, const float* x, const float* gamma,
                     const float* beta, float* out, float eps) {
  std::vector<float> centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = x + i * d;
    float* o = out + i * d;
    const float mean = row_sum(d, row) / static_cast<float>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const float c = row[j] - mean;
      centered[j] = c * c;
      o[j] = c;
    }
    const float var = row_sum(d, centered.data()) / static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) o[j] = o[j] * inv * gamma[j] + beta[j];
  }
}

void attention_rows(std::size_t n, std::size_t d, std::size_t heads, const float* q, std::size_t ldq,
                    const float* kt, std::size_t ldk, const float* v, std::size_t ldv,
                    std::span<const RowVisibility> visibility, float* out, std::size_t ldo) {
  const std::size_t hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  std::vector<float> probs;
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < n; ++i) {
    const RowVisibility& vis = visibility[i];
    const std::size_t P = vis.prefix;
    const std::size_t m = P + vis.extra.size();
    probs.resize(heads * m);
    cols.resize(m);
    for (std::size_t j = 0; j < m; ++j) cols[j] = j < P ? j : vis.extra[j - P];
    for (std::size_t h = 0; h < heads; ++h) {
      const float* qh = q + i * ldq + h * hd;
      const float* kh = kt + h * hd * ldk;
      float* s = probs.data() + h * m;
#if defined(__AVX512F__)
      const __m512 vscale = _mm512_set1_ps(scale);
      std::size_t j = 0;
      for (; j + 64 <= P; j += 64) {
        __m512 a0 = _mm512_setzero_ps(), a1 = a0, a2 = a0, a3 = a0;
        for (std::size_t e = 0; e < hd; ++e) {
          const __m512 qe = _mm512_set1_ps(qh[e]);
          const float* kr = kh + e * ldk + j;
          a0 = _mm512_fmadd_ps(qe, _mm512_loadu_ps(kr), a0);
          a1 = _mm512_fmadd_ps(qe, _mm512_loadu_ps(kr + 16), a1);
          a2 = _mm512_fmadd_ps(qe, _mm512_loadu_ps(kr + 32), a2);
          a3 = _mm512_fmadd_ps(qe, _mm512_loadu_ps(kr + 48), a3);
        }
        _mm512_storeu_ps(s + j, _mm512_mul_ps(a0, vscale));
        _mm512_storeu_ps(s + j + 16, _mm512_mul_ps(a1, vscale));
        _mm512_storeu_ps(s + j + 32, _mm512_mul_ps(a2, vscale));
        _mm512_storeu_ps(s + j + 48, _mm512_mul_ps(a3, vscale));
      }
      for (; j < P; j += 16) {
        const __mmask16 mk = tail_mask(P - j);
        __m512 acc = _mm512_setzero_ps();
        for (std::size_t e = 0; e < hd; ++e) {
          acc = _mm512_fmadd_ps(_mm512_set1_ps(qh[e]), _mm512_maskz_loadu_ps(mk, kh + e * ldk + j), acc);
        }
        _mm512_mask_storeu_ps(s + j, mk, _mm512_mul_ps(acc, vscale));
      }
#else
      for (std::size_t j = 0; j < P; ++j) {
        float acc = 0.0f;
        for (std::size_t e = 0; e < hd; ++e) acc = std::fma(qh[e], kh[e * ldk + j], acc);
        s[j] = acc * scale;
      }
#endif
      for (std::size_t j = P; j < m; ++j) {
        float acc = 0.0f;
        for (std::size_t e = 0; e < hd; ++e) acc = std::fma(qh[e], kh[e * ldk + cols[j]], acc);
        s[j] = acc * scale;
      }
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, s[j]);
      for (std::size_t j = 0; j < m; ++j) s[j] -= mx;
      exp_inplace(m, s);
      const float inv = 1.0f / row_sum(m, s);
      for (std::size_t j = 0; j < m; ++j) s[j] *= inv;
    }
    // Weighted sum; every output lane is one chain over j in order.
    float* o = out + i * ldo;
#if defined(__AVX512F__)
    for (std::size_t c0 = 0; c0 < d; c0 += 64) {
      __m512 acc[4];
      __mmask16 mk[4];
      const float* pr[4];
      for (std::size_t u = 0; u < 4; ++u) {
        const std::size_t c = c0 + 16 * u;
        mk[u] = c < d ? tail_mask(d - c) : 0;
        acc[u] = _mm512_setzero_ps();
        pr[u] = probs.data() + (c < d ? c / hd : 0) * m;
      }
      if (hd % 16 == 0) {
        for (std::size_t j = 0; j < m; ++j) {
          const float* vr = v + cols[j] * ldv + c0;
#pragma GCC unroll 4
          for (std::size_t u = 0; u < 4; ++u) {
            acc[u] = _mm512_fmadd_ps(_mm512_set1_ps(pr[u][j]), _mm512_maskz_loadu_ps(mk[u], vr + 16 * u), acc[u]);
          }
        }
        for (std::size_t u = 0; u < 4; ++u) _mm512_mask_storeu_ps(o + c0 + 16 * u, mk[u], acc[u]);
        continue;
      }
      for (std::size_t c = c0; c < std::min(d, c0 + 64); ++c) {
        const float* ph = probs.data() + (c / hd) * m;
        float a = 0.0f;
        for (std::size_t j = 0; j < m; ++j) a = std::fma(ph[j], v[cols[j] * ldv + c], a);
        o[c] = a;
      }
    }
#else
    for (std::size_t c = 0; c < d; ++c) {
      const float* ph = probs.data() + (c / hd) * m;
      float a = 0.0f;
      for (std::size_t j = 0; j < m; ++j) a = std::fma(ph[j], v[cols[j] * ldv + c], a);
      o[c] = a;
    }
#endif
  }
}

}  // namespace ctcd::kernels
