#pragma once

// Differentiable primitives. Shape mismatches throw ShapeError naming both
// shapes. Broadcasting is limited to two cases: a rank-0 scalar operand, or
// a right operand whose shape equals the trailing dimensions of the left
// one (a leading batch). Anything else needs an explicit reshape.

#include <cstddef>
#include <span>
#include <vector>

#include "ctcd/tensor.hpp"

namespace ctcd {

/// Additive mask value for hidden attention slots. Large but finite, so a
/// fully masked row never produces NaN in 32-bit softmax.
inline constexpr float kMaskedScore = -1e9f;

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

/// Rows of `table` selected by `ids`: [ids.size(), d].
template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids);

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& a);
template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a);
/// Reduces the last axis.
template <class T>
BasicTensor<T> logsumexp(const BasicTensor<T>& a);

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));
/// tanh approximation.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

/// Multi-head attention of q [n, d] over k, v [m, d]. `mask` is either
/// undefined or an [n, m] additive constant (0 visible, kMaskedScore hidden).
template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v, const BasicTensor<T>& mask, std::size_t heads);

template <class T>
BasicTensor<T> narrow(const BasicTensor<T>& a, std::size_t axis, std::size_t start,
                      std::size_t length);
template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a);

/// out[i, s] = x[rows[i], cols[i * width + s]] for a 2-D x; result [rows.size(), width].
template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols, std::size_t width);

/// Elementwise log(exp(a) + exp(b)).
template <class T>
BasicTensor<T> log_add_exp(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Leading-axis row selection.
template <class T>
BasicTensor<T> take_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows);
/// Repeats each leading-axis row `times` times consecutively.
template <class T>
BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t times);

}  // namespace ctcd
