#include "ctcd/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ctcd/kernels.hpp"

namespace ctcd {

namespace {

template <class T>
using Node = detail::TensorNode<T>;

std::string pair_str(const Shape& a, const Shape& b) {
  return shape_str(a) + " and " + shape_str(b);
}

enum class Broadcast { Same, Scalar, Trailing };

Broadcast broadcast_kind(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::Same;
  if (b.empty()) return Broadcast::Scalar;
  if (b.size() < a.size() && std::equal(b.begin(), b.end(), a.end() - b.size())) {
    return Broadcast::Trailing;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + pair_str(a, b));
}

template <class T>
bool wants_grad(const Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

std::size_t last_dim(const Shape& s, const char* op) {
  if (s.empty()) throw ShapeError(std::string(op) + ": needs rank >= 1, got " + shape_str(s));
  return s.back();
}

// Elementwise binary op with the restricted broadcast rules.
// fwd(x, y) -> value; dfa(x, y, out) and dfb(x, y, out) -> local partials.
template <class T, class F, class DA, class DB>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* name, F fwd,
                      DA dfa, DB dfb) {
  const auto kind = broadcast_kind(a.shape(), b.shape(), name);
  const std::size_t n = a.numel();
  const std::size_t bn = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = kind == Broadcast::Scalar ? 0 : (kind == Broadcast::Same ? i : i % bn);
    out[i] = fwd(ad[i], bd[j]);
  }
  return BasicTensor<T>::make_result(
      a.shape(), std::move(out), {&a, &b}, [kind, n, bn, dfa, dfb](Node<T>& self) {
        const auto& A = *self.parents[0];
        const auto& B = *self.parents[1];
        const auto& g = self.grad;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j =
              kind == Broadcast::Scalar ? 0 : (kind == Broadcast::Same ? i : i % bn);
          if (A.requires_grad) self.parents[0]->grad[i] += g[i] * dfa(A.data[i], B.data[j], self.data[i]);
          if (B.requires_grad) self.parents[1]->grad[j] += g[i] * dfb(A.data[i], B.data[j], self.data[i]);
        }
      });
}

template <class T>
std::size_t rows_of(const BasicTensor<T>& a, std::size_t width) {
  return width == 0 ? 0 : a.numel() / width;
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + pair_str(a.shape(), b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t p = b.dim(1);
  const std::size_t n = rows_of(a, k);
  std::vector<T> out(n * p);
  kernels::gemm<T>(n, k, p, a.data().data(), k, b.data().data(), p, out.data(), p, false);
  Shape shape = a.shape();
  shape.back() = p;
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&a, &b},
                                     [n, k, p](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    const T* g = self.grad.data();
    if (A.requires_grad) {
      std::vector<T> bt(p * k);
      kernels::transpose<T>(k, p, B.data.data(), p, bt.data(), k);
      kernels::gemm<T>(n, p, k, g, p, bt.data(), k, A.grad.data(), k, true);
    }
    if (B.requires_grad) {
      std::vector<T> at(k * n);
      kernels::transpose<T>(n, k, A.data.data(), k, at.data(), n);
      kernels::gemm<T>(k, n, p, at.data(), n, g, p, B.grad.data(), p, true);
    }
  });
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& x : out) x *= factor;
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {&a}, [factor](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * factor;
  });
}

template <class T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " +
                       shape_str(table.shape()));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return BasicTensor<T>::make_result(Shape{ids.size(), d}, std::move(out), {&table},
                                     [saved = std::move(saved), d](Node<T>& self) {
    auto& W = *self.parents[0];
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = W.grad.data() + static_cast<std::size_t>(saved[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& a) {
  const std::size_t w = last_dim(a.shape(), "softmax");
  const std::size_t rows = rows_of(a, w);
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = ad.data() + r * w;
    T* y = out.data() + r * w;
    const T mx = *std::max_element(x, x + w);
    T s = 0;
    for (std::size_t j = 0; j < w; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < w; ++j) y[j] /= s;
  }
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {&a}, [rows, w](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * w;
      const T* g = self.grad.data() + r * w;
      T dot = 0;
      for (std::size_t j = 0; j < w; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < w; ++j) A.grad[r * w + j] += y[j] * (g[j] - dot);
    }
  });
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  const std::size_t w = last_dim(a.shape(), "log_softmax");
  const std::size_t rows = rows_of(a, w);
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = ad.data() + r * w;
    T* y = out.data() + r * w;
    const T mx = *std::max_element(x, x + w);
    T s = 0;
    for (std::size_t j = 0; j < w; ++j) s += std::exp(x[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < w; ++j) y[j] = x[j] - lse;
  }
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {&a}, [rows, w](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * w;
      const T* g = self.grad.data() + r * w;
      T gs = 0;
      for (std::size_t j = 0; j < w; ++j) gs += g[j];
      for (std::size_t j = 0; j < w; ++j) A.grad[r * w + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

template <class T>
BasicTensor<T> logsumexp(const BasicTensor<T>& a) {
  const std::size_t w = last_dim(a.shape(), "logsumexp");
  const std::size_t rows = rows_of(a, w);
  std::vector<T> out(rows);
  auto ad = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = ad.data() + r * w;
    const T mx = *std::max_element(x, x + w);
    T s = 0;
    for (std::size_t j = 0; j < w; ++j) s += std::exp(x[j] - mx);
    out[r] = mx + std::log(s);
  }
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&a},
                                     [rows, w](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) {
        A.grad[r * w + j] += self.grad[r] * std::exp(A.data[r * w + j] - self.data[r]);
      }
    }
  });
}

template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const std::size_t w = last_dim(x.shape(), "layer_norm");
  if (gamma.shape() != Shape{w} || beta.shape() != Shape{w}) {
    throw ShapeError("layer_norm: gain/bias shapes " + pair_str(gamma.shape(), beta.shape()) +
                     " do not match width " + std::to_string(w));
  }
  const std::size_t rows = rows_of(x, w);
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * w;
    T mu = 0;
    for (std::size_t j = 0; j < w; ++j) mu += xr[j];
    mu /= static_cast<T>(w);
    T var = 0;
    for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(w);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < w; ++j) {
      const T h = (xr[j] - mu) * is;
      (*xhat)[r * w + j] = h;
      out[r * w + j] = h * gd[j] + bd[j];
    }
  }
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                                     [rows, w, xhat, inv_std](Node<T>& self) {
    auto& X = *self.parents[0];
    auto& G = *self.parents[1];
    auto& B = *self.parents[2];
    std::vector<T> dh(w);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * w;
      const T* h = xhat->data() + r * w;
      T mean_dh = 0;
      T mean_dh_h = 0;
      for (std::size_t j = 0; j < w; ++j) {
        if (G.requires_grad) G.grad[j] += g[j] * h[j];
        if (B.requires_grad) B.grad[j] += g[j];
        dh[j] = g[j] * G.data[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * h[j];
      }
      if (!X.requires_grad) continue;
      mean_dh /= static_cast<T>(w);
      mean_dh_h /= static_cast<T>(w);
      for (std::size_t j = 0; j < w; ++j) {
        X.grad[r * w + j] += (*inv_std)[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
      }
    }
  });
}

template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a3 = T(0.044715);
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a3 * v * v * v)));
  }
  return BasicTensor<T>::make_result(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    auto& X = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = X.data[i];
      const T t = std::tanh(c * (v + a3 * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a3 * v * v);
      X.grad[i] += self.grad[i] * d;
    }
  });
}

template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v,
                         const BasicTensor<T>& mask, std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.shape() != k.shape() || q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: incompatible q/k/v shapes " + pair_str(q.shape(), k.shape()) +
                     " and " + shape_str(v.shape()));
  }
  const std::size_t n = q.dim(0);
  const std::size_t m = k.dim(0);
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (mask.defined() && mask.shape() != Shape{n, m}) {
    throw ShapeError("attention: mask shape " + shape_str(mask.shape()) + " expected " +
                     shape_str(Shape{n, m}));
  }
  const std::size_t hd = d / heads;
  std::vector<T> kt(d * m);
  for (std::size_t h = 0; h < heads; ++h) {
    kernels::transpose<T>(m, hd, k.data().data() + h * hd, d, kt.data() + h * hd * m, m);
  }
  auto probs = std::make_shared<std::vector<T>>(heads * n * m);
  std::vector<T> out(n * d);
  kernels::attention<T>(n, m, d, heads, q.data().data(), d, kt.data(), m, v.data().data(), d,
                        mask.defined() ? mask.data().data() : nullptr, probs->data(), out.data(), d);
  return BasicTensor<T>::make_result(Shape{n, d}, std::move(out), {&q, &k, &v},
                                     [n, m, d, heads, hd, probs](Node<T>& self) {
    auto& Q = *self.parents[0];
    auto& K = *self.parents[1];
    auto& V = *self.parents[2];
    const T sc = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> pt(m * n), vt(hd * m), dp(n * m), dst(m * n);
    const T* go = self.grad.data();
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs->data() + h * n * m;
      if (V.requires_grad) {
        kernels::transpose<T>(n, m, p, m, pt.data(), n);
        kernels::gemm<T>(m, n, hd, pt.data(), n, go + h * hd, d, V.grad.data() + h * hd, d, true);
      }
      if (!Q.requires_grad && !K.requires_grad) continue;
      kernels::transpose<T>(m, hd, V.data.data() + h * hd, d, vt.data(), m);
      kernels::gemm<T>(n, hd, m, go + h * hd, d, vt.data(), m, dp.data(), m, false);
      for (std::size_t i = 0; i < n; ++i) {
        T* row = dp.data() + i * m;
        const T* pr = p + i * m;
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += row[j] * pr[j];
        for (std::size_t j = 0; j < m; ++j) row[j] = pr[j] * (row[j] - dot) * sc;
      }
      if (Q.requires_grad) {
        kernels::gemm<T>(n, m, hd, dp.data(), m, K.data.data() + h * hd, d, Q.grad.data() + h * hd, d, true);
      }
      if (K.requires_grad) {
        kernels::transpose<T>(n, m, dp.data(), m, dst.data(), n);
        kernels::gemm<T>(m, n, hd, dst.data(), n, Q.data.data() + h * hd, d, K.grad.data() + h * hd, d, true);
      }
    }
  });
}

template <class T>
BasicTensor<T> narrow(const BasicTensor<T>& a, std::size_t axis, std::size_t start,
                      std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("narrow: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " + std::to_string(axis) +
                     " of shape " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t full = s[axis];
  Shape shape = s;
  shape[axis] = length;
  std::vector<T> out(outer * length * inner);
  auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * full + start) * inner), length * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  }
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&a},
                                     [outer, inner, full, start, length](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = A.grad.data() + (o * full + start) * inner;
      const T* src = self.grad.data() + o * length * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
}

template <class T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + pair_str(s0, s));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = s0;
  shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto pd = parts[pi].data();
    const std::size_t chunk = widths[pi] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
    }
    offset += widths[pi];
  }
  std::vector<const BasicTensor<T>*> parents;
  for (const auto& p : parts) parents.push_back(&p);
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), parents,
                                     [outer, inner, total, widths](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      auto& P = *self.parents[pi];
      const std::size_t chunk = widths[pi] * inner;
      if (P.requires_grad) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * total * inner + off * inner;
          T* dst = P.grad.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      off += widths[pi];
    }
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&a}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = 0;
  for (T x : a.data()) s += x;
  return BasicTensor<T>::make_result(Shape{}, std::vector<T>{s}, {&a}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    for (auto& g : A.grad) g += self.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::span<const std::size_t> rows,
                      std::span<const std::size_t> cols, std::size_t width) {
  if (x.rank() != 2 || cols.size() != rows.size() * width) {
    throw ShapeError("gather: source " + shape_str(x.shape()) + " with " +
                     std::to_string(rows.size()) + " rows and " + std::to_string(cols.size()) +
                     " column indices of width " + std::to_string(width));
  }
  const std::size_t R = x.dim(0);
  const std::size_t V = x.dim(1);
  std::vector<std::size_t> flat(cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t s = 0; s < width; ++s) {
      const std::size_t c = cols[i * width + s];
      if (rows[i] >= R || c >= V) throw ShapeError("gather: index outside " + shape_str(x.shape()));
      flat[i * width + s] = rows[i] * V + c;
    }
  }
  std::vector<T> out(flat.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < flat.size(); ++i) out[i] = xd[flat[i]];
  return BasicTensor<T>::make_result(Shape{rows.size(), width}, std::move(out), {&x},
                                     [flat = std::move(flat)](Node<T>& self) {
    auto& X = *self.parents[0];
    for (std::size_t i = 0; i < flat.size(); ++i) X.grad[flat[i]] += self.grad[i];
  });
}

template <class T>
BasicTensor<T> log_add_exp(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("log_add_exp: incompatible shapes " + pair_str(a.shape(), b.shape()));
  }
  std::vector<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T hi = std::max(ad[i], bd[i]);
    const T lo = std::min(ad[i], bd[i]);
    out[i] = hi + std::log1p(std::exp(lo - hi));
  }
  return BasicTensor<T>::make_result(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T g = self.grad[i];
      if (g == T(0)) continue;
      if (A.requires_grad) A.grad[i] += g * std::exp(A.data[i] - self.data[i]);
      if (B.requires_grad) B.grad[i] += g * std::exp(B.data[i] - self.data[i]);
    }
  });
}

template <class T>
BasicTensor<T> take_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw ShapeError("take_rows: needs rank >= 1");
  const std::size_t R = x.dim(0);
  const std::size_t w = R == 0 ? 0 : x.numel() / R;
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<T> out(rows.size() * w);
  auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= R) {
      throw ShapeError("take_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(x.shape()));
    }
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w, out.begin() + i * w);
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&x},
                                     [saved = std::move(saved), w](Node<T>& self) {
    auto& X = *self.parents[0];
    for (std::size_t i = 0; i < saved.size(); ++i) {
      for (std::size_t j = 0; j < w; ++j) X.grad[saved[i] * w + j] += self.grad[i * w + j];
    }
  });
}

template <class T>
BasicTensor<T> repeat_rows(const BasicTensor<T>& x, std::size_t times) {
  if (x.rank() < 1) throw ShapeError("repeat_rows: needs rank >= 1");
  const std::size_t R = x.dim(0);
  const std::size_t w = R == 0 ? 0 : x.numel() / R;
  Shape shape = x.shape();
  shape[0] = R * times;
  std::vector<T> out(R * times * w);
  auto xd = x.data();
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(r * w), w, out.begin() + (r * times + t) * w);
    }
  }
  return BasicTensor<T>::make_result(std::move(shape), std::move(out), {&x},
                                     [R, w, times](Node<T>& self) {
    auto& X = *self.parents[0];
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t t = 0; t < times; ++t) {
        for (std::size_t j = 0; j < w; ++j) X.grad[r * w + j] += self.grad[(r * times + t) * w + j];
      }
    }
  });
}

#define CTCD_INSTANTIATE_OPS(T)                                                                 \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const int>);               \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                       \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                   \
  template BasicTensor<T> logsumexp(const BasicTensor<T>&);                                     \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                     const BasicTensor<T>&, T);                                 \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                          \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const BasicTensor<T>&, const BasicTensor<T>&, std::size_t); \
  template BasicTensor<T> narrow(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t); \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);              \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                           \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                          \
  template BasicTensor<T> gather(const BasicTensor<T>&, std::span<const std::size_t>,           \
                                 std::span<const std::size_t>, std::size_t);                    \
  template BasicTensor<T> log_add_exp(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> take_rows(const BasicTensor<T>&, std::span<const std::size_t>);       \
  template BasicTensor<T> repeat_rows(const BasicTensor<T>&, std::size_t);

CTCD_INSTANTIATE_OPS(float)
CTCD_INSTANTIATE_OPS(double)

#undef CTCD_INSTANTIATE_OPS

}  // namespace ctcd
