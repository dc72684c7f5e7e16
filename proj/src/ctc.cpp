#include "ctcd/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ctcd/tensor_ops.hpp"

namespace ctcd {

namespace {

constexpr double kSentinel = -1e30;
// Prefix mass below exp(-80) is treated as zero.
const double kZeroMass = std::exp(-80.0);

void check_target(std::span<const TokenId> target, std::size_t slots, std::size_t vocab, TokenId blank) {
  for (TokenId t : target) {
    if (t == blank) throw InfeasibleTargetError("CTC target contains the blank symbol");
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw InfeasibleTargetError("CTC target token " + std::to_string(t) + " outside vocabulary");
    }
  }
  const std::size_t need = min_alignment_length(target);
  if (need > slots) {
    throw InfeasibleTargetError("CTC target needs " + std::to_string(need) + " slots, only " +
                                std::to_string(slots) + " available");
  }
}

}  // namespace

Collapsed collapse(std::span<const TokenId> alignment, TokenId blank) {
  Collapsed out;
  for (std::size_t i = 0; i < alignment.size(); ++i) {
    const TokenId a = alignment[i];
    if (i > 0 && alignment[i - 1] == a) continue;
    if (a == blank) continue;
    out.tokens.push_back(a);
    out.keep.push_back(i);
  }
  return out;
}

std::size_t min_alignment_length(std::span<const TokenId> y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i) n += y[i] == y[i - 1];
  return n;
}

template <class T>
BasicTensor<T> ctc_log_prob_batch(const BasicTensor<T>& log_probs, std::size_t slots,
                                  const std::vector<TokenSeq>& targets, TokenId blank) {
  const std::size_t A = targets.size();
  if (log_probs.rank() != 2 || slots == 0 || log_probs.dim(0) != A * slots) {
    throw ShapeError("ctc: log-probs " + shape_str(log_probs.shape()) + " do not hold " +
                     std::to_string(A) + " anchors of " + std::to_string(slots) + " slots");
  }
  const std::size_t V = log_probs.dim(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= V) throw UsageError("ctc: blank id outside vocabulary");
  std::size_t longest = 0;
  for (const auto& y : targets) {
    check_target(y, slots, V, blank);
    longest = std::max(longest, y.size());
  }
  const std::size_t S = 2 * longest + 1;
  const T neg = static_cast<T>(kSentinel);

  // Extended labels per anchor; padding states read the blank column and are
  // never read back by a valid state.
  std::vector<std::size_t> ext(A * S, static_cast<std::size_t>(blank));
  std::vector<T> skip(A * S, neg);
  std::vector<T> start(A * S, neg);
  std::vector<std::size_t> final_cols(A * 2);
  std::vector<T> final_mask(A * 2, T(0));
  for (std::size_t a = 0; a < A; ++a) {
    const auto& y = targets[a];
    for (std::size_t j = 0; j < y.size(); ++j) ext[a * S + 2 * j + 1] = static_cast<std::size_t>(y[j]);
    for (std::size_t j = 1; j < y.size(); ++j) {
      if (y[j] != y[j - 1]) skip[a * S + 2 * j + 1] = T(0);
    }
    start[a * S] = T(0);
    if (!y.empty()) start[a * S + 1] = T(0);
    const std::size_t m = y.size();
    final_cols[2 * a] = 2 * m;
    final_cols[2 * a + 1] = m == 0 ? 0 : 2 * m - 1;
    if (m == 0) final_mask[2 * a + 1] = neg;
  }

  // Emissions, slot-major: rows [t * A + a].
  std::vector<std::size_t> rows(slots * A);
  std::vector<std::size_t> cols(slots * A * S);
  for (std::size_t t = 0; t < slots; ++t) {
    for (std::size_t a = 0; a < A; ++a) {
      rows[t * A + a] = a * slots + t;
      std::copy_n(ext.begin() + static_cast<std::ptrdiff_t>(a * S), S,
                  cols.begin() + static_cast<std::ptrdiff_t>((t * A + a) * S));
    }
  }
  const BasicTensor<T> emit = gather(log_probs, rows, cols, S);
  const BasicTensor<T> skip_mask(Shape{A, S}, std::move(skip));
  const BasicTensor<T> pad1(Shape{A, 1}, std::vector<T>(A, neg));
  const BasicTensor<T> pad2(Shape{A, 2}, std::vector<T>(2 * A, neg));

  BasicTensor<T> alpha = add(narrow(emit, 0, 0, A), BasicTensor<T>(Shape{A, S}, std::move(start)));
  for (std::size_t t = 1; t < slots; ++t) {
    BasicTensor<T> acc = alpha;
    if (S > 1) {
      acc = log_add_exp(acc, concat(std::vector<BasicTensor<T>>{pad1, narrow(alpha, 1, 0, S - 1)}, 1));
    }
    if (S > 2) {
      BasicTensor<T> shifted = concat(std::vector<BasicTensor<T>>{pad2, narrow(alpha, 1, 0, S - 2)}, 1);
      acc = log_add_exp(acc, add(shifted, skip_mask));
    }
    alpha = add(acc, narrow(emit, 0, t * A, A));
  }
  std::vector<std::size_t> all(A);
  for (std::size_t a = 0; a < A; ++a) all[a] = a;
  BasicTensor<T> ends = add(gather(alpha, all, final_cols, 2), BasicTensor<T>(Shape{A, 2}, std::move(final_mask)));
  return logsumexp(ends);
}

template <class T>
BasicTensor<T> ctc_log_prob(const BasicTensor<T>& slot_log_probs, std::span<const TokenId> target,
                            TokenId blank) {
  if (slot_log_probs.rank() != 2) {
    throw ShapeError("ctc: slot log-probs must be [L, V], got " + shape_str(slot_log_probs.shape()));
  }
  std::vector<TokenSeq> targets{TokenSeq(target.begin(), target.end())};
  return reshape(ctc_log_prob_batch(slot_log_probs, slot_log_probs.dim(0), targets, blank), Shape{});
}

double brute_force_log_prob(std::span<const double> slot_log_probs, std::size_t slots,
                            std::size_t vocab, std::span<const TokenId> target, TokenId blank) {
  double space = 1.0;
  for (std::size_t t = 0; t < slots; ++t) space *= static_cast<double>(vocab);
  if (space > 1e6) {
    throw std::length_error("brute force over " + std::to_string(vocab) + "^" + std::to_string(slots) +
                            " = " + std::to_string(static_cast<long long>(space)) +
                            " alignments exceeds the 1000000 limit");
  }
  if (slot_log_probs.size() != slots * vocab) throw ShapeError("brute force: log-prob size mismatch");
  std::vector<TokenId> a(slots, 0);
  double total = 0.0;
  bool any = false;
  while (true) {
    const Collapsed c = collapse(a, blank);
    if (std::equal(c.tokens.begin(), c.tokens.end(), target.begin(), target.end())) {
      double lp = 0.0;
      for (std::size_t t = 0; t < slots; ++t) lp += slot_log_probs[t * vocab + static_cast<std::size_t>(a[t])];
      total += std::exp(lp);
      any = true;
    }
    std::size_t t = 0;
    while (t < slots && static_cast<std::size_t>(++a[t]) == vocab) a[t++] = 0;
    if (t == slots) break;
  }
  return any ? std::log(total) : -std::numeric_limits<double>::infinity();
}

PrefixMarginals collapsed_prefix_marginals(std::span<const double> slot_log_probs, std::size_t slots,
                                           std::size_t vocab, std::span<const TokenId> prefix,
                                           TokenId blank) {
  if (slot_log_probs.size() != slots * vocab) throw ShapeError("prefix marginals: log-prob size mismatch");
  const std::size_t P = prefix.size();
  // f[j][c]: probability of having emitted prefix[0..j) with the last raw
  // symbol being blank/start (c = 0) or prefix[j-1] (c = 1).
  std::vector<double> f(2 * (P + 1), 0.0), g(f.size());
  f[0] = 1.0;
  PrefixMarginals out;
  out.next.assign(vocab, 0.0);
  std::vector<double> p(vocab);
  const auto b = static_cast<std::size_t>(blank);
  for (std::size_t t = 0; t < slots; ++t) {
    for (std::size_t v = 0; v < vocab; ++v) p[v] = std::exp(slot_log_probs[t * vocab + v]);
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t j = 0; j <= P; ++j) {
      for (std::size_t c = 0; c < 2; ++c) {
        const double w = f[2 * j + c];
        if (w == 0.0) continue;
        g[2 * j] += w * p[b];
        const bool repeatable = c == 1;
        const std::size_t last = j > 0 ? static_cast<std::size_t>(prefix[j - 1]) : vocab;
        if (repeatable) g[2 * j + 1] += w * p[last];
        if (j < P) {
          const auto x = static_cast<std::size_t>(prefix[j]);
          if (!(repeatable && x == last)) g[2 * (j + 1) + 1] += w * p[x];
        } else {
          for (std::size_t x = 0; x < vocab; ++x) {
            if (x == b || (repeatable && x == last)) continue;
            out.next[x] += w * p[x];
          }
        }
      }
    }
    f.swap(g);
  }
  out.end = f[2 * P] + f[2 * P + 1];
  double z = out.end;
  for (double v : out.next) z += v;
  if (!(z > kZeroMass)) {
    throw ZeroProbabilityPrefixError("collapsed prefix of length " + std::to_string(P) +
                                     " has zero probability under the draft slots");
  }
  for (double& v : out.next) v /= z;
  out.end /= z;
  return out;
}

template BasicTensor<float> ctc_log_prob(const BasicTensor<float>&, std::span<const TokenId>, TokenId);
template BasicTensor<double> ctc_log_prob(const BasicTensor<double>&, std::span<const TokenId>, TokenId);
template BasicTensor<float> ctc_log_prob_batch(const BasicTensor<float>&, std::size_t,
                                               const std::vector<TokenSeq>&, TokenId);
template BasicTensor<double> ctc_log_prob_batch(const BasicTensor<double>&, std::size_t,
                                                const std::vector<TokenSeq>&, TokenId);

}  // namespace ctcd
