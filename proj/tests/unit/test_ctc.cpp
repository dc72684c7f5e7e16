#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ctcd/ctc.hpp"
#include "oracles.hpp"

using namespace ctcd;

namespace {

constexpr TokenId a = 0, b = 1, eps = 2;

std::vector<double> uniform_rows(std::size_t L, std::size_t V) {
  return std::vector<double>(L * V, -std::log(static_cast<double>(V)));
}

double ctc64(const std::vector<double>& lp, std::size_t L, std::size_t V, const TokenSeq& y, TokenId blank) {
  return ctc_log_prob(Tensor64(Shape{L, V}, lp), y, blank).item();
}

}  // namespace

TEST(Collapse, MergesRunsThenDropsBlanks) {
  const TokenSeq raw{a, a, eps, b};
  const Collapsed c = collapse(raw, eps);
  EXPECT_EQ(c.tokens, (TokenSeq{a, b}));
  EXPECT_EQ(c.keep, (std::vector<std::size_t>{0, 3}));
  EXPECT_TRUE(collapse(TokenSeq{eps, eps, eps}, eps).tokens.empty());
  EXPECT_EQ(collapse(TokenSeq{a, eps, a}, eps).tokens, (TokenSeq{a, a}));
}

TEST(Collapse, DefaultBlankIsByteVocabBlank) {
  const TokenSeq raw{'h', 'h', vocab::kBlank, 'i'};
  EXPECT_EQ(collapse(raw).tokens, (TokenSeq{'h', 'i'}));
}

TEST(MinAlignmentLength, CountsSeparatingBlanks) {
  EXPECT_EQ(min_alignment_length(TokenSeq{a, b}), 2u);
  EXPECT_EQ(min_alignment_length(TokenSeq{a, a}), 3u);
  EXPECT_EQ(min_alignment_length(TokenSeq{}), 0u);
  EXPECT_EQ(min_alignment_length(TokenSeq{a, a, a}), 5u);
}

TEST(CtcLogProb, UniformTwoSlotCases) {
  const auto lp = uniform_rows(2, 3);
  EXPECT_NEAR(ctc64(lp, 2, 3, {a}, eps), std::log(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(ctc64(lp, 2, 3, {a, b}, eps), std::log(1.0 / 9.0), 1e-12);
  EXPECT_THROW(ctc64(lp, 2, 3, {a, a}, eps), InfeasibleTargetError);
}

TEST(CtcLogProb, EmptyTargetWithCertainBlanks) {
  std::vector<double> lp(3 * 3, -INFINITY);
  for (std::size_t s = 0; s < 3; ++s) lp[s * 3 + eps] = 0.0;
  EXPECT_NEAR(ctc64(lp, 3, 3, {}, eps), 0.0, 1e-12);
  EXPECT_NEAR(brute_force_log_prob(lp, 3, 3, TokenSeq{}, eps), 0.0, 1e-12);
}

TEST(CtcLogProb, RejectsBlankAndOutOfRangeTargets) {
  const auto lp = uniform_rows(3, 3);
  EXPECT_THROW(ctc64(lp, 3, 3, {eps}, eps), InfeasibleTargetError);
  EXPECT_THROW(ctc64(lp, 3, 3, {7}, eps), InfeasibleTargetError);
}

TEST(CtcLogProb, BruteForceGuard) {
  const auto lp = uniform_rows(9, 5);
  EXPECT_THROW(brute_force_log_prob(lp, 9, 5, TokenSeq{a}, eps), std::length_error);
}

TEST(CtcLogProb, MatchesEnumerationOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 150; ++i) {
    const std::size_t L = 1 + rng() % 5, V = 2 + rng() % 4;
    const int blank = static_cast<int>(rng() % V);
    const auto lp = oracle::random_log_probs(L, V, rng);
    const auto y = oracle::random_feasible_target(L, V, blank, rng);
    const double want = oracle::log_prob(lp, L, V, y, blank);
    EXPECT_NEAR(ctc64(lp, L, V, y, blank), want, 1e-9) << "L=" << L << " V=" << V;
    EXPECT_NEAR(brute_force_log_prob(lp, L, V, y, blank), want, 1e-12);
  }
}

TEST(CtcLogProb, FloatTracksDouble) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    const std::size_t L = 5, V = 6;
    const auto lp = oracle::random_log_probs(L, V, rng);
    const auto y = oracle::random_feasible_target(L, V, 5, rng);
    std::vector<float> lpf(lp.begin(), lp.end());
    const float got = ctc_log_prob(Tensor(Shape{L, V}, lpf), y, 5).item();
    EXPECT_NEAR(got, ctc64(lp, L, V, y, 5), 1e-4);
  }
}

TEST(CtcLogProb, BatchMatchesSingle) {
  std::mt19937_64 rng(13);
  const std::size_t A = 4, L = 4, V = 5;
  std::vector<double> all;
  std::vector<TokenSeq> targets;
  for (std::size_t i = 0; i < A; ++i) {
    const auto lp = oracle::random_log_probs(L, V, rng);
    all.insert(all.end(), lp.begin(), lp.end());
    targets.push_back(oracle::random_feasible_target(L, V, 4, rng));
  }
  const Tensor64 batch = ctc_log_prob_batch(Tensor64(Shape{A * L, V}, all), L, targets, 4);
  ASSERT_EQ(batch.numel(), A);
  for (std::size_t i = 0; i < A; ++i) {
    const std::vector<double> one(all.begin() + static_cast<long>(i * L * V),
                                  all.begin() + static_cast<long>((i + 1) * L * V));
    EXPECT_NEAR(batch[i], ctc64(one, L, V, targets[i], 4), 1e-12);
  }
}

// Summed over every feasible target, alignment mass is exhaustive.
TEST(CtcLogProb, FeasibleTargetsPartitionTheMass) {
  std::mt19937_64 rng(14);
  const std::size_t L = 3, V = 3;
  const auto lp = oracle::random_log_probs(L, V, rng);
  double total = 0.0;
  const auto mass = oracle::collapsed_mass(lp, L, V, eps);
  for (const auto& [y, w] : mass) total += std::exp(ctc64(lp, L, V, y, eps));
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(CtcGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 15; ++i) {
    const std::size_t L = 2 + rng() % 3, V = 3 + rng() % 2;
    const TokenId blank = static_cast<TokenId>(V - 1);
    const auto lp = oracle::random_log_probs(L, V, rng);
    const auto y = oracle::random_feasible_target(L, V, blank, rng);
    Tensor64 x(Shape{L, V}, lp, true);
    ctc_log_prob(x, y, blank).backward();
    const std::vector<double> grad(x.grad().begin(), x.grad().end());
    for (std::size_t j = 0; j < lp.size(); ++j) {
      auto hi = lp, lo = lp;
      hi[j] += 1e-6;
      lo[j] -= 1e-6;
      const double fd = (ctc64(hi, L, V, y, blank) - ctc64(lo, L, V, y, blank)) / 2e-6;
      EXPECT_NEAR(grad[j], fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

// d log p / d lp[s, v] is the posterior occupancy of symbol v at slot s.
TEST(CtcGradient, RowsSumToOne) {
  std::mt19937_64 rng(16);
  const std::size_t L = 4, V = 4;
  const auto lp = oracle::random_log_probs(L, V, rng);
  Tensor64 x(Shape{L, V}, lp, true);
  ctc_log_prob(x, TokenSeq{0, 1}, 3).backward();
  for (std::size_t s = 0; s < L; ++s) {
    double row = 0.0;
    for (std::size_t v = 0; v < V; ++v) row += x.grad()[s * V + v];
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(PrefixMarginals, SingleSlot) {
  const std::vector<double> lp{std::log(0.5), std::log(0.3), std::log(0.2)};
  const auto m = collapsed_prefix_marginals(lp, 1, 3, TokenSeq{}, eps);
  EXPECT_NEAR(m.next[a], 0.5, 1e-12);
  EXPECT_NEAR(m.next[b], 0.3, 1e-12);
  EXPECT_EQ(m.next[eps], 0.0);
  EXPECT_NEAR(m.end, 0.2, 1e-12);
}

TEST(PrefixMarginals, UniformTwoSlotFirstToken) {
  const auto m = collapsed_prefix_marginals(uniform_rows(2, 3), 2, 3, TokenSeq{}, eps);
  EXPECT_NEAR(m.next[a], 4.0 / 9.0, 1e-12);
  EXPECT_NEAR(m.next[b], 4.0 / 9.0, 1e-12);
  EXPECT_NEAR(m.end, 1.0 / 9.0, 1e-12);
}

TEST(PrefixMarginals, ZeroProbabilityPrefixThrows) {
  std::vector<double> lp{0.0, -INFINITY, -INFINITY};  // always a
  EXPECT_THROW(collapsed_prefix_marginals(lp, 1, 3, TokenSeq{b}, eps), ZeroProbabilityPrefixError);
}

TEST(PrefixMarginals, MatchEnumerationAndNormalize) {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 100; ++i) {
    const std::size_t L = 1 + rng() % 4, V = 2 + rng() % 4;
    const int blank = static_cast<int>(V - 1);
    const auto lp = oracle::random_log_probs(L, V, rng);
    const auto mass = oracle::collapsed_mass(lp, L, V, blank);
    auto it = mass.begin();
    std::advance(it, static_cast<long>(rng() % mass.size()));
    oracle::Seq prefix = it->first;
    prefix.resize(rng() % (prefix.size() + 1));
    const auto want = oracle::prefix_marginals(mass, V, prefix);
    const auto got = collapsed_prefix_marginals(lp, L, V, prefix, blank);
    EXPECT_NEAR(got.end, want.end, 1e-10);
    double total = got.end;
    for (std::size_t v = 0; v < V; ++v) {
      EXPECT_NEAR(got.next[v], want.next[v], 1e-10);
      total += got.next[v];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}
