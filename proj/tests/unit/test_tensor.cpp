#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ctcd/tensor.hpp"
#include "ctcd/tensor_ops.hpp"

using namespace ctcd;

namespace {

Tensor64 random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor64(std::move(shape), std::move(v), grad);
}

// Central differences of a scalar function of several inputs against the tape.
void expect_gradients(const std::function<Tensor64(std::vector<Tensor64>&)>& f, std::vector<Tensor64> inputs,
                      double tol = 1e-6) {
  Tensor64 out = f(inputs);
  out.backward();
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> base(inputs[i].data().begin(), inputs[i].data().end());
    std::vector<double> analytic(inputs[i].grad().begin(), inputs[i].grad().end());
    analytic.resize(base.size(), 0.0);
    for (std::size_t j = 0; j < base.size(); ++j) {
      auto eval = [&](double delta) {
        NoGradGuard ng;
        std::vector<Tensor64> copy;
        for (std::size_t q = 0; q < inputs.size(); ++q) {
          std::vector<double> vals(inputs[q].data().begin(), inputs[q].data().end());
          if (q == i) vals[j] = base[j] + delta;
          copy.emplace_back(inputs[q].shape(), vals);
        }
        return f(copy).item();
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      EXPECT_NEAR(analytic[j], fd, tol * std::max(1.0, std::abs(fd))) << "input " << i << " element " << j;
    }
  }
}

}  // namespace

TEST(Tensor, ShapeAndItem) {
  Tensor t(Shape{2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_FLOAT_EQ(Tensor::scalar(2.5f).item(), 2.5f);
}

TEST(Tensor, MismatchedValuesRejected) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, SecondBackwardThrows) {
  Tensor64 a = Tensor64::scalar(3.0, true);
  Tensor64 y = mul(a, a);
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 6.0);
  EXPECT_THROW(y.backward(), TapeError);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  Tensor64 a = Tensor64::scalar(3.0, true);
  {
    NoGradGuard ng;
    EXPECT_FALSE(grad_enabled());
    Tensor64 y = mul(a, a);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Tensor, BroadcastRules) {
  Tensor a(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor b(Shape{3}, std::vector<float>{10, 20, 30});
  const Tensor c = add(a, b);
  EXPECT_FLOAT_EQ(c.data()[4], 25.0f);
  EXPECT_THROW(add(a, Tensor(Shape{2})), ShapeError);
  EXPECT_FLOAT_EQ(add(a, Tensor::scalar(1.0f)).data()[0], 2.0f);
}

TEST(Tensor, MatmulValues) {
  Tensor a(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor b(Shape{2, 2}, std::vector<float>{5, 6, 7, 8});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{19, 22, 43, 50}));
  EXPECT_THROW(matmul(a, Tensor(Shape{3, 2})), ShapeError);
}

TEST(TensorGrad, Matmul) {
  std::mt19937_64 rng(1);
  expect_gradients([](auto& x) { return sum(matmul(x[0], x[1])); },
                   {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
}

TEST(TensorGrad, ElementwiseAndBroadcast) {
  std::mt19937_64 rng(2);
  expect_gradients([](auto& x) { return sum(mul(add(x[0], x[1]), sub(x[0], x[1]))); },
                   {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
}

TEST(TensorGrad, SoftmaxFamily) {
  std::mt19937_64 rng(3);
  auto w = random_tensor({2, 5}, rng, false);
  expect_gradients([w](auto& x) { return sum(mul(log_softmax(x[0]), w)); }, {random_tensor({2, 5}, rng)});
  expect_gradients([w](auto& x) { return sum(mul(softmax(x[0]), w)); }, {random_tensor({2, 5}, rng)});
  expect_gradients([](auto& x) { return sum(logsumexp(x[0])); }, {random_tensor({3, 4}, rng)});
}

TEST(TensorGrad, LayerNormAndGelu) {
  std::mt19937_64 rng(4);
  auto w = random_tensor({3, 6}, rng, false);
  expect_gradients([w](auto& x) { return sum(mul(layer_norm(x[0], x[1], x[2]), w)); },
                   {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}, 1e-5);
  expect_gradients([w](auto& x) { return sum(mul(gelu(x[0]), w)); }, {random_tensor({3, 6}, rng)});
}

TEST(TensorGrad, AttentionWithMask) {
  std::mt19937_64 rng(5);
  const std::size_t n = 3, m = 4, d = 4;
  std::vector<double> mask(n * m, 0.0);
  mask[0 * m + 3] = kMaskedScore;
  mask[1 * m + 2] = kMaskedScore;
  const Tensor64 mk(Shape{n, m}, mask);
  auto w = random_tensor({n, d}, rng, false);
  expect_gradients([&](auto& x) { return sum(mul(attention(x[0], x[1], x[2], mk, 2), w)); },
                   {random_tensor({n, d}, rng), random_tensor({m, d}, rng), random_tensor({m, d}, rng)}, 1e-5);
}

TEST(TensorGrad, ShapeOps) {
  std::mt19937_64 rng(6);
  auto w = random_tensor({4, 5}, rng, false);
  expect_gradients(
      [&](auto& x) {
        auto joined = concat<double>({narrow(x[0], 1, 1, 2), x[1]}, 1);
        return sum(mul(reshape(joined, Shape{4, 5}), w));
      },
      {random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)});
  const std::vector<std::size_t> rows{2, 0, 2}, cols{1, 0, 3};
  expect_gradients([&](auto& x) { return sum(gather(x[0], rows, cols, 1)); }, {random_tensor({3, 4}, rng)});
  const std::vector<std::size_t> pick{1, 1, 0};
  auto w6 = random_tensor({6, 2}, rng, false);
  expect_gradients([&](auto& x) { return sum(mul(repeat_rows(take_rows(x[0], pick), 2), w6)); },
                   {random_tensor({2, 2}, rng)});
  expect_gradients([](auto& x) { return mean(log_add_exp(x[0], x[1])); },
                   {random_tensor({5}, rng), random_tensor({5}, rng)});
}

TEST(TensorGrad, EmbeddingAccumulatesRepeatedIds) {
  Tensor64 table(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6}, true);
  const std::vector<int> ids{2, 0, 2};
  sum(embedding(table, std::span<const int>(ids))).backward();
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()),
            (std::vector<double>{1, 1, 0, 0, 2, 2}));
}

TEST(Tensor, FullyMaskedRowStaysFinite) {
  Tensor q(Shape{1, 2}, std::vector<float>{1, 2});
  Tensor k(Shape{2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor mask(Shape{1, 2}, std::vector<float>{kMaskedScore, kMaskedScore});
  const Tensor out = attention(q, k, k, mask, 1);
  for (float v : out.data()) EXPECT_TRUE(std::isfinite(v));
}
