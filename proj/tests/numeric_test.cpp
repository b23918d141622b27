#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dmg/ops.hpp"
#include "dmg/optim.hpp"
#include "dmg/rng.hpp"
#include "dmg/tensor.hpp"
#include "testutil.hpp"

using namespace dmg;
using dmgtest::central_fd;
using dmgtest::expect_close;
using dmgtest::random_tensor;

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

TEST(Tensor, ShapeDataInvariant) {
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
  Tensor t({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t(1, 0), 3.0);
  EXPECT_EQ(t.size(), 4u);
}

// ---------------------------------------------------------------------------
// dense_forward
// ---------------------------------------------------------------------------

TEST(DenseForward, IdentityWeights) {
  Tensor x({1, 2}, {1, 2});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor b({2}, {0, 0});
  Tensor y = dense_forward(x, w, b);
  EXPECT_EQ(y(0, 0), 1.0);
  EXPECT_EQ(y(0, 1), 2.0);
}

TEST(DenseForward, HandArithmetic) {
  Tensor x({1, 2}, {1, 1});
  Tensor w({2, 1}, {2, 3});
  Tensor b({1}, {1});
  Tensor y = dense_forward(x, w, b);
  EXPECT_EQ(y(0, 0), 6.0);
}

// Independent naive triple-loop oracle; must match bit-for-bit.
static Tensor naive_matmul_bias(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y({x.rows(), w.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = b[j];
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(i, k) * w(k, j);
      y(i, j) = acc;
    }
  return y;
}

TEST(DenseForward, MatchesNaiveOracleExactly) {
  Rng rng(7);
  Tensor x = random_tensor(rng, {4, 8});
  Tensor w = random_tensor(rng, {8, 3});
  Tensor b = random_tensor(rng, {3});
  EXPECT_TRUE(dmgtest::bit_equal(dense_forward(x, w, b), naive_matmul_bias(x, w, b)));
}

TEST(DenseForward, ShapeMismatchThrows) {
  Tensor x({1, 3});
  Tensor w({2, 2});
  Tensor b({2});
  EXPECT_THROW(dense_forward(x, w, b), std::invalid_argument);
  EXPECT_THROW(dense_forward(Tensor({1, 2}), w, Tensor({3})), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// dense_backward
// ---------------------------------------------------------------------------

TEST(DenseBackward, ChainRuleByHand) {
  Tensor grad_y({1, 1}, {1});
  Tensor x({1, 2}, {1, 1});
  Tensor w({2, 1}, {2, 3});
  DenseGrads g = dense_backward(grad_y, x, w);
  EXPECT_EQ(g.grad_w(0, 0), 1.0);
  EXPECT_EQ(g.grad_w(1, 0), 1.0);
  EXPECT_EQ(g.grad_b[0], 1.0);
  EXPECT_EQ(g.grad_x(0, 0), 2.0);
  EXPECT_EQ(g.grad_x(0, 1), 3.0);
}

TEST(DenseBackward, ZeroUpstreamGradient) {
  Tensor grad_y({2, 3});
  Rng rng(3);
  Tensor x = random_tensor(rng, {2, 4});
  Tensor w = random_tensor(rng, {4, 3});
  DenseGrads g = dense_backward(grad_y, x, w);
  for (double v : g.grad_x.data) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_w.data) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_b.data) EXPECT_EQ(v, 0.0);
}

TEST(DenseBackward, MatchesFiniteDifferences) {
  Rng rng(11);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor w = random_tensor(rng, {4, 2});
  Tensor b = random_tensor(rng, {2});
  Tensor c = random_tensor(rng, {3, 2});  // random linear functional over y

  auto loss = [&]() {
    Tensor y = dense_forward(x, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };
  DenseGrads g = dense_backward(c, x, w);
  dmgtest::check_grad_fd(loss, x, g.grad_x, 1e-4, 1e-6, "grad_x");
  dmgtest::check_grad_fd(loss, w, g.grad_w, 1e-4, 1e-6, "grad_w");
  dmgtest::check_grad_fd(loss, b, g.grad_b, 1e-4, 1e-6, "grad_b");
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

TEST(Relu, ForwardAndSubgradientAtZero) {
  Tensor x({3}, {-1, 0, 2});
  Tensor y = relu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  Tensor g = relu_backward(Tensor({3}, {1, 1, 1}), x);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);  // 0-at-0 convention
  EXPECT_EQ(g[2], 1.0);
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  Rng rng(5);
  Tensor x({6}, {-2.0, -0.5, 0.3, 1.7, -1.1, 0.9});  // no entries near 0
  Tensor c = random_tensor(rng, {6});
  auto loss = [&]() {
    Tensor y = relu(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };
  Tensor g = relu_backward(c, x);
  dmgtest::check_grad_fd(loss, x, g, 1e-4, 1e-6, "relu grad");
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

TEST(SoftmaxXent, UniformLogits) {
  XentResult r = softmax_xent(Tensor({1, 2}, {0, 0}), {0});
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(SoftmaxXent, ConfidentCorrect) {
  XentResult r = softmax_xent(Tensor({1, 2}, {10, -10}), {0});
  EXPECT_LT(r.loss, 1e-6);
  EXPECT_GE(r.loss, 0.0);
}

TEST(SoftmaxXent, GradMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor logits = random_tensor(rng, {3, 4}, -2.0, 2.0);
  std::vector<int> labels = {2, 0, 3};
  auto loss = [&]() { return softmax_xent(logits, labels).loss; };
  XentResult r = softmax_xent(logits, labels);
  dmgtest::check_grad_fd(loss, logits, r.grad_logits, 1e-4, 1e-6, "grad_logits");
}

TEST(SoftmaxXent, GradRowsSumToZero) {
  Rng rng(17);
  Tensor logits = random_tensor(rng, {5, 7}, -3.0, 3.0);
  std::vector<int> labels = {0, 1, 2, 3, 6};
  XentResult r = softmax_xent(logits, labels);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += r.grad_logits(i, j);
    EXPECT_NEAR(s, 0.0, 1e-10);
  }
  EXPECT_GE(r.loss, 0.0);
}

TEST(SoftmaxXent, OutOfRangeLabelThrows) {
  EXPECT_THROW(softmax_xent(Tensor({1, 3}), {3}), std::invalid_argument);
  EXPECT_THROW(softmax_xent(Tensor({1, 3}), {-1}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, FirstStepClosedForm) {
  Tensor p({1}, {0.0});
  Tensor g({1}, {1.0});
  AdamState st(p.shape);
  adam_step(p, g, st, 1e-4, AdamConfig{}, "p");
  // -lr * g / (|g| + eps) on the first step
  EXPECT_NEAR(p[0], -9.99999990000000223e-05, 1e-15);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  Tensor g({3});
  AdamState st(p.shape);
  adam_step(p, g, st, 1e-2, AdamConfig{}, "p");
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(st.t, 1);
}

// Independent scalar re-implementation of two Adam steps.
TEST(Adam, TwoStepsMatchScalarOracle) {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.37;
  double theta = 0.2, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - std::pow(b1, t));
    double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  Tensor p({1}, {0.2});
  Tensor grad({1}, {g});
  AdamState st(p.shape);
  adam_step(p, grad, st, lr, AdamConfig{}, "p");
  adam_step(p, grad, st, lr, AdamConfig{}, "p");
  EXPECT_EQ(p[0], theta);
  EXPECT_EQ(st.t, 2);
}

TEST(Adam, NonFiniteGradientThrowsNamingParameter) {
  Tensor p({1}, {0.0});
  Tensor g({1}, {std::nan("")});
  AdamState st(p.shape);
  try {
    adam_step(p, g, st, 1e-3, AdamConfig{}, "layer0.W");
    FAIL() << "expected throw";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.W"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Learning-rate schedules
// ---------------------------------------------------------------------------

TEST(LrSchedule, InverseFirstEpochIsLr0) {
  LrSchedule s{LrSchedule::Kind::inverse, 1e-4};
  EXPECT_EQ(lr_at(s, 1), 1e-4);
}

TEST(LrSchedule, InverseFormula) {
  LrSchedule s{LrSchedule::Kind::inverse, 1e-4, 0.99, 1e-4, 0.75};
  EXPECT_NEAR(lr_at(s, 101), 9.92565029024080307e-05, 1e-17);
}

TEST(LrSchedule, ExponentialDecay) {
  LrSchedule s{LrSchedule::Kind::exponential, 1e-4, 0.99};
  EXPECT_NEAR(lr_at(s, 2), 9.9e-5, 1e-18);
}

TEST(LrSchedule, InverseNonIncreasingAndPositive) {
  LrSchedule s{LrSchedule::Kind::inverse, 1e-4, 0.99, 1e-3, 0.75};
  double prev = lr_at(s, 1);
  for (int t = 2; t <= 200; ++t) {
    double cur = lr_at(s, t);
    EXPECT_GT(cur, 0.0);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(LrSchedule, EpochBelowOneThrows) {
  LrSchedule s;
  EXPECT_THROW(lr_at(s, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Rng + bernoulli_draw
// ---------------------------------------------------------------------------

TEST(Rng, SameSeedSameSequence) {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(123), d(123);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(c.uniform(), d.uniform());
    EXPECT_EQ(c.normal(), d.normal());
  }
}

TEST(Rng, DerivedStreamsAreIndependentlySeeded) {
  EXPECT_NE(derive_seed(1, "init"), derive_seed(1, "shuffle"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(2, "init"));
  EXPECT_EQ(derive_seed(9, "x"), derive_seed(9, "x"));
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(42);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Bernoulli, DegenerateProbabilities) {
  Rng rng(1);
  Tensor ones = bernoulli_draw(rng, Tensor::full({64}, 1.0));
  for (double v : ones.data) EXPECT_EQ(v, 1.0);
  Tensor zeros = bernoulli_draw(rng, Tensor::full({64}, 0.0));
  for (double v : zeros.data) EXPECT_EQ(v, 0.0);
}

TEST(Bernoulli, EmpiricalMeanConverges) {
  Rng rng(2024);
  Tensor p = Tensor::full({100000}, 0.5);
  Tensor draws = bernoulli_draw(rng, p);
  double mean = 0.0;
  for (double v : draws.data) mean += v;
  mean /= static_cast<double>(draws.size());
  EXPECT_NEAR(mean, 0.5, 0.01);
}

TEST(Bernoulli, OutOfRangeProbThrows) {
  Rng rng(3);
  EXPECT_THROW(bernoulli_draw(rng, Tensor({1}, {1.5})), std::invalid_argument);
  EXPECT_THROW(bernoulli_draw(rng, Tensor({1}, {-0.1})), std::invalid_argument);
}

TEST(Determinism, FixedSeedReproducesTensorsBitForBit) {
  auto make = [] {
    Rng rng(777);
    Tensor t({4, 4});
    for (auto& v : t.data) v = rng.normal();
    return t;
  };
  EXPECT_TRUE(dmgtest::bit_equal(make(), make()));
}
