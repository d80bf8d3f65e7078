#include <gtest/gtest.h>

#include <cmath>

#include "ftd/graph.hpp"
#include "test_support.hpp"

using namespace ftd;
using ftd::test::finite_difference_check;
using ftd::test::random_tensor;

namespace {

TensorValue labels_of(std::vector<double> v) {
  Shape s{static_cast<int>(v.size())};
  return TensorValue(s, std::move(v));
}

}  // namespace

TEST(Forward, IdentityMseZeroResidual) {
  ComputeGraph g;
  int in = g.input({2, 3});
  int tgt = g.target({2, 3});
  g.mse(g.identity(in), tgt);
  Rng rng = make_rng(7);
  TensorValue x = random_tensor({2, 3}, rng);
  EXPECT_DOUBLE_EQ(g.forward_loss(x, x), 0.0);
}

TEST(Forward, LinearIdentityWeightsMseAgainstZero) {
  // y = xW with W = I, target 0: loss is the mean of squares of x.
  ComputeGraph g;
  int in = g.input({1, 2});
  int w = g.param("w", TensorValue({2, 2}, {1, 0, 0, 1}));
  int tgt = g.target({1, 2});
  g.mse(g.matmul(in, w), tgt);
  TensorValue x({1, 2}, {1, 1});
  TensorValue zero = TensorValue::zeros({1, 2});
  EXPECT_DOUBLE_EQ(g.forward_loss(x, zero), 1.0);
}

TEST(Forward, SoftmaxCrossEntropyUniformLogitsIsLogK) {
  const int k = 4;
  ComputeGraph g;
  int in = g.input({1, k});
  int tgt = g.target({1});
  g.cross_entropy(g.softmax(in), tgt);
  TensorValue logits = TensorValue::full({1, k}, 0.37);
  EXPECT_NEAR(g.forward_loss(logits, labels_of({2})), std::log(static_cast<double>(k)), 1e-12);
}

TEST(Forward, ShapeMismatchRejectedWithDims) {
  ComputeGraph g;
  int in = g.input({1, 3});
  int w = g.param("w", TensorValue::zeros({2, 2}));
  try {
    g.matmul(in, w);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("(1,3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2,2)"), std::string::npos);
  }
}

TEST(Forward, NonFiniteActivationRejected) {
  ComputeGraph g;
  int in = g.input({1, 2});
  int tgt = g.target({1, 2});
  g.mse(g.identity(in), tgt);
  TensorValue x({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  // the tensor itself is rejected when it flows through a node
  EXPECT_THROW(g.forward(x, TensorValue::zeros({1, 2})), std::runtime_error);
}

TEST(Backward, ConstantGraphHasZeroGradients) {
  ComputeGraph g;
  int p = g.param("p", TensorValue({3}, {1, 2, 3}));
  g.mse(g.zero(p), g.zero(p));
  g.forward();
  g.backward();
  for (const auto& e : g.gradients())
    for (double v : e.value.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Backward, ScalarQuadratic) {
  // L = theta^2 at theta = 3 -> dL/dtheta = 6
  ComputeGraph g;
  int p = g.param("theta", TensorValue({1}, {3.0}));
  int tgt = g.target({1});
  g.mse(p, tgt);
  TensorValue zero = TensorValue::zeros({1});
  g.forward(nullptr, &zero);
  g.backward();
  EXPECT_DOUBLE_EQ(g.gradients()[0].value.data[0], 6.0);
}

TEST(Backward, BeforeForwardRejected) {
  ComputeGraph g;
  int p = g.param("p", TensorValue({1}, {1.0}));
  g.mse(p, g.zero(p));
  EXPECT_THROW(g.backward(), std::logic_error);
}

TEST(FiniteDifference, MlpWithSoftmaxCrossEntropy) {
  Rng rng = make_rng(11);
  ComputeGraph g;
  int in = g.input({3, 4});
  int tgt = g.target({3});
  int w1 = g.param("w1", random_tensor({4, 5}, rng));
  int b1 = g.param("b1", random_tensor({5}, rng));
  int w2 = g.param("w2", random_tensor({5, 3}, rng));
  int h = g.relu(g.add(g.matmul(in, w1), b1));
  g.cross_entropy(g.softmax(g.matmul(h, w2)), tgt);
  TensorValue x = random_tensor({3, 4}, rng);
  TensorValue y = labels_of({0, 2, 1});
  auto rep = finite_difference_check(g, &x, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(FiniteDifference, ConvPoolStack) {
  Rng rng = make_rng(12);
  ComputeGraph g;
  int in = g.input({2, 2, 6, 6});
  int tgt = g.target({2});
  int w1 = g.param("conv_w", random_tensor({3, 2, 3, 3}, rng));
  int b1 = g.param("conv_b", random_tensor({3}, rng));
  int c = g.conv2d(in, w1, b1, ConvAttrs{1, 1, 1, 1});
  int mp = g.max_pool2d(g.relu(c), PoolAttrs{3, 3, 2, 1});
  int ap = g.avg_pool2d(mp, PoolAttrs{3, 3, 1, 1});
  int flat = g.reshape(ap, {2, 3 * 3 * 3});
  int w2 = g.param("fc_w", random_tensor({3 * 3 * 3, 2}, rng));
  g.cross_entropy(g.softmax(g.matmul(flat, w2)), tgt);
  TensorValue x = random_tensor({2, 2, 6, 6}, rng);
  TensorValue y = labels_of({1, 0});
  auto rep = finite_difference_check(g, &x, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(FiniteDifference, StridedDilatedAndAsymmetricConv) {
  Rng rng = make_rng(13);
  ComputeGraph g;
  int in = g.input({1, 2, 8, 8});
  int tgt = g.target({1, 2, 8, 8});
  int wd = g.param("dil_w", random_tensor({2, 2, 3, 3}, rng));
  int c1 = g.conv2d(in, wd, -1, ConvAttrs{1, 2, 2, 2});
  int w71 = g.param("w_7x1", random_tensor({2, 2, 7, 1}, rng));
  int c2 = g.conv2d(c1, w71, -1, ConvAttrs{1, 3, 0, 1});
  int w17 = g.param("w_1x7", random_tensor({2, 2, 1, 7}, rng));
  int c3 = g.conv2d(c2, w17, -1, ConvAttrs{1, 0, 3, 1});
  g.mse(c3, tgt);
  TensorValue x = random_tensor({1, 2, 8, 8}, rng);
  TensorValue y = random_tensor({1, 2, 8, 8}, rng);
  auto rep = finite_difference_check(g, &x, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(FiniteDifference, StridedConvDownsample) {
  Rng rng = make_rng(14);
  ComputeGraph g;
  int in = g.input({2, 1, 7, 7});
  int tgt = g.target({2, 3, 4, 4});
  int w = g.param("w", random_tensor({3, 1, 3, 3}, rng));
  g.mse(g.conv2d(in, w, -1, ConvAttrs{2, 1, 1, 1}), tgt);
  TensorValue x = random_tensor({2, 1, 7, 7}, rng);
  TensorValue y = random_tensor({2, 3, 4, 4}, rng);
  auto rep = finite_difference_check(g, &x, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(FiniteDifference, AddConcatZeroIdentityScale) {
  Rng rng = make_rng(15);
  ComputeGraph g;
  int in = g.input({2, 3});
  int tgt = g.target({2, 10});
  int a = g.param("a", random_tensor({2, 3}, rng));
  int sum = g.add(in, a);
  int cat = g.concat(g.identity(sum), g.scale(sum, -1.5), 1);
  int z = g.zero(cat);
  int cat2 = g.concat(cat, g.add(z, cat), 1);
  int w = g.param("w", random_tensor({12, 10}, rng));
  g.mse(g.matmul(cat2, w), tgt);
  TensorValue x = random_tensor({2, 3}, rng);
  TensorValue y = random_tensor({2, 10}, rng);
  auto rep = finite_difference_check(g, &x, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(FiniteDifference, ConcatAlongBatchAxis) {
  Rng rng = make_rng(16);
  ComputeGraph g;
  int a = g.param("a", random_tensor({2, 3}, rng));
  int b = g.param("b", random_tensor({1, 3}, rng));
  int tgt = g.target({3, 3});
  g.mse(g.concat(a, b, 0), tgt);
  TensorValue y = random_tensor({3, 3}, rng);
  auto rep = finite_difference_check(g, nullptr, &y);
  EXPECT_LT(rep.max_rel_err, 1e-4) << rep.where;
}

TEST(Determinism, ForwardBackwardBitwise) {
  Rng rng = make_rng(17);
  auto build = [&](Rng r) {
    auto g = std::make_unique<ComputeGraph>();
    int in = g->input({2, 4});
    int tgt = g->target({2});
    int w = g->param("w", random_tensor({4, 3}, r));
    g->cross_entropy(g->softmax(g->matmul(in, w)), tgt);
    return g;
  };
  auto g1 = build(rng);
  auto g2 = build(rng);  // rng passed by value: identical init
  TensorValue x = random_tensor({2, 4}, rng);
  TensorValue y = labels_of({0, 2});
  double l1 = g1->forward_loss(x, y);
  double l2 = g2->forward_loss(x, y);
  EXPECT_EQ(l1, l2);
  g1->backward();
  g2->backward();
  auto ga = g1->gradients(), gb = g2->gradients();
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_TRUE(ga[i].value == gb[i].value);
}

TEST(PerSample, SingletonMatchesBackward) {
  Rng rng = make_rng(18);
  ComputeGraph g;
  int in = g.input({1, 3});
  int tgt = g.target({1});
  int w = g.param("w", random_tensor({3, 2}, rng));
  g.cross_entropy(g.softmax(g.matmul(in, w)), tgt);
  Sample s{random_tensor({1, 3}, rng), labels_of({1})};
  auto per = per_sample_grads(g, {s});
  ASSERT_EQ(per.size(), 1u);
  g.forward(s.input, s.target);
  g.backward();
  auto direct = g.gradients();
  EXPECT_TRUE(per[0][0].value == direct[0].value);
}

TEST(PerSample, IdenticalSamplesGiveIdenticalGrads) {
  Rng rng = make_rng(19);
  ComputeGraph g;
  int in = g.input({1, 3});
  int tgt = g.target({1, 3});
  int w = g.param("w", random_tensor({3, 3}, rng));
  g.mse(g.matmul(in, w), tgt);
  Sample s{random_tensor({1, 3}, rng), random_tensor({1, 3}, rng)};
  auto per = per_sample_grads(g, {s, s});
  ASSERT_EQ(per.size(), 2u);
  EXPECT_TRUE(per[0][0].value == per[1][0].value);
}

TEST(PerSample, MeanEqualsBatchGradient) {
  Rng rng = make_rng(20);
  const int batch = 5;
  // batch graph
  ComputeGraph gb;
  {
    int in = gb.input({batch, 4});
    int tgt = gb.target({batch});
    int w = gb.param("w", random_tensor({4, 3}, rng));
    int b = gb.param("b", random_tensor({3}, rng));
    gb.cross_entropy(gb.softmax(gb.add(gb.matmul(in, w), b)), tgt);
  }
  // single-sample graph with the same parameters
  ComputeGraph g1;
  {
    int in = g1.input({1, 4});
    int tgt = g1.target({1});
    int w = g1.param("w", TensorValue::zeros({4, 3}));
    int b = g1.param("b", TensorValue::zeros({3}));
    g1.cross_entropy(g1.softmax(g1.add(g1.matmul(in, w), b)), tgt);
  }
  g1.set_params(gb.get_params());

  TensorValue xs = random_tensor({batch, 4}, rng);
  std::vector<double> ys = {0, 1, 2, 1, 0};
  std::vector<Sample> samples;
  for (int i = 0; i < batch; ++i) {
    TensorValue xi = TensorValue::zeros({1, 4});
    for (int j = 0; j < 4; ++j) xi.data[static_cast<std::size_t>(j)] = xs.data[static_cast<std::size_t>(i * 4 + j)];
    samples.push_back({xi, labels_of({ys[static_cast<std::size_t>(i)]})});
  }

  gb.forward(xs, labels_of(ys));
  gb.backward();
  auto batch_grads = gb.gradients();

  auto per = per_sample_grads(g1, samples);
  for (std::size_t p = 0; p < batch_grads.size(); ++p) {
    TensorValue mean = TensorValue::zeros(batch_grads[p].value.shape);
    for (const auto& gset : per)
      for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += gset[p].value.data[i];
    for (std::size_t i = 0; i < mean.data.size(); ++i) {
      mean.data[i] /= batch;
      EXPECT_NEAR(mean.data[i], batch_grads[p].value.data[i], 1e-10);
    }
  }
}

TEST(PerSample, EmptyDatasetRejected) {
  ComputeGraph g;
  int p = g.param("p", TensorValue({1}, {1.0}));
  g.mse(p, g.zero(p));
  EXPECT_THROW(per_sample_grads(g, {}), std::invalid_argument);
}
