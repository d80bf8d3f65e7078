#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ftd/data.hpp"
#include "ftd/network.hpp"

using namespace ftd;

namespace {

Task separable_task(int classes, int dim, double noise, std::uint64_t seed, int per_class = 20) {
  SyntheticFamilySpec spec;
  spec.input_dim = dim;
  spec.class_centers = random_centers(classes, dim, 2.0, derive_seed(seed, 1));
  spec.noise_scale = noise;
  spec.samples_per_class = per_class;
  spec.seed = seed;
  return derive_task(generate_synthetic_family(spec), [](int r) { return r; }, classes, "blobs");
}

/// 2-class dataset whose rows are +-one-hot so an identity head classifies
/// them perfectly; flipping labels makes the same head all-wrong.
Dataset onehot_dataset(int n, bool flipped) {
  Dataset d;
  d.inputs = TensorValue::zeros({n, 2});
  for (int i = 0; i < n; ++i) {
    int cls = i % 2;
    d.inputs.data[static_cast<std::size_t>(2 * i + cls)] = 1.0;
    d.labels.push_back(flipped ? 1 - cls : cls);
  }
  return d;
}

TrainedNetwork identity_head_net() {
  NetworkSpec spec;
  spec.kind = NetworkKind::Mlp;
  spec.input_shape = {2};
  spec.num_classes = 2;
  TrainedNetwork net;
  net.spec = spec;
  net.params = {{"head.w", TensorValue({2, 2}, {1, 0, 0, 1})}, {"head.b", TensorValue::zeros({2})}};
  return net;
}

}  // namespace

TEST(Train, ZeroEpochsReturnsInitialization) {
  Task task = separable_task(2, 8, 0.2, 3);
  NetworkSpec spec = named_spec("mlp-2x64", {8}, 2);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 17;
  TrainedNetwork net = train(spec, task, cfg);
  ParamSet init = init_params(spec, {8}, 17);
  ASSERT_EQ(net.params.size(), init.size());
  for (std::size_t i = 0; i < init.size(); ++i) EXPECT_TRUE(net.params[i].value == init[i].value);
  EXPECT_TRUE(net.log.empty());
}

TEST(Train, LinearModelOnSeparableBlobsReachesFullTrainAccuracy) {
  Task task = separable_task(2, 8, 1e-3, 4);
  NetworkSpec spec;
  spec.kind = NetworkKind::Mlp;
  spec.input_shape = {8};
  spec.num_classes = 2;  // no hidden layers: a linear classifier
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 0.05;
  cfg.seed = 5;
  cfg.batch_order_seed = 6;
  TrainedNetwork net = train(spec, task, cfg);
  EXPECT_DOUBLE_EQ(dataset_accuracy(net.spec, net.params, task.data.train), 1.0);
}

TEST(Train, DeterministicBitwise) {
  Task task = separable_task(3, 8, 0.3, 7);
  NetworkSpec spec = named_spec("mlp-2x64", {8}, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  TrainedNetwork a = train(spec, task, cfg);
  TrainedNetwork b = train(spec, task, cfg);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_TRUE(a.params[i].value == b.params[i].value);
}

TEST(Train, LogLengthMatchesEpochs) {
  Task task = separable_task(2, 4, 0.3, 8, 6);
  NetworkSpec spec = named_spec("mlp-2x64", {4}, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  TrainedNetwork net = train(spec, task, cfg);
  EXPECT_EQ(net.log.size(), 4u);
}

TEST(Train, FullBatchGradientDescentLossNonIncreasing) {
  Task task = separable_task(2, 6, 0.4, 9, 15);
  NetworkSpec spec;
  spec.kind = NetworkKind::Mlp;
  spec.input_shape = {6};
  spec.num_classes = 2;
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Sgd;
  cfg.lr = 0.05;
  cfg.momentum = 0.0;
  cfg.epochs = 30;
  cfg.batch_size = task.data.train.size();  // exact full-batch descent
  TrainedNetwork net = train(spec, task, cfg);
  for (std::size_t i = 1; i < net.log.size(); ++i) EXPECT_LE(net.log[i].loss, net.log[i - 1].loss + 1e-12);
}

TEST(Train, DivergenceAbortsWithEpoch) {
  Task task = separable_task(2, 6, 0.3, 10, 8);
  NetworkSpec spec = named_spec("mlp-2x64", {6}, 2);
  TrainConfig cfg;
  cfg.optimizer = TrainConfig::Optimizer::Sgd;
  cfg.lr = 1e200;
  cfg.epochs = 5;
  try {
    train(spec, task, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainDivergence& e) {
    EXPECT_GE(e.epoch, 0);
    EXPECT_LT(e.epoch, 5);
  }
}

TEST(Train, InputShapeMismatchRejected) {
  Task task = separable_task(2, 8, 0.3, 11, 6);
  NetworkSpec spec = named_spec("mlp-2x64", {9}, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(spec, task, cfg), std::invalid_argument);
}

TEST(Performance, Endpoints) {
  TrainedNetwork net = identity_head_net();
  Task right;
  right.name = "right";
  right.num_classes = 2;
  right.data.train = onehot_dataset(4, false);
  right.data.test = onehot_dataset(20, false);
  EXPECT_DOUBLE_EQ(performance(net, right), 1.0);

  Task wrong = right;
  wrong.data.test = onehot_dataset(20, true);
  EXPECT_DOUBLE_EQ(performance(net, wrong), 0.0);
}

TEST(Performance, OutputWidthMismatchRejected) {
  TrainedNetwork net = identity_head_net();
  Task t;
  t.num_classes = 3;
  t.data.test = onehot_dataset(4, false);
  EXPECT_THROW(performance(net, t), std::invalid_argument);
}

TEST(Performance, RandomNetworksAverageNearChance) {
  // binomial oracle: mean accuracy of seed-randomized nets on a balanced
  // 2-class test set concentrates near 0.5
  Task t;
  t.name = "balanced";
  t.num_classes = 2;
  t.data.train = onehot_dataset(4, false);
  SyntheticFamilySpec fam;
  fam.input_dim = 8;
  fam.class_centers = random_centers(2, 8, 1.0, 90);
  fam.samples_per_class = 50;
  fam.seed = 91;
  t.data.test = generate_synthetic_family(fam).train;  // 80 balanced samples

  NetworkSpec spec = named_spec("mlp-2x64", {8}, 2);
  double mean = 0.0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    TrainedNetwork net;
    net.spec = spec;
    net.params = init_params(spec, {8}, derive_seed(1000, static_cast<std::uint64_t>(s)));
    mean += performance(net, t);
  }
  mean /= seeds;
  EXPECT_NEAR(mean, 0.5, 0.1);
}

TEST(EpsilonApprox, ThresholdAndBoundary) {
  TrainedNetwork net = identity_head_net();
  Task t;
  t.num_classes = 2;
  t.data.train = onehot_dataset(4, false);

  // 19/20 correct -> performance 0.95
  Dataset test = onehot_dataset(20, false);
  test.labels[0] = 1 - test.labels[0];
  t.data.test = test;
  EXPECT_DOUBLE_EQ(performance(net, t), 0.95);
  EXPECT_TRUE(is_epsilon_approx(net, t, 0.1));    // 0.95 >= 0.9
  EXPECT_FALSE(is_epsilon_approx(net, t, 0.02));  // 0.95 < 0.98

  // exactly 1 - eps is inclusive: 18/20 with eps = 0.1
  test.labels[2] = 1 - test.labels[2];
  t.data.test = test;
  EXPECT_TRUE(is_epsilon_approx(net, t, 0.1));

  EXPECT_THROW(is_epsilon_approx(net, t, 0.0), std::invalid_argument);
  EXPECT_THROW(is_epsilon_approx(net, t, 1.0), std::invalid_argument);
}

TEST(StructuralSimilarity, SameSpecSameParameterLayout) {
  NetworkSpec spec = named_spec("conv-2x16", {1, 8, 8}, 4);
  ParamSet a = init_params(spec, {1, 8, 8}, 1);
  ParamSet b = init_params(spec, {1, 8, 8}, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].value.shape, b[i].value.shape);
  }
  EXPECT_TRUE(structurally_similar(spec, spec));
  NetworkSpec other = named_spec("mlp-2x64", {1, 8, 8}, 4);
  EXPECT_FALSE(structurally_similar(spec, other));
}

TEST(Checkpoint, RoundTripBitwise) {
  Task task = separable_task(2, 8, 0.3, 12, 8);
  NetworkSpec spec = named_spec("mlp-2x64", {8}, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  TrainedNetwork net = train(spec, task, cfg);
  auto path = (std::filesystem::temp_directory_path() / "ftd_ckpt_roundtrip.bin").string();
  save_checkpoint(net, path);
  TrainedNetwork loaded = load_checkpoint(path, spec);
  ASSERT_EQ(loaded.params.size(), net.params.size());
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    EXPECT_EQ(loaded.params[i].name, net.params[i].name);
    EXPECT_TRUE(loaded.params[i].value == net.params[i].value);
  }
}

TEST(Checkpoint, TruncatedFileRejected) {
  Task task = separable_task(2, 4, 0.3, 13, 6);
  NetworkSpec spec = named_spec("mlp-2x64", {4}, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainedNetwork net = train(spec, task, cfg);
  auto path = (std::filesystem::temp_directory_path() / "ftd_ckpt_trunc.bin").string();
  save_checkpoint(net, path);
  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_checkpoint(path, spec), std::runtime_error);
}

TEST(Checkpoint, SpecMismatchRejected) {
  Task task = separable_task(2, 4, 0.3, 14, 6);
  NetworkSpec spec = named_spec("mlp-2x64", {4}, 2);
  TrainConfig cfg;
  cfg.epochs = 1;
  TrainedNetwork net = train(spec, task, cfg);
  auto path = (std::filesystem::temp_directory_path() / "ftd_ckpt_spec.bin").string();
  save_checkpoint(net, path);
  NetworkSpec other = named_spec("mlp-2x64", {4}, 3);
  EXPECT_THROW(load_checkpoint(path, other), std::runtime_error);
}

TEST(SmallConv, MnistShapedInputBuilds) {
  NetworkSpec spec = named_spec("conv-2x16", {1, 28, 28}, 10);
  ComputeGraph g = build_graph(spec, 2, {28, 28}, true);
  g.set_params(init_params(spec, {28, 28}, 3));
  Rng rng = make_rng(4);
  TensorValue in = TensorValue::zeros({2, 28, 28});
  for (double& v : in.data) v = uniform01(rng);
  TensorValue labels({2}, {3.0, 7.0});
  EXPECT_TRUE(std::isfinite(g.forward_loss(in, labels)));
  g.backward();
}
