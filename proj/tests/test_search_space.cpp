#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "ftd/network.hpp"
#include "ftd/search_space.hpp"
#include "test_support.hpp"

using namespace ftd;
using ftd::test::random_tensor;

TEST(Validate, CompleteDagOk) {
  CellSpec c = uniform_cell(3, OperationKind::Conv3x3);
  EXPECT_TRUE(validate(c).empty());
}

TEST(Validate, MissingEdgeReported) {
  CellSpec c = uniform_cell(3, OperationKind::Identity);
  c.edge_ops.erase({0, 2});
  auto v = validate(c);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("densely"), std::string::npos);
  EXPECT_NE(v[0].find("(0,2)"), std::string::npos);
}

TEST(Validate, NodeCountBounds) {
  CellSpec c = uniform_cell(2, OperationKind::Zero);
  c.num_nodes = 7;
  auto v = validate(c);
  EXPECT_FALSE(v.empty());
}

TEST(Parse, UnknownOpNameRejected) {
  std::string text = "cell v1\nnodes 2\nedge 0 1 conv9x9\n";
  try {
    cell_from_string(text);
    FAIL() << "expected parse error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("conv9x9"), std::string::npos);
  }
}

TEST(CountCells, SmallValues) {
  EXPECT_EQ(count_cells(2, 1), 1u);
  EXPECT_EQ(count_cells(3, 2), 8u);
  EXPECT_EQ(count_cells(4, 10), 1000000u);
}

TEST(CountCells, MatchesBruteForceEnumeration) {
  // independent oracle: odometer enumeration of per-edge op assignments
  for (int n = 2; n <= 3; ++n)
    for (int m = 1; m <= 3; ++m) {
      auto edges = all_edges(n);
      std::vector<int> digits(edges.size(), 0);
      std::uint64_t enumerated = 0;
      bool done = false;
      while (!done) {
        ++enumerated;
        std::size_t pos = 0;
        while (pos < digits.size()) {
          if (++digits[pos] < m) break;
          digits[pos] = 0;
          ++pos;
        }
        if (pos == digits.size()) done = true;
      }
      EXPECT_EQ(count_cells(n, m), enumerated) << "n=" << n << " m=" << m;
    }
}

TEST(CountCells, LargeCountAsDecimalString) {
  // 10 ops on a 10-node-free-for-all would overflow; the string form reports it
  EXPECT_EQ(count_cells_string(6, 10), "1000000000000000");
  EXPECT_EQ(count_cells_string(7, 10), "1000000000000000000000");  // 10^21 > 2^64
  EXPECT_THROW(count_cells(7, 10), std::overflow_error);
}

TEST(SampleCell, SingletonOpSet) {
  CellSpec c = sample_cell(4, {OperationKind::Identity}, 5);
  for (const auto& [e, op] : c.edge_ops) EXPECT_EQ(op, OperationKind::Identity);
  EXPECT_TRUE(validate(c).empty());
}

TEST(SampleCell, DeterministicUnderSeed) {
  std::vector<OperationKind> ops(kAllOperations.begin(), kAllOperations.end());
  EXPECT_TRUE(sample_cell(4, ops, 123) == sample_cell(4, ops, 123));
}

TEST(SampleCell, EmptyOpSetRejected) { EXPECT_THROW(sample_cell(3, {}, 1), std::invalid_argument); }

TEST(SampleCell, UniformOverSmallSpace) {
  // n=3, m=2: 8 cells; 10^4 draws should give 1250 +- 150 each
  CellSampler sampler(3, {OperationKind::Conv3x3, OperationKind::Identity});
  Rng rng = make_rng(77);
  std::map<std::string, int> freq;
  for (int i = 0; i < 10000; ++i) ++freq[cell_to_string(sampler(rng))];
  ASSERT_EQ(freq.size(), 8u);
  for (const auto& [cell, count] : freq) {
    EXPECT_GE(count, 1100) << cell;
    EXPECT_LE(count, 1400) << cell;
  }
}

TEST(Serialization, RoundTripProperty) {
  std::vector<OperationKind> ops(kAllOperations.begin(), kAllOperations.end());
  Rng rng = make_rng(31);
  for (int n = 2; n <= 6; ++n) {
    CellSampler sampler(n, ops);
    for (int rep = 0; rep < 20; ++rep) {
      CellSpec c = sampler(rng);
      EXPECT_TRUE(cell_from_string(cell_to_string(c)) == c);
    }
  }
}

TEST(Dictionary, SaveLoadRoundTrip) {
  BaselineDictionary d;
  d.put("alpha", uniform_cell(3, OperationKind::Conv3x3), Skeleton{});
  d.put("beta", sample_cell(4, {OperationKind::Identity, OperationKind::MaxPool3x3}, 9), Skeleton{});
  std::ostringstream os;
  d.save(os);
  std::istringstream is(os.str());
  BaselineDictionary d2 = BaselineDictionary::load(is);
  EXPECT_EQ(d2.task_names(), d.task_names());
  EXPECT_TRUE(d2.at("alpha").cell == d.at("alpha").cell);
  EXPECT_TRUE(d2.at("beta").cell == d.at("beta").cell);
  EXPECT_EQ(d2.at("beta").ops, d.at("beta").ops);
}

TEST(SearchSpaceFor, RestrictsToStoredOpsAndNodes) {
  BaselineDictionary d;
  CellSpec stored;
  stored.num_nodes = 4;
  auto edges = all_edges(4);
  for (std::size_t i = 0; i < edges.size(); ++i)
    stored.edge_ops[edges[i]] = i % 2 ? OperationKind::Conv3x3 : OperationKind::Identity;
  d.put("src", stored, Skeleton{});

  CellSampler sampler = search_space_for(d, "src");
  EXPECT_EQ(sampler.space_size(), "64");  // 2 ops over C(4,2)=6 edges
  Rng rng = make_rng(3);
  for (int i = 0; i < 50; ++i) {
    CellSpec c = sampler(rng);
    EXPECT_EQ(c.num_nodes, 4);
    for (const auto& [e, op] : c.edge_ops)
      EXPECT_TRUE(op == OperationKind::Conv3x3 || op == OperationKind::Identity);
  }
}

TEST(SearchSpaceFor, MissingTaskRejected) {
  BaselineDictionary d;
  EXPECT_THROW(search_space_for(d, "ghost"), std::out_of_range);
}

TEST(SearchSpaceFor, FullSpaceFallback) {
  BaselineDictionary d;
  d.put("src", uniform_cell(3, OperationKind::Identity), Skeleton{});
  CellSampler sampler = search_space_for(d, "src", /*full_space=*/true);
  EXPECT_EQ(sampler.ops.size(), 10u);
}

// ---- instantiation ----

namespace {

NetworkSpec cell_net(const CellSpec& cell, Skeleton sk = {}) {
  NetworkSpec s;
  s.kind = NetworkKind::CellNetwork;
  s.input_shape = {1, 8, 8};
  s.num_classes = sk.num_classes;
  s.skeleton = sk;
  s.cell = cell;
  return s;
}

}  // namespace

TEST(Instantiate, AllIdentityCellEqualsPlainSkeleton) {
  Skeleton sk;
  sk.num_classes = 4;
  NetworkSpec spec = cell_net(uniform_cell(3, OperationKind::Identity), sk);
  ParamSet params = init_params(spec, {1, 8, 8}, 42);

  ComputeGraph g = build_graph(spec, 2, {1, 8, 8}, false);
  g.set_params(params);

  // plain skeleton: stem -> reduction -> head, same parameters
  ComputeGraph plain;
  int x = plain.input({2, 1, 8, 8});
  int sw = plain.param("stem.w", find_tensor(params, "stem.w"));
  int sb = plain.param("stem.b", find_tensor(params, "stem.b"));
  int cur = plain.relu(plain.conv2d(x, sw, sb, ConvAttrs{1, 1, 1, 1}));
  cur = plain.max_pool2d(cur, PoolAttrs{3, 3, 2, 1});
  cur = plain.reshape(cur, {2, 8 * 4 * 4});
  int hw = plain.param("head.w", find_tensor(params, "head.w"));
  int hb = plain.param("head.b", find_tensor(params, "head.b"));
  plain.add(plain.matmul(cur, hw), hb);

  Rng rng = make_rng(8);
  TensorValue in = ftd::test::random_tensor({2, 1, 8, 8}, rng);
  const TensorValue& a = g.forward(in);
  const TensorValue& b = plain.forward(in);
  ASSERT_EQ(a.shape, b.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-9);
}

TEST(Instantiate, AllZeroCellKeepsHalvedStemFeatures) {
  Skeleton sk;
  sk.num_classes = 3;
  NetworkSpec spec = cell_net(uniform_cell(3, OperationKind::Zero), sk);
  ParamSet params = init_params(spec, {1, 8, 8}, 7);

  ComputeGraph g = build_graph(spec, 1, {1, 8, 8}, false);
  g.set_params(params);

  // skip path only: each stage passes 0.5 * input through
  ComputeGraph plain;
  int x = plain.input({1, 1, 8, 8});
  int sw = plain.param("stem.w", find_tensor(params, "stem.w"));
  int sb = plain.param("stem.b", find_tensor(params, "stem.b"));
  int cur = plain.relu(plain.conv2d(x, sw, sb, ConvAttrs{1, 1, 1, 1}));
  cur = plain.scale(cur, 0.5);
  cur = plain.max_pool2d(cur, PoolAttrs{3, 3, 2, 1});
  cur = plain.scale(cur, 0.5);
  cur = plain.reshape(cur, {1, 8 * 4 * 4});
  int hw = plain.param("head.w", find_tensor(params, "head.w"));
  int hb = plain.param("head.b", find_tensor(params, "head.b"));
  plain.add(plain.matmul(cur, hw), hb);

  Rng rng = make_rng(9);
  TensorValue in = ftd::test::random_tensor({1, 1, 8, 8}, rng);
  const TensorValue& a = g.forward(in);
  const TensorValue& b = plain.forward(in);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-9);
}

TEST(Instantiate, NoSkipZeroCellIsConstant) {
  Skeleton sk;
  sk.num_classes = 3;
  sk.cell_skip = false;
  NetworkSpec spec = cell_net(uniform_cell(3, OperationKind::Zero), sk);
  ParamSet params = init_params(spec, {1, 8, 8}, 7);
  ComputeGraph g = build_graph(spec, 1, {1, 8, 8}, false);
  g.set_params(params);
  Rng rng = make_rng(10);
  TensorValue a = g.forward(ftd::test::random_tensor({1, 1, 8, 8}, rng));
  TensorValue b = g.forward(ftd::test::random_tensor({1, 1, 8, 8}, rng));
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_DOUBLE_EQ(a.data[i], b.data[i]);
}

TEST(Instantiate, SampledCellsBuildAndBackprop) {
  std::vector<OperationKind> ops(kAllOperations.begin(), kAllOperations.end());
  Rng rng = make_rng(55);
  for (int n = 2; n <= 4; ++n) {
    CellSampler sampler(n, ops);
    for (int rep = 0; rep < 12; ++rep) {
      NetworkSpec spec = cell_net(sampler(rng));
      ComputeGraph g = build_graph(spec, 2, {1, 8, 8}, true);
      g.set_params(init_params(spec, {1, 8, 8}, derive_seed(55, static_cast<std::uint64_t>(n * 100 + rep))));
      TensorValue in = ftd::test::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
      TensorValue labels({2}, {0.0, 1.0});
      double loss = g.forward_loss(in, labels);
      EXPECT_TRUE(std::isfinite(loss));
      g.backward();
      EXPECT_FALSE(g.gradients().empty());
    }
  }
}

TEST(Instantiate, TooManyReductionsRejected) {
  Skeleton sk;
  sk.num_stages = 6;  // 8x8 cannot survive five reductions
  NetworkSpec spec = cell_net(uniform_cell(2, OperationKind::Identity), sk);
  EXPECT_THROW(build_graph(spec, 1, {1, 8, 8}, true), std::invalid_argument);
}

TEST(Instantiate, SampledCellTrainsWithoutShapeErrors) {
  SyntheticFamilySpec fam;
  fam.input_dim = 64;
  fam.class_centers = random_centers(2, 64, 1.0, 5);
  fam.samples_per_class = 10;
  fam.seed = 6;
  auto split = generate_synthetic_family(fam);
  Task task = derive_task(split, [](int r) { return r; }, 2, "tiny");

  std::vector<OperationKind> ops(kAllOperations.begin(), kAllOperations.end());
  Skeleton sk;
  sk.num_classes = 2;
  NetworkSpec spec = cell_net(sample_cell(3, ops, 101), sk);
  spec.num_classes = 2;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  TrainedNetwork net = train(spec, task, cfg);
  EXPECT_EQ(net.log.size(), 1u);
}
