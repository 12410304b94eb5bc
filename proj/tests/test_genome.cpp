#include <gtest/gtest.h>

#include "ecs/genome.hpp"
#include "ecs/train.hpp"
#include "test_util.hpp"

using namespace ecs;

TEST(Layout, LenetCounts) {
  const auto layout = fixtures::lenet_layout();
  EXPECT_EQ(layout->bit_count(), 570u);
  EXPECT_EQ(layout->total_filters(), 580u);
  EXPECT_EQ(layout->total_weights(), 430500u);
  EXPECT_FALSE(layout->maskable(3));
  EXPECT_EQ(layout->offset(2), 70u);
}

TEST(Layout, RejectsBrokenChain) {
  EXPECT_THROW(MaskLayout(1, {{5, 5, 1, 20}, {5, 5, 19, 50}}), Error);
  EXPECT_THROW(MaskLayout(1, {{5, 5, 1, 0}}), Error);
}

TEST(RandomIndividual, DensityOneIsAllOnes) {
  Rng rng(1);
  const Individual ind = random_individual(fixtures::lenet_layout(), 1.0, rng);
  EXPECT_TRUE(ind == Individual::all_ones(fixtures::lenet_layout()));
}

TEST(RandomIndividual, HalfDensityDeterministicAndNonEmpty) {
  Rng a(42), b(42);
  const Individual x = random_individual(fixtures::lenet_layout(), 0.5, a);
  const Individual y = random_individual(fixtures::lenet_layout(), 0.5, b);
  EXPECT_EQ(x.key(), y.key());
  EXPECT_TRUE(x.satisfies_floor());
  EXPECT_EQ(x.key().size(), 570u);
}

TEST(RandomIndividual, TinyDensityHitsRepairFloor) {
  Rng rng(7);
  const Individual ind = random_individual(fixtures::lenet_layout(), 1e-12, rng);
  EXPECT_EQ(surviving_counts(ind), (std::vector<int>{1, 1, 1, 1, 10}));
  EXPECT_THROW(random_individual(fixtures::lenet_layout(), 0.0, rng), Error);
}

TEST(Repair, OnlySetsBits) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> bits(570);
    std::bernoulli_distribution keep(0.01);
    for (auto& b : bits) b = keep(rng);
    Individual ind(fixtures::lenet_layout(), bits);
    repair(ind, rng);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i]) EXPECT_EQ(ind.bits()[i], 1);
    }
    EXPECT_TRUE(ind.satisfies_floor());
  }
}

TEST(SurvivingCounts, ReferenceMask) {
  EXPECT_EQ(surviving_counts(fixtures::reference_mask()),
            (std::vector<int>{1, 9, 17, 84, 10}));
  EXPECT_EQ(surviving_counts(Individual::all_ones(fixtures::lenet_layout())),
            (std::vector<int>{1, 20, 50, 500, 10}));
}

TEST(SurvivingCounts, SingleBitPerLayer) {
  const int ones[] = {1, 1, 1};
  EXPECT_EQ(surviving_counts(Individual::keep_first(fixtures::lenet_layout(), ones)),
            (std::vector<int>{1, 1, 1, 1, 10}));
}

TEST(WeightCount, ReferenceArithmetic) {
  const auto layout = fixtures::lenet_layout();
  const auto wc = kept_weight_count(*layout, surviving_counts(fixtures::reference_mask()));
  EXPECT_EQ(wc.total, 430500u);
  EXPECT_EQ(wc.kept, 25u * 1 * 9 + 25u * 9 * 17 + 16u * 17 * 84 + 1u * 84 * 10);
  EXPECT_EQ(wc.kept, 27738u);
  EXPECT_EQ(wc.discarded, 402762u);
  const auto full = kept_weight_count(
      *layout, surviving_counts(Individual::all_ones(layout)));
  EXPECT_EQ(full.discarded, 0u);
}

TEST(Individual, ParseAndPrint) {
  const auto layout = std::make_shared<const MaskLayout>(
      MaskLayout(1, {{3, 3, 1, 4}, {3, 3, 4, 6}, {1, 1, 6, 2}}));
  const Individual ind = Individual::parse(layout, "1010|011001");
  EXPECT_EQ(ind.to_string(), "1010|011001");
  EXPECT_EQ(ind.key(), "1010011001");
  EXPECT_TRUE(Individual::parse(layout, "1010011001") == ind);
  EXPECT_THROW(Individual::parse(layout, "10100|11001"), Error);
  EXPECT_THROW(Individual::parse(layout, "101001100"), Error);
  EXPECT_THROW(Individual::parse(layout, "10100110x1"), Error);
}

TEST(Compact, AllOnesIsIdentity) {
  const TrainedNetwork net = TrainedNetwork::initialize(lenet_spec(), 4);
  const TrainedNetwork same =
      compact_network(net, Individual::all_ones(fixtures::lenet_layout()));
  EXPECT_TRUE(same == net);
  const LabeledDataset d = synthetic_blobs(10, 3, {28, 28, 1}, 2);
  EXPECT_EQ(evaluate_error(same, d), evaluate_error(net, d));
}

TEST(Compact, ParameterCountMatchesKeptWeights) {
  const TrainedNetwork net = TrainedNetwork::initialize(lenet_spec(), 4);
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    const Individual ind = random_individual(fixtures::lenet_layout(), 0.3, rng);
    const TrainedNetwork small = compact_network(net, ind);
    std::size_t weights = 0;
    for (std::size_t i : small.spec().conv_layers()) {
      weights += small.params()[i].weight.size();
    }
    const auto counts = surviving_counts(ind);
    EXPECT_EQ(weights, kept_weight_count(ind.layout(), counts).kept);
    const auto convs = small.spec().conv_layers();
    for (std::size_t k = 0; k < convs.size(); ++k) {
      EXPECT_EQ(small.spec().layers[convs[k]].out_filters, counts[k + 1]);
    }
  }
}

TEST(Compact, ReferenceMaskParameterCount) {
  const TrainedNetwork small = compact_network(
      TrainedNetwork::initialize(lenet_spec(), 4), fixtures::reference_mask());
  std::size_t weights = 0;
  for (std::size_t i : small.spec().conv_layers()) {
    weights += small.params()[i].weight.size();
  }
  EXPECT_EQ(weights, 27738u);
}

// Zeroing filter n in layer i and its input slices in layer i+1 gives the
// same logits as removing it. Batchnorm is set so that a zeroed channel
// stays exactly zero after normalization and relu.
TEST(Compact, MaskedForwardEquivalence) {
  const NetworkSpec spec = fixtures::tiny_spec(3);
  TrainedNetwork net = TrainedNetwork::initialize(spec, 8);
  Rng rng(1);
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerKind::batchnorm) continue;
    auto& p = net.mutable_params()[i];
    for (std::size_t c = 0; c < p.weight.size(); ++c) {
      p.weight[c] = u(rng);
      p.bias[c] = 0.1f * u(rng);
      p.running_mean[c] = 0.0f;
      p.running_var[c] = u(rng);
    }
  }
  const auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(spec));
  const Individual ind = Individual::parse(layout, "1011|110101");
  TrainedNetwork zeroed = net;
  auto& params = zeroed.mutable_params();
  const auto convs = spec.conv_layers();
  const int dropped[2][6] = {{1, -1}, {2, 4, -1}};
  for (int k = 0; k < 2; ++k) {
    const std::size_t ci = convs[std::size_t(k)];
    const std::size_t bn = ci + 1;
    const std::size_t next = convs[std::size_t(k) + 1];
    for (int j = 0; dropped[k][j] >= 0; ++j) {
      const std::size_t n = std::size_t(dropped[k][j]);
      Tensor& w = params[ci].weight;
      for (std::size_t i = n; i < w.size(); i += w.dim(3)) w[i] = 0.0f;
      params[ci].bias[n] = 0.0f;
      // Make the batchnorm output exactly zero for the dropped channel.
      params[bn].bias[n] = 0.0f;
      params[bn].running_mean[n] = 0.0f;
      Tensor& wn = params[next].weight;
      const std::size_t c_in = wn.dim(2), n_out = wn.dim(3);
      for (std::size_t i = 0; i < wn.size(); ++i) {
        if ((i / n_out) % c_in == n) wn[i] = 0.0f;
      }
    }
  }
  const TrainedNetwork small = compact_network(net, ind);
  const LabeledDataset d = synthetic_blobs(3, 4, spec.input, 6, 0.3);
  const Tensor a = forward(zeroed, d.images);
  const Tensor b = forward(small, d.images);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-5 * std::max(1.0f, std::abs(a[i])));
  }
}

TEST(Compact, LayoutMismatchRejected) {
  const TrainedNetwork net = TrainedNetwork::initialize(fixtures::tiny_spec(), 1);
  EXPECT_THROW(compact_network(net, fixtures::reference_mask()), Error);
}

TEST(CompactSpec, CountsApplied) {
  const NetworkSpec s = compact_spec(lenet_spec(), std::vector<int>{1, 9, 17, 84, 10});
  const auto convs = s.conv_layers();
  EXPECT_EQ(s.layers[convs[1]].in_channels, 9);
  EXPECT_EQ(s.layers[convs[2]].out_filters, 84);
  EXPECT_THROW(compact_spec(lenet_spec(), std::vector<int>{1, 0, 17, 84, 10}), Error);
}
