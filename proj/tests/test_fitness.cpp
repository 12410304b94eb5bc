#include <gtest/gtest.h>

#include <thread>

#include "ecs/fitness.hpp"
#include "test_util.hpp"

using namespace ecs;

namespace {

const FitnessVariant kAll[] = {FitnessVariant::v1_uniform, FitnessVariant::v2_sized,
                               FitnessVariant::v3_coupled_literal,
                               FitnessVariant::v3_coupled_corrected};

// Arithmetic written out per layer from H_i W_i C_i N_i = 5x5x1x20,
// 5x5x20x50, 4x4x50x500, 1x1x500x10 and kept 9/17/84/10.
constexpr double kM = 500 + 25000 + 400000 + 5000;

}  // namespace

TEST(Sparsity, AllOnesIsZero) {
  const Individual ind = Individual::all_ones(fixtures::lenet_layout());
  for (auto v : kAll) EXPECT_EQ(sparsity_term(ind, v), 0.0) << to_string(v);
}

TEST(Sparsity, ReferenceMaskV1) {
  EXPECT_NEAR(sparsity_term(fixtures::reference_mask(), FitnessVariant::v1_uniform),
              (11.0 + 33.0 + 416.0) / 580.0, 1e-12);
}

TEST(Sparsity, ReferenceMaskV2) {
  const double expect = (25.0 * 1 * 11 + 25.0 * 20 * 33 + 16.0 * 50 * 416) / kM;
  EXPECT_NEAR(expect, 0.81202, 1e-5);
  EXPECT_NEAR(sparsity_term(fixtures::reference_mask(), FitnessVariant::v2_sized),
              expect, 1e-12);
}

TEST(Sparsity, ReferenceMaskV3Literal) {
  const double expect = (25.0 * 0 * 11 + 25.0 * 11 * 33 + 16.0 * 33 * 416 + 1.0 * 416 * 0) / kM;
  EXPECT_NEAR(expect, 0.53130, 1e-5);
  EXPECT_NEAR(sparsity_term(fixtures::reference_mask(), FitnessVariant::v3_coupled_literal),
              expect, 1e-12);
}

TEST(Sparsity, ReferenceMaskV3Corrected) {
  const double expect = (kM - (25.0 * 9 + 25.0 * 9 * 17 + 16.0 * 17 * 84 + 84.0 * 10)) / kM;
  EXPECT_NEAR(expect, 0.93556, 1e-5);
  EXPECT_NEAR(sparsity_term(fixtures::reference_mask(), FitnessVariant::v3_coupled_corrected),
              expect, 1e-12);
}

TEST(Sparsity, V1RepairFloor) {
  const int ones[] = {1, 1, 1};
  const Individual ind = Individual::keep_first(fixtures::lenet_layout(), ones);
  EXPECT_NEAR(sparsity_term(ind, FitnessVariant::v1_uniform),
              (580.0 - 3.0 - 10.0) / 580.0, 1e-12);
}

TEST(Sparsity, MonotoneUnderBitClearing) {
  Rng rng(12);
  const auto layout = fixtures::lenet_layout();
  for (int trial = 0; trial < 30; ++trial) {
    Individual ind = random_individual(layout, 0.6, rng);
    std::uniform_int_distribution<std::size_t> pick(0, ind.bits().size() - 1);
    for (int step = 0; step < 20; ++step) {
      const std::size_t i = pick(rng);
      if (!ind.bits()[i]) continue;
      Individual next = ind;
      next.mutable_bits()[i] = 0;
      if (!next.satisfies_floor()) continue;
      for (auto v : kAll) {
        EXPECT_GE(sparsity_term(next, v), sparsity_term(ind, v)) << to_string(v);
      }
      ind = next;
    }
  }
}

TEST(Sparsity, CorrectedEqualsDiscardedFraction) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Individual ind = random_individual(fixtures::lenet_layout(), 0.4, rng);
    const auto wc = kept_weight_count(ind.layout(), surviving_counts(ind));
    EXPECT_DOUBLE_EQ(sparsity_term(ind, FitnessVariant::v3_coupled_corrected),
                     double(wc.total - wc.kept) / double(wc.total));
  }
}

TEST(Variant, NamesRoundTrip) {
  for (auto v : kAll) EXPECT_EQ(fitness_variant_from_string(to_string(v)), v);
  EXPECT_THROW(fitness_variant_from_string("v4"), Error);
}

TEST(Report, FitnessFormulaAndMonotonicity) {
  FitnessConfig c;
  c.lambda = 0.9;
  const Individual ind = fixtures::reference_mask();
  const FitnessReport r = make_report(ind, 0.1, c);
  EXPECT_DOUBLE_EQ(r.fitness, 1.0 - 0.1 + 0.9 * r.sparsity);
  EXPECT_GT(r.fitness, 0.0);
  EXPECT_LE(r.fitness, 1.0 + c.lambda);
  EXPECT_GT(make_report(ind, 0.05, c).fitness, r.fitness);
  FitnessConfig more = c;
  more.lambda = 1.2;
  EXPECT_GT(make_report(ind, 0.1, more).fitness, r.fitness);
  EXPECT_EQ(r.kept_weights, 27738u);
  FitnessConfig bad;
  bad.lambda = -0.1;
  EXPECT_THROW(bad.validate(), Error);
}

namespace {

struct NetFixture {
  NetworkSpec spec = fixtures::tiny_spec();
  LabeledDataset data = synthetic_blobs(2, 40, {8, 8, 1}, 3);
  TrainedNetwork net;
  std::vector<std::size_t> finetune, eval;

  NetFixture() {
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 8;
    std::vector<std::size_t> all(60);
    std::iota(all.begin(), all.end(), std::size_t{0});
    net = train(TrainedNetwork::initialize(spec, 2), data, tc, all);
    finetune = all;
    eval.resize(20);
    std::iota(eval.begin(), eval.end(), std::size_t{60});
  }
};

}  // namespace

TEST(NetworkFitness, LambdaZeroAllOnesNoFineTune) {
  NetFixture f;
  FitnessConfig c;
  c.lambda = 0.0;
  NetworkFitness eval(f.net, f.data, f.finetune, f.eval, c);
  const auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(f.spec));
  const FitnessReport r = eval.evaluate(Individual::all_ones(layout));
  const double e = evaluate_error(f.net, f.data, f.eval);
  EXPECT_DOUBLE_EQ(r.error, e);
  EXPECT_DOUBLE_EQ(r.fitness, 1.0 - e);
  EXPECT_FALSE(r.fine_tuned);
}

TEST(NetworkFitness, CachedAndDeterministic) {
  NetFixture f;
  FitnessConfig c;
  c.finetune_steps = 5;
  c.finetune.batch_size = 8;
  c.finetune.learning_rate = 0.005;
  c.seed = 4;
  const auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(f.spec));
  const Individual ind = Individual::parse(layout, "1101|011011");
  NetworkFitness a(f.net, f.data, f.finetune, f.eval, c);
  NetworkFitness b(f.net, f.data, f.finetune, f.eval, c);
  const FitnessReport ra = a.evaluate(ind);
  EXPECT_EQ(a.computed(), 1u);
  EXPECT_TRUE(a.evaluate(ind) == ra);
  EXPECT_EQ(a.computed(), 1u);
  EXPECT_TRUE(b.evaluate(ind) == ra);
  EXPECT_TRUE(ra.fine_tuned);
}

TEST(NetworkFitness, DivergenceGivesWorstCase) {
  NetFixture f;
  FitnessConfig c;
  c.finetune_steps = 5;
  c.finetune.learning_rate = 1e30;
  NetworkFitness eval(f.net, f.data, f.finetune, f.eval, c);
  const auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(f.spec));
  const FitnessReport r = eval.evaluate(Individual::parse(layout, "1111|111110"));
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.error, 1.0);
  EXPECT_NEAR(r.fitness, c.lambda * r.sparsity, 1e-12);
}

TEST(FineTune, ZeroStepsUnchanged) {
  NetFixture f;
  TrainConfig tc;
  EXPECT_TRUE(fine_tune(f.net, f.data, f.finetune, 0, tc) == f.net);
}

TEST(FineTune, DoesNotHurtOnBlobs) {
  NetFixture f;
  const auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(f.spec));
  const TrainedNetwork small =
      compact_network(f.net, Individual::parse(layout, "1010|101010"));
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 0.005;
  const double before = evaluate_error(small, f.data, f.eval);
  const double after =
      evaluate_error(fine_tune(small, f.data, f.finetune, 200, tc), f.data, f.eval);
  EXPECT_LE(after, before + 0.02);
}

TEST(FineTune, OnePassSteps) {
  EXPECT_EQ(one_pass_steps(10000, 64), 157u);
  EXPECT_EQ(one_pass_steps(2000, 64), 32u);
  EXPECT_EQ(one_pass_steps(64, 64), 1u);
}

TEST(Surrogate, DeterministicAndBounded) {
  const auto layout = std::make_shared<const MaskLayout>(
      MaskLayout::from_spec(fixtures::tiny_spec()));
  FitnessConfig c;
  SurrogateFitness a(layout, c, 5), b(layout, c, 5), other(layout, c, 6);
  Rng rng(1);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const Individual ind = random_individual(layout, 0.5, rng);
    const double e = a.surrogate_error(ind);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
    EXPECT_EQ(e, b.surrogate_error(ind));
    differs |= e != other.surrogate_error(ind);
  }
  EXPECT_TRUE(differs);
  EXPECT_DOUBLE_EQ(a.surrogate_error(Individual::all_ones(layout)), 0.01);
}

TEST(EvaluateMany, ParallelMatchesSerial) {
  const auto layout = fixtures::lenet_layout();
  FitnessConfig c;
  SurrogateFitness serial(layout, c, 2), parallel(layout, c, 2);
  Rng rng(4);
  std::vector<Individual> pop;
  for (int i = 0; i < 40; ++i) pop.push_back(random_individual(layout, 0.5, rng));
  pop.push_back(pop.front());
  evaluate_many(serial, pop, 1);
  evaluate_many(parallel, pop, 4);
  EXPECT_EQ(serial.computed(), 40u);
  EXPECT_EQ(parallel.computed(), 40u);
  for (const auto& ind : pop) {
    EXPECT_TRUE(*serial.cached(ind.key()) == *parallel.cached(ind.key()));
  }
}
