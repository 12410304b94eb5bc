#include <gtest/gtest.h>

#include "ecs/evolution.hpp"
#include "test_util.hpp"

using namespace ecs;

namespace {

// 30 maskable bits split 10|10|10, with a 4-filter last layer.
LayoutPtr layout_30() {
  return std::make_shared<const MaskLayout>(
      MaskLayout(1, {{3, 3, 1, 10}, {3, 3, 10, 10}, {3, 3, 10, 10}, {1, 1, 10, 4}}));
}

// 27 bits split 7|13|7.
LayoutPtr layout_27() {
  return std::make_shared<const MaskLayout>(
      MaskLayout(1, {{3, 3, 1, 7}, {3, 3, 7, 13}, {3, 3, 13, 7}, {1, 1, 7, 2}}));
}

LayoutPtr layout_10() {
  return std::make_shared<const MaskLayout>(
      MaskLayout::from_spec(fixtures::tiny_spec()));
}

// Exhaustive best over all floor-satisfying masks, with the GA tie-break.
std::pair<std::string, FitnessReport> brute_force(FitnessEvaluator& f,
                                                  const LayoutPtr& layout) {
  const std::size_t n = layout->bit_count();
  std::optional<std::pair<std::string, FitnessReport>> best;
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    std::vector<std::uint8_t> bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = (m >> i) & 1;
    Individual ind(layout, bits);
    if (!ind.satisfies_floor()) continue;
    const FitnessReport r = f.evaluate(ind);
    if (!best || better(r, ind.key(), best->second, best->first)) {
      best = {ind.key(), r};
    }
  }
  return *best;
}

}  // namespace

TEST(Selection, Probabilities) {
  using V = std::vector<double>;
  EXPECT_EQ(selection_probabilities(V{1, 1, 1, 1}), (V{0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(selection_probabilities(V{1, 3}), (V{0.25, 0.75}));
  EXPECT_EQ(selection_probabilities(V{1, 1, 2}), (V{0.25, 0.25, 0.5}));
  EXPECT_THROW(selection_probabilities(V{1, 0}), Error);
  EXPECT_THROW(selection_probabilities(V{1, -2}), Error);
  EXPECT_THROW(selection_probabilities(V{}), Error);
}

TEST(Roulette, DegenerateDistribution) {
  Rng rng(1);
  const std::vector<double> p = {0, 1, 0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(roulette_select(p, rng), 1u);
}

TEST(Roulette, EmpiricalFrequencies) {
  Rng rng(2);
  const int draws = 100000;
  std::vector<int> hits(4, 0);
  const std::vector<double> uniform(4, 0.25);
  for (int i = 0; i < draws; ++i) ++hits[roulette_select(uniform, rng)];
  for (int h : hits) EXPECT_NEAR(double(h) / draws, 0.25, 0.03);

  const std::vector<double> skew = {0.25, 0.75};
  int ones = 0;
  for (int i = 0; i < draws; ++i) ones += roulette_select(skew, rng) == 1;
  EXPECT_NEAR(double(ones) / draws, 0.75, 0.01);
}

TEST(Crossover, ReferenceStrings) {
  Rng rng(0);
  const auto layout = layout_30();
  const Individual a = Individual::parse(layout, "1011101010|0101110010|0101001111");
  const Individual b = Individual::parse(layout, "1010001011|1010101011|0110101111");
  const auto [x, y] = crossover_at(a, b, 10, 20, rng);
  EXPECT_EQ(x.to_string(), "1011101010|1010101011|0101001111");
  EXPECT_EQ(y.to_string(), "1010001011|0101110010|0110101111");
}

TEST(Crossover, IdenticalParentsAndFullSegment) {
  Rng rng(3);
  const auto layout = layout_30();
  const Individual a = random_individual(layout, 0.5, rng);
  const Individual b = random_individual(layout, 0.5, rng);
  for (int i = 0; i < 20; ++i) {
    const auto [x, y] = crossover(a, a, rng);
    EXPECT_TRUE(x == a);
    EXPECT_TRUE(y == a);
  }
  const auto [x, y] = crossover_at(a, b, 0, 30, rng);
  EXPECT_TRUE(x == b);
  EXPECT_TRUE(y == a);
  EXPECT_THROW(crossover_at(a, b, 20, 10, rng), Error);
}

TEST(Mutation, ReferenceStrings) {
  Rng rng(0);
  const Individual p = Individual::parse(layout_27(), "0110100|1001010100001|1010100");
  const Individual child = mutate_fragment(p, 7, 20, rng);
  EXPECT_EQ(child.to_string(), "0110100|0110101011110|1010100");
}

TEST(Mutation, EmptyFragmentAndFullComplement) {
  Rng rng(5);
  const auto layout = layout_27();
  const Individual p = random_individual(layout, 0.5, rng);
  EXPECT_TRUE(mutate_fragment(p, 4, 4, rng) == p);
  const Individual all = Individual::all_ones(layout);
  const Individual flipped = mutate_fragment(all, 0, 27, rng);
  // Every layer was emptied, so repair left exactly one bit per layer.
  EXPECT_EQ(surviving_counts(flipped), (std::vector<int>{1, 1, 1, 1, 2}));
}

TEST(Mutation, RandomFragmentsRepaired) {
  Rng rng(6);
  const auto layout = layout_27();
  Individual p = random_individual(layout, 0.2, rng);
  for (int i = 0; i < 500; ++i) {
    p = mutate(p, rng);
    EXPECT_TRUE(p.satisfies_floor());
  }
}

TEST(GAConfig, Validation) {
  GAConfig c;
  c.validate();
  c.s1 = 0.5;
  EXPECT_THROW(c.validate(), Error);
  c = GAConfig{};
  c.population = 1;
  EXPECT_THROW(c.validate(), Error);
  c = GAConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Better, TieBreaks) {
  FitnessReport a, b;
  a.fitness = b.fitness = 1.0;
  a.kept_weights = 10;
  b.kept_weights = 12;
  EXPECT_TRUE(better(a, "11", b, "01"));
  b.kept_weights = 10;
  EXPECT_TRUE(better(b, "01", a, "11"));
  b.fitness = 1.1;
  EXPECT_TRUE(better(b, "11", a, "01"));
}

TEST(Evolve, SurrogateFindsBruteForceOptimum) {
  const auto layout = layout_10();
  int found = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FitnessConfig fc;
    SurrogateFitness f(layout, fc, seed);
    const auto oracle = brute_force(f, layout);
    GAConfig ga;
    ga.population = 20;
    ga.iterations = 30;
    ga.seed = seed;
    const EvolutionResult r = evolve(layout, f, ga);
    found += r.best_report.fitness == oracle.second.fitness;
  }
  EXPECT_GE(found, 4);
}

TEST(Evolve, InvariantsHold) {
  const auto layout = fixtures::lenet_layout();
  FitnessConfig fc;
  SurrogateFitness f(layout, fc, 1);
  GAConfig ga;
  ga.population = 30;
  ga.iterations = 15;
  ga.seed = 2;
  const EvolutionResult r = evolve(layout, f, ga);
  ASSERT_EQ(r.log.generations.size(), 15u);
  EXPECT_TRUE(r.log.best_non_decreasing());
  for (const auto& g : r.log.generations) {
    EXPECT_EQ(g.population, 30);
    EXPECT_EQ(g.valid, 30);
    EXPECT_EQ(g.op_elite + g.op_random + g.op_selection + g.op_crossover + g.op_mutation, 30);
  }
  EXPECT_EQ(r.final_population.size(), 30u);
  EXPECT_EQ(r.best.to_string(), r.log.generations.back().best_bits);
}

TEST(Evolve, OperatorFrequencies) {
  const auto layout = layout_10();
  FitnessConfig fc;
  SurrogateFitness f(layout, fc, 1);
  GAConfig ga;
  ga.population = 200;
  ga.iterations = 26;
  const EvolutionResult r = evolve(layout, f, ga);
  double sel = 0, cro = 0, mut = 0, n = 0;
  for (std::size_t g = 1; g < r.log.generations.size(); ++g) {
    const auto& rec = r.log.generations[g];
    sel += rec.op_selection;
    cro += rec.op_crossover;
    mut += rec.op_mutation;
    n += rec.population - 1;
  }
  // 4975 slots: binomial sd below 0.007 for every operator.
  EXPECT_NEAR(sel / n, 0.2, 0.03);
  EXPECT_NEAR(cro / n, 0.7, 0.03);
  EXPECT_NEAR(mut / n, 0.1, 0.03);
}

TEST(Evolve, SingleGenerationIsBestOfRandomStart) {
  const auto layout = layout_10();
  FitnessConfig fc;
  SurrogateFitness f(layout, fc, 3);
  GAConfig ga;
  ga.population = 12;
  ga.iterations = 1;
  const EvolutionResult r = evolve(layout, f, ga);
  ASSERT_EQ(r.log.generations.size(), 1u);
  EXPECT_EQ(r.log.generations[0].op_random, 12);
  for (const auto& ind : r.final_population) {
    EXPECT_FALSE(better(f.evaluate(ind), ind.key(), r.best_report, r.best.key()));
  }
}

TEST(Evolve, DeterministicAcrossWorkers) {
  const auto layout = fixtures::lenet_layout();
  FitnessConfig fc;
  GAConfig ga;
  ga.population = 24;
  ga.iterations = 8;
  ga.seed = 9;
  SurrogateFitness f1(layout, fc, 4), f4(layout, fc, 4);
  ga.workers = 1;
  const auto a = evolve(layout, f1, ga);
  ga.workers = 4;
  const auto b = evolve(layout, f4, ga);
  EXPECT_EQ(a.best.key(), b.best.key());
  EXPECT_EQ(a.log.to_jsonl(), b.log.to_jsonl());
}

TEST(Evolve, PureAccuracySearchDoesNotLoseAccuracy) {
  const auto layout = layout_10();
  FitnessConfig fc;
  fc.lambda = 0.0;
  SurrogateFitness f(layout, fc, 8);
  GAConfig ga;
  ga.population = 16;
  ga.iterations = 10;
  const auto r = evolve(layout, f, ga);
  EXPECT_LE(r.best_report.error, r.log.generations.front().best_error);
}

TEST(EvolutionLog, JsonlRoundTrip) {
  const auto layout = layout_10();
  FitnessConfig fc;
  SurrogateFitness f(layout, fc, 1);
  GAConfig ga;
  ga.population = 10;
  ga.iterations = 4;
  const auto r = evolve(layout, f, ga);
  const std::string text = r.log.to_jsonl();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_TRUE(EvolutionLog::from_jsonl(text) == r.log);
  EXPECT_THROW(EvolutionLog::from_jsonl("{\"generation\": 1}\n"), Error);
}
