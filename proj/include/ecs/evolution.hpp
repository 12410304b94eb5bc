#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ecs/dataset.hpp"
#include "ecs/fitness.hpp"
#include "ecs/genome.hpp"
#include "ecs/train.hpp"

namespace ecs {

struct GAConfig {
  int population = 1000;  // K
  int iterations = 100;   // T
  double s1 = 0.2;        // selection copy
  double s2 = 0.7;        // crossover
  double s3 = 0.1;        // mutation
  double init_density = 0.5;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

/// Pr(j) = f_j / sum f. Throws on an empty list or a non-positive fitness.
std::vector<double> selection_probabilities(std::span<const double> fitness);

std::size_t roulette_select(std::span<const double> probabilities, Rng& rng);

/// Swaps bits [cut1, cut2) between the parents, then repairs both.
std::pair<Individual, Individual> crossover_at(const Individual& a,
                                               const Individual& b,
                                               std::size_t cut1,
                                               std::size_t cut2, Rng& rng);
/// Two uniform cut points in [0, length].
std::pair<Individual, Individual> crossover(const Individual& a,
                                            const Individual& b, Rng& rng);

/// Complements bits [begin, end), then repairs.
Individual mutate_fragment(const Individual& parent, std::size_t begin,
                           std::size_t end, Rng& rng);
/// Fragment with two uniform endpoints in [0, length].
Individual mutate(const Individual& parent, Rng& rng);

/// Total order used to pick the best: higher fitness, then fewer kept
/// weights, then the lexicographically smaller bit string.
bool better(const FitnessReport& ra, const std::string& ka,
            const FitnessReport& rb, const std::string& kb);

struct GenerationRecord {
  int generation = 0;
  int population = 0;
  int valid = 0;  // individuals meeting the one-filter-per-layer floor
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double min_fitness = 0.0;
  double best_error = 0.0;
  double best_sparsity = 0.0;
  double best_kept_fraction = 0.0;
  std::string best_bits;
  // How the individuals of this generation were produced.
  int op_elite = 0;
  int op_random = 0;
  int op_selection = 0;
  int op_crossover = 0;
  int op_mutation = 0;
  std::size_t evaluations = 0;  // distinct fitness computations so far

  friend bool operator==(const GenerationRecord&,
                         const GenerationRecord&) = default;
};

struct EvolutionLog {
  std::vector<GenerationRecord> generations;

  std::string to_jsonl() const;
  static EvolutionLog from_jsonl(const std::string& text);
  /// True when best fitness never decreases from one generation to the next.
  bool best_non_decreasing() const;

  friend bool operator==(const EvolutionLog&, const EvolutionLog&) = default;
};

struct EvolutionResult {
  Individual best;
  FitnessReport best_report;
  EvolutionLog log;
  std::vector<Individual> final_population;
};

using GenerationObserver = std::function<void(const GenerationRecord&)>;

/// The generation loop: P_1 random; each later generation keeps the previous
/// best in slot 1 and fills the rest by copy / crossover / mutation.
EvolutionResult evolve(const LayoutPtr& layout, FitnessEvaluator& evaluator,
                       const GAConfig& config,
                       const GenerationObserver& observer = {});

/// Settings for the fine-tune applied to the winning network.
struct FinalTuneConfig {
  TrainConfig train{.epochs = 2, .learning_rate = 0.01};
};

struct EcsResult {
  EvolutionResult evolution;
  TrainedNetwork compact;
  bool final_diverged = false;
};

/// Full pipeline: evaluate masks of `net` with NetworkFitness on the split,
/// evolve, compact the winner and fine-tune it on the split's train indices.
EcsResult run_ecs(const TrainedNetwork& net, const LabeledDataset& data,
                  const SplitPlan& split, const GAConfig& ga,
                  const FitnessConfig& fitness, const FinalTuneConfig& final,
                  const GenerationObserver& observer = {});

}  // namespace ecs
