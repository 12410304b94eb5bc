#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecs/dataset.hpp"
#include "ecs/genome.hpp"
#include "ecs/train.hpp"

namespace ecs {

/// How the compression term of the fitness is normalized.
///  v1_uniform:            every filter counts the same, divided by L.
///  v2_sized:              H*W*C_i per discarded filter (original C_i), / M.
///  v3_coupled_literal:    H*W*|discarded_{i-1}|*|discarded_i|, / M.
///  v3_coupled_corrected:  discarded weights after channel coupling, / M.
enum class FitnessVariant {
  v1_uniform,
  v2_sized,
  v3_coupled_literal,
  v3_coupled_corrected,
};

const char* to_string(FitnessVariant variant) noexcept;
FitnessVariant fitness_variant_from_string(const std::string& name);

/// Compression term in [0,1]; 0 for the all-ones individual.
double sparsity_term(const Individual& ind, FitnessVariant variant);

struct FitnessConfig {
  double lambda = 0.9;
  FitnessVariant variant = FitnessVariant::v3_coupled_corrected;
  std::size_t finetune_steps = 0;
  /// Optimizer settings for fine-tuning; `epochs` is ignored.
  TrainConfig finetune;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitnessReport {
  double error = 1.0;
  double sparsity = 0.0;
  double fitness = 0.0;
  FitnessVariant variant = FitnessVariant::v3_coupled_corrected;
  double lambda = 0.0;
  bool fine_tuned = false;
  bool diverged = false;
  std::size_t kept_weights = 0;

  friend bool operator==(const FitnessReport&, const FitnessReport&) = default;
};

/// f = 1 - E + lambda * sparsity.
FitnessReport make_report(const Individual& ind, double error,
                          const FitnessConfig& config);

/// Seeded SGD steps on `subset`; zero steps returns the network unchanged.
/// Throws Error(numeric) on divergence.
TrainedNetwork fine_tune(TrainedNetwork net, const LabeledDataset& data,
                         std::span<const std::size_t> subset,
                         std::size_t steps, const TrainConfig& config);

/// Mini-batch steps in one pass over `subset_size` samples.
std::size_t one_pass_steps(std::size_t subset_size, int batch_size);

/// Thread-safe fitness with a cache keyed by the exact bit string.
class FitnessEvaluator {
 public:
  explicit FitnessEvaluator(FitnessConfig config);
  virtual ~FitnessEvaluator() = default;

  FitnessEvaluator(const FitnessEvaluator&) = delete;
  FitnessEvaluator& operator=(const FitnessEvaluator&) = delete;

  FitnessReport evaluate(const Individual& ind);
  std::optional<FitnessReport> cached(const std::string& key) const;

  const FitnessConfig& config() const noexcept { return config_; }
  std::size_t cache_size() const;
  /// Number of non-cached evaluations performed.
  std::size_t computed() const noexcept { return computed_.load(); }

  /// Per-individual RNG seed: derived from the master seed and the bits, so
  /// it does not depend on evaluation order.
  std::uint64_t individual_seed(const std::string& key) const;

 protected:
  virtual FitnessReport compute(const Individual& ind) const = 0;

 private:
  FitnessConfig config_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, FitnessReport> cache_;
  std::atomic<std::size_t> computed_{0};
};

/// Compacts the network, fine-tunes on the subset and measures top-1 error on
/// the eval indices.
class NetworkFitness : public FitnessEvaluator {
 public:
  NetworkFitness(const TrainedNetwork& net, const LabeledDataset& data,
                 std::vector<std::size_t> finetune_indices,
                 std::vector<std::size_t> eval_indices, FitnessConfig config);

 protected:
  FitnessReport compute(const Individual& ind) const override;

 private:
  const TrainedNetwork& net_;
  const LabeledDataset& data_;
  std::vector<std::size_t> finetune_;
  std::vector<std::size_t> eval_;
};

/// Replaces network error by a deterministic function of the mask: every
/// filter has a pseudo-random importance and some adjacent filter pairs an
/// extra penalty when both are dropped. Used to check the search against
/// exhaustive enumeration.
class SurrogateFitness : public FitnessEvaluator {
 public:
  SurrogateFitness(LayoutPtr layout, FitnessConfig config,
                   std::uint64_t surrogate_seed);

  double surrogate_error(const Individual& ind) const;

 protected:
  FitnessReport compute(const Individual& ind) const override;

 private:
  LayoutPtr layout_;
  std::vector<double> importance_;
  std::vector<double> pair_penalty_;
};

/// Evaluates all individuals (distinct keys once each) on up to `workers`
/// threads; results land in the evaluator cache.
void evaluate_many(FitnessEvaluator& evaluator,
                   std::span<const Individual> individuals, int workers);

}  // namespace ecs
