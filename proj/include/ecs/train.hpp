#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "ecs/dataset.hpp"
#include "ecs/network.hpp"

namespace ecs {

struct TrainConfig {
  int epochs = 3;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Top-1 misclassification rate; argmax ties resolve to the lowest class.
double evaluate_error(const TrainedNetwork& net, const LabeledDataset& data);
double evaluate_error(const TrainedNetwork& net, const LabeledDataset& data,
                      std::span<const std::size_t> indices);

/// Momentum state for sgd_step; lines up with trainable_tensors().
struct SgdState {
  std::vector<std::vector<float>> velocity;
};

/// v <- momentum*v + g;  p <- p - lr*v - lr*weight_decay*p.
void sgd_step(ParamSet<float>& params, const ParamSet<float>& grads,
              const TrainConfig& config, SgdState& state);

/// Folds batch statistics into the running estimates (factor 0.9 on the old
/// value). BatchStats already carries the unbiased variance.
void update_running_stats(ParamSet<float>& params,
                          const BatchStats<float>& stats);

/// Per-batch progress callback: (epoch, batch, loss).
using TrainObserver = std::function<void(int, std::size_t, double)>;

/// Full-epoch SGD over `indices` (all samples when empty). Batch order is a
/// seeded permutation per epoch. Throws Error(numeric) on divergence.
TrainedNetwork train(TrainedNetwork net, const LabeledDataset& data,
                     const TrainConfig& config,
                     std::span<const std::size_t> indices = {},
                     const TrainObserver& observer = {});

/// Exactly `steps` mini-batch steps, cycling through fresh permutations of
/// `indices`. Throws Error(numeric) on divergence.
TrainedNetwork train_steps(TrainedNetwork net, const LabeledDataset& data,
                           const TrainConfig& config,
                           std::span<const std::size_t> indices,
                           std::size_t steps);

}  // namespace ecs
