#pragma once

#include <cstdint>
#include <vector>

#include "ecs/dataset.hpp"
#include "ecs/genome.hpp"
#include "ecs/train.hpp"

namespace ecs {

/// 0 where |w| <= tau, 1 elsewhere; same shape as `filters`.
BasicTensor<std::uint8_t> weight_threshold_mask(const Tensor& filters,
                                                double tau);

struct SparsityStats {
  std::size_t zeros = 0;
  std::size_t total = 0;
  double zero_fraction() const { return total ? double(zeros) / total : 0.0; }
};

/// Unstructured statistics of weight_threshold_mask over every conv layer.
std::vector<SparsityStats> weight_threshold_stats(const TrainedNetwork& net,
                                                  double tau);

/// ||F_i(:,:,:,n)||_F^2 for every filter of conv layer `conv_index`.
std::vector<double> filter_squared_norms(const Tensor& weight);

/// Bit 0 where the filter's squared Frobenius norm is <= tau; the last conv
/// layer is implicit (always kept). Repair keeps one filter per layer.
Individual filter_norm_mask(const TrainedNetwork& net, double tau, Rng& rng);

/// The compact architecture trained from a fresh initialization.
struct ControlResult {
  TrainedNetwork net;
  std::vector<int> counts;   // N^_0 .. N^_p
  double eval_error = 1.0;
};

ControlResult scratch_train_control(const NetworkSpec& compact_spec,
                                    const LabeledDataset& data,
                                    std::span<const std::size_t> train_indices,
                                    std::span<const std::size_t> eval_indices,
                                    const TrainConfig& config);

/// Per-layer filter counts drawn uniformly among all compositions of `target`
/// into p parts with 1 <= n_i <= N_i and n_p == N_p (the class outputs count
/// towards the target).
std::vector<int> random_architecture_counts(const MaskLayout& layout,
                                            int target_total_filters,
                                            std::uint64_t seed);

ControlResult random_architecture_control(
    const NetworkSpec& spec, int target_total_filters, std::uint64_t seed,
    const LabeledDataset& data, std::span<const std::size_t> train_indices,
    std::span<const std::size_t> eval_indices, const TrainConfig& config);

}  // namespace ecs
