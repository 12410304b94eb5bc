#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecs/network.hpp"
#include "ecs/tensor.hpp"

namespace ecs {

/// Images [N,H,W,C] with values in [0,1] and one class index per image.
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  Dims3 dims() const;

  /// Copies the selected samples into a [B,H,W,C] batch.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  /// A new dataset holding only `indices`, in that order.
  LabeledDataset subset(std::span<const std::size_t> indices,
                        std::string name) const;

  void validate() const;
};

/// Reads an IDX image/label file pair (magic 2051 / 2049, big-endian header).
/// Pixels are scaled by 1/255. Errors carry the byte offset of the problem.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Writes an IDX pair; the inverse of load_idx for 8-bit data.
void save_idx(const LabeledDataset& dataset,
              const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

inline constexpr double kDefaultBlobSpread = 0.1;

/// Gaussian blobs around per-class random centers in [0,1]^(H*W*C), clamped
/// to [0,1]. Samples cycle through the classes.
LabeledDataset synthetic_blobs(int classes, int per_class, Dims3 dims,
                               std::uint64_t seed,
                               double spread = kDefaultBlobSpread);

/// Index sets over one training split: `train` and `eval` are disjoint, and
/// `finetune` is drawn from `train`.
struct SplitPlan {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
  std::vector<std::size_t> finetune;
  std::uint64_t seed = 0;
};

/// `size` indices drawn uniformly without replacement from `train`.
std::vector<std::size_t> sample_subset(std::span<const std::size_t> train,
                                       std::size_t size, std::uint64_t seed);

/// The last `holdout` samples form the eval slice; the fine-tune subset is
/// sampled from the rest.
SplitPlan sample_finetune_subset(std::size_t dataset_size,
                                 std::size_t holdout, std::size_t size,
                                 std::uint64_t seed);

}  // namespace ecs
