#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ecs/network.hpp"
#include "ecs/rng.hpp"

namespace ecs {

struct ConvGeometry {
  int height = 0;
  int width = 0;
  int in_channels = 0;
  int filters = 0;

  std::size_t weights() const {
    return std::size_t(height) * width * in_channels * filters;
  }

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Filter geometry of the p convolution layers of a chained network
/// (C_i == N_{i-1}). One bit per filter of layers 1..p-1; layer p keeps all of
/// its filters because they are the class outputs.
class MaskLayout {
 public:
  MaskLayout(int input_channels, std::vector<ConvGeometry> layers);

  static MaskLayout from_spec(const NetworkSpec& spec);

  int input_channels() const noexcept { return input_channels_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const ConvGeometry& layer(std::size_t i) const { return layers_.at(i); }
  const std::vector<ConvGeometry>& layers() const noexcept { return layers_; }
  bool maskable(std::size_t i) const noexcept { return i + 1 < layers_.size(); }

  /// Number of bits in an individual.
  std::size_t bit_count() const noexcept { return offsets_.back(); }
  /// First bit of layer i (maskable layers only).
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }
  /// L: all filters, including the fixed last layer.
  std::size_t total_filters() const;
  /// M: sum of H*W*C*N over all layers.
  std::size_t total_weights() const;

  std::string describe() const;

  friend bool operator==(const MaskLayout& a, const MaskLayout& b) {
    return a.input_channels_ == b.input_channels_ && a.layers_ == b.layers_;
  }

 private:
  int input_channels_;
  std::vector<ConvGeometry> layers_;
  std::vector<std::size_t> offsets_;
};

using LayoutPtr = std::shared_ptr<const MaskLayout>;

/// Concatenated per-filter keep bits b_1 ... b_{p-1}; 1 keeps the filter.
class Individual {
 public:
  Individual(LayoutPtr layout, std::vector<std::uint8_t> bits);

  static Individual all_ones(LayoutPtr layout);
  /// Keeps the first counts[i] filters of every maskable layer i.
  static Individual keep_first(LayoutPtr layout, std::span<const int> counts);
  /// Parses '0'/'1' text; '|' layer separators are optional but, when
  /// present, must match the layout.
  static Individual parse(LayoutPtr layout, std::string_view text);

  const MaskLayout& layout() const noexcept { return *layout_; }
  const LayoutPtr& layout_ptr() const noexcept { return layout_; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::vector<std::uint8_t>& mutable_bits() noexcept { return bits_; }
  std::span<const std::uint8_t> layer_bits(std::size_t i) const;

  /// Kept filters in maskable layer i.
  int kept(std::size_t i) const;
  /// True when every maskable layer keeps at least one filter.
  bool satisfies_floor() const;

  /// Bits with '|' between layers.
  std::string to_string() const;
  /// Bits without separators; the fitness cache key.
  std::string key() const;

  friend bool operator==(const Individual& a, const Individual& b) {
    return a.bits_ == b.bits_ && *a.layout_ == *b.layout_;
  }

 private:
  LayoutPtr layout_;
  std::vector<std::uint8_t> bits_;
};

/// Sets one uniformly chosen bit in every maskable layer that has none.
/// Never clears a bit.
void repair(Individual& ind, Rng& rng);

/// Each maskable bit is 1 with probability `density`, then repaired.
Individual random_individual(const LayoutPtr& layout, double density,
                             Rng& rng);

/// [N_0, N^_1, ..., N^_{p-1}, N_p].
std::vector<int> surviving_counts(const Individual& ind);

struct CompactArchitecture {
  std::vector<int> counts;                     // N^_0 .. N^_p
  std::vector<std::vector<int>> kept_filters;  // per conv layer, increasing
};

CompactArchitecture compact_architecture(const Individual& ind);

/// Removes masked filters (and their bias/batchnorm entries) and the matching
/// input-channel slices of the next conv layer. Throws Error(layout) when the
/// individual's layout does not describe `net`.
TrainedNetwork compact_network(const TrainedNetwork& net,
                               const Individual& ind);

/// The spec that compact_network would produce for these counts.
NetworkSpec compact_spec(const NetworkSpec& spec, std::span<const int> counts);

struct WeightCount {
  std::size_t kept = 0;
  std::size_t discarded = 0;
  std::size_t total = 0;  // M
};

/// counts = [N^_0 .. N^_p]; kept = sum H_i*W_i*N^_{i-1}*N^_i.
WeightCount kept_weight_count(const MaskLayout& layout,
                              std::span<const int> counts);

}  // namespace ecs
