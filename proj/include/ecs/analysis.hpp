#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecs/genome.hpp"
#include "ecs/network.hpp"

namespace ecs {

inline constexpr double kBytesPerValue = 4.0;
inline constexpr double kBytesPerMB = 1024.0 * 1024.0;

struct LayerRatios {
  double r_c = 1.0;
  double r_s = 1.0;
  double r_f = 1.0;
};

/// Ratios of conv layer i (1-based) for counts = [N^_0 .. N^_p].
LayerRatios layer_ratios(const MaskLayout& layout, std::span<const int> counts,
                         std::size_t i);

struct LayerStats {
  std::string name;
  ConvGeometry original;
  ConvGeometry compressed;
  int out_height = 0;
  int out_width = 0;
  std::size_t weights_original = 0;
  std::size_t weights_compressed = 0;
  std::size_t mults_original = 0;
  std::size_t mults_compressed = 0;
  // Conv output plus the output of a directly following pooling stage.
  std::size_t fmap_original = 0;
  std::size_t fmap_compressed = 0;
  double r_c = 1.0;
  double r_s = 1.0;
  double r_f = 1.0;
};

struct CompressionReport {
  std::vector<LayerStats> layers;
  std::size_t weights_original = 0;
  std::size_t weights_compressed = 0;
  std::size_t mults_original = 0;
  std::size_t mults_compressed = 0;
  std::size_t fmap_original = 0;
  std::size_t fmap_compressed = 0;
  double r_c = 1.0;
  double r_s = 1.0;
  double r_f = 1.0;
  // Bias and batchnorm values, kept out of the weight totals.
  std::size_t extra_original = 0;
  std::size_t extra_compressed = 0;
  std::optional<double> accuracy_before;
  std::optional<double> accuracy_after;

  double memory_original_mb() const {
    return double(weights_original) * kBytesPerValue / kBytesPerMB;
  }
  double memory_compressed_mb() const {
    return double(weights_compressed) * kBytesPerValue / kBytesPerMB;
  }
  double fmap_original_mb() const {
    return double(fmap_original) * kBytesPerValue / kBytesPerMB;
  }
  double fmap_compressed_mb() const {
    return double(fmap_compressed) * kBytesPerValue / kBytesPerMB;
  }
};

struct Accuracies {
  std::optional<double> before;
  std::optional<double> after;
};

/// Report for `spec` compressed to counts = [N^_0 .. N^_p].
CompressionReport overall_report(const NetworkSpec& spec,
                                 std::span<const int> counts,
                                 Accuracies accuracies = {});
CompressionReport overall_report(const TrainedNetwork& net,
                                 const Individual& ind,
                                 Accuracies accuracies = {});

/// A layer given directly by its original and compressed geometry, for
/// networks this engine does not build (grouped convolutions, dense stages).
struct GeometryLayer {
  std::string name;
  ConvGeometry original;
  ConvGeometry compressed;
  int out_height = 1;
  int out_width = 1;
};

CompressionReport geometry_report(const std::vector<GeometryLayer>& layers);

/// Aligned text: name, original dims, memory, new dims, memory, r_c per
/// layer, a totals row and footnotes for r_s, r_f and non-weight parameters.
std::string emit_table(const CompressionReport& report);

/// One JSON object per layer plus a final "total" record.
std::string emit_jsonl(const CompressionReport& report);

/// One min-max normalized 8-bit PGM per filter of conv layer `layer`
/// (1-based, as are n and c): layer_<i>_filter_<n>.pgm, or ..._channel_<c>.pgm when the
/// filters have several channels. Returns the written paths.
std::vector<std::filesystem::path> export_filters(
    const TrainedNetwork& net, std::size_t layer,
    const std::filesystem::path& dir);

/// Mean Euclidean distance over all pairs of the selected filters (all
/// filters when `filters` is empty).
double mean_pairwise_distance(const Tensor& weight,
                              std::span<const int> filters = {});

}  // namespace ecs
