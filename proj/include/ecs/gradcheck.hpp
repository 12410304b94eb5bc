#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "ecs/network.hpp"

namespace ecs {

struct GradientCheckOptions {
  double epsilon = 1e-3;
  std::size_t samples = 128;
  std::uint64_t seed = 0;
  /// Gradients with magnitude below this are compared in absolute terms.
  double absolute_floor = 1e-6;
  /// Applied to the analytic gradients before comparison (sabotage hook).
  std::function<void(ParamSet<double>&)> tamper;
};

struct GradientCheckResult {
  double max_relative_discrepancy = 0.0;
  std::size_t checked = 0;
  /// Samples rejected because the +/- epsilon probes crossed a relu or
  /// max-pool switch, where the loss is not differentiable.
  std::size_t skipped_nonsmooth = 0;
};

/// Compares analytic gradients to central differences over a random subset
/// of trainable scalars. Everything is re-evaluated in 64-bit.
GradientCheckResult gradient_check(const TrainedNetwork& net,
                                   const Tensor& batch,
                                   std::span<const int> labels,
                                   const GradientCheckOptions& options = {});

}  // namespace ecs
