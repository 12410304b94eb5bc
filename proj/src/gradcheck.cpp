#include "ecs/gradcheck.hpp"

#include <cmath>
#include <random>

namespace ecs {

GradientCheckResult gradient_check(const TrainedNetwork& net,
                                   const Tensor& batch,
                                   std::span<const int> labels,
                                   const GradientCheckOptions& options) {
  if (!(options.epsilon > 0.0)) {
    fail(ErrorCode::invalid_argument, "epsilon must be > 0");
  }
  const NetworkSpec& spec = net.spec();
  ParamSet<double> params = cast_params<double>(net.params());
  const BasicTensor<double> x = batch.cast<double>();

  ParamSet<double> grads;
  ForwardTrace<double> base_trace;
  loss_and_gradients<double>(spec, params, x, labels, &grads, nullptr, &base_trace);
  if (options.tamper) options.tamper(grads);
  const ActivationPattern base_pattern = base_trace.pattern();

  auto p = trainable_tensors(params);
  auto g = trainable_tensors(grads);
  std::vector<std::size_t> offsets{0};
  for (const auto* t : p) offsets.push_back(offsets.back() + t->size());
  const std::size_t total = offsets.back();

  GradientCheckResult result;
  if (total == 0) return result;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  const std::size_t max_attempts = options.samples * 20;
  for (std::size_t attempt = 0;
       attempt < max_attempts && result.checked < options.samples;
       ++attempt) {
    const std::size_t flat = pick(rng);
    const std::size_t t =
        std::size_t(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                    offsets.begin()) - 1;
    const std::size_t k = flat - offsets[t];
    double& w = (*p[t])[k];
    const double saved = w;

    ForwardTrace<double> plus_trace, minus_trace;
    w = saved + options.epsilon;
    const double plus =
        loss_and_gradients<double>(spec, params, x, labels, nullptr, nullptr,
                           &plus_trace);
    w = saved - options.epsilon;
    const double minus =
        loss_and_gradients<double>(spec, params, x, labels, nullptr, nullptr,
                           &minus_trace);
    w = saved;

    if (plus_trace.pattern() != base_pattern ||
        minus_trace.pattern() != base_pattern) {
      ++result.skipped_nonsmooth;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double analytic = (*g[t])[k];
    const double scale = std::max(
        {std::abs(numeric), std::abs(analytic), options.absolute_floor});
    result.max_relative_discrepancy = std::max(
        result.max_relative_discrepancy, std::abs(numeric - analytic) / scale);
    ++result.checked;
  }
  return result;
}

}  // namespace ecs
