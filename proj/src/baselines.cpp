#include "ecs/baselines.hpp"

#include <cmath>

namespace ecs {

BasicTensor<std::uint8_t> weight_threshold_mask(const Tensor& filters,
                                                double tau) {
  if (filters.empty()) return {};
  BasicTensor<std::uint8_t> mask(filters.shape(), std::uint8_t{0});
  for (std::size_t i = 0; i < filters.size(); ++i) {
    mask[i] = std::abs(double(filters[i])) <= tau ? 0 : 1;
  }
  return mask;
}

std::vector<SparsityStats> weight_threshold_stats(const TrainedNetwork& net,
                                                  double tau) {
  std::vector<SparsityStats> out;
  for (std::size_t i : net.spec().conv_layers()) {
    const auto mask = weight_threshold_mask(net.params()[i].weight, tau);
    SparsityStats s;
    s.total = mask.size();
    for (std::size_t k = 0; k < mask.size(); ++k) s.zeros += mask[k] == 0;
    out.push_back(s);
  }
  return out;
}

std::vector<double> filter_squared_norms(const Tensor& weight) {
  if (weight.rank() != 4) fail(ErrorCode::shape, "filters must be rank 4");
  const std::size_t n = weight.dim(3);
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const double v = weight[i];
    norms[i % n] += v * v;
  }
  return norms;
}

Individual filter_norm_mask(const TrainedNetwork& net, double tau, Rng& rng) {
  auto layout = std::make_shared<const MaskLayout>(MaskLayout::from_spec(net.spec()));
  std::vector<std::uint8_t> bits;
  const auto convs = net.spec().conv_layers();
  for (std::size_t k = 0; k + 1 < convs.size(); ++k) {
    for (double norm : filter_squared_norms(net.params()[convs[k]].weight)) {
      bits.push_back(norm <= tau ? 0 : 1);
    }
  }
  Individual ind(layout, std::move(bits));
  repair(ind, rng);
  return ind;
}

ControlResult scratch_train_control(const NetworkSpec& compact_spec,
                                    const LabeledDataset& data,
                                    std::span<const std::size_t> train_indices,
                                    std::span<const std::size_t> eval_indices,
                                    const TrainConfig& config) {
  ControlResult r;
  const MaskLayout layout = MaskLayout::from_spec(compact_spec);
  r.counts.push_back(layout.input_channels());
  for (const auto& g : layout.layers()) r.counts.push_back(g.filters);
  r.net = train(TrainedNetwork::initialize(
                    compact_spec, derive_seed(config.seed, seed_tag::init)),
                data, config, train_indices);
  r.eval_error = eval_indices.empty() ? evaluate_error(r.net, data)
                                      : evaluate_error(r.net, data, eval_indices);
  return r;
}

std::vector<int> random_architecture_counts(const MaskLayout& layout,
                                            int target_total_filters,
                                            std::uint64_t seed) {
  const std::size_t p = layout.layer_count();
  const int fixed = layout.layer(p - 1).filters;
  const int budget = target_total_filters - fixed;
  const int free_layers = int(p) - 1;
  int max_free = 0;
  for (std::size_t i = 0; i + 1 < p; ++i) max_free += layout.layer(i).filters;
  if (budget < free_layers || budget > max_free) {
    fail(ErrorCode::invalid_argument,
         "target " + std::to_string(target_total_filters) +
             " infeasible: need between " + std::to_string(free_layers + fixed) +
             " and " + std::to_string(max_free + fixed));
  }
  // ways[i][s]: number of ways layers i.. can sum to s. Doubles keep the
  // counts representable; only ratios are used.
  std::vector<std::vector<double>> ways(
      std::size_t(free_layers) + 1, std::vector<double>(std::size_t(budget) + 1, 0.0));
  ways[std::size_t(free_layers)][0] = 1.0;
  for (int i = free_layers - 1; i >= 0; --i) {
    const int cap = layout.layer(std::size_t(i)).filters;
    for (int s = 0; s <= budget; ++s) {
      double w = 0.0;
      for (int n = 1; n <= std::min(cap, s); ++n) {
        w += ways[std::size_t(i) + 1][std::size_t(s - n)];
      }
      ways[std::size_t(i)][std::size_t(s)] = w;
    }
  }
  Rng rng(derive_seed(seed, seed_tag::control));
  std::vector<int> counts{layout.input_channels()};
  int remaining = budget;
  for (int i = 0; i < free_layers; ++i) {
    const int cap = layout.layer(std::size_t(i)).filters;
    const double total = ways[std::size_t(i)][std::size_t(remaining)];
    double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
    int chosen = 0;
    for (int n = 1; n <= std::min(cap, remaining); ++n) {
      const double w = ways[std::size_t(i) + 1][std::size_t(remaining - n)];
      if (w <= 0.0) continue;
      chosen = n;
      if (pick < w) break;
      pick -= w;
    }
    counts.push_back(chosen);
    remaining -= chosen;
  }
  counts.push_back(fixed);
  return counts;
}

ControlResult random_architecture_control(
    const NetworkSpec& spec, int target_total_filters, std::uint64_t seed,
    const LabeledDataset& data, std::span<const std::size_t> train_indices,
    std::span<const std::size_t> eval_indices, const TrainConfig& config) {
  const std::vector<int> counts = random_architecture_counts(
      MaskLayout::from_spec(spec), target_total_filters, seed);
  ControlResult r = scratch_train_control(compact_spec(spec, counts), data,
                                          train_indices, eval_indices, config);
  r.counts = counts;
  return r;
}

}  // namespace ecs
