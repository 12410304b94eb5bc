#include "ecs/fitness.hpp"

#include <thread>
#include <unordered_set>

namespace ecs {

const char* to_string(FitnessVariant variant) noexcept {
  switch (variant) {
    case FitnessVariant::v1_uniform: return "v1-uniform";
    case FitnessVariant::v2_sized: return "v2-sized";
    case FitnessVariant::v3_coupled_literal: return "v3-coupled-literal";
    case FitnessVariant::v3_coupled_corrected: return "v3-coupled-corrected";
  }
  return "unknown";
}

FitnessVariant fitness_variant_from_string(const std::string& name) {
  for (FitnessVariant v :
       {FitnessVariant::v1_uniform, FitnessVariant::v2_sized,
        FitnessVariant::v3_coupled_literal,
        FitnessVariant::v3_coupled_corrected}) {
    if (name == to_string(v)) return v;
  }
  fail(ErrorCode::config, "unknown fitness variant '" + name + "'");
}

double sparsity_term(const Individual& ind, FitnessVariant variant) {
  const MaskLayout& layout = ind.layout();
  const std::vector<int> counts = surviving_counts(ind);
  const std::size_t p = layout.layer_count();
  // discarded[i] = ||1 - b_i||_1 with b_0 and b_p all ones.
  std::vector<double> discarded(p + 1, 0.0);
  for (std::size_t i = 1; i <= p; ++i) {
    discarded[i] = double(layout.layer(i - 1).filters - counts[i]);
  }
  double sum = 0.0;
  switch (variant) {
    case FitnessVariant::v1_uniform:
      for (std::size_t i = 1; i <= p; ++i) sum += discarded[i];
      return sum / double(layout.total_filters());
    case FitnessVariant::v2_sized:
      for (std::size_t i = 1; i <= p; ++i) {
        const ConvGeometry& g = layout.layer(i - 1);
        sum += double(g.height) * g.width * g.in_channels * discarded[i];
      }
      break;
    case FitnessVariant::v3_coupled_literal:
      for (std::size_t i = 1; i <= p; ++i) {
        const ConvGeometry& g = layout.layer(i - 1);
        sum += double(g.height) * g.width * discarded[i - 1] * discarded[i];
      }
      break;
    case FitnessVariant::v3_coupled_corrected:
      sum = double(kept_weight_count(layout, counts).discarded);
      break;
  }
  return sum / double(layout.total_weights());
}

void FitnessConfig::validate() const {
  if (!(lambda >= 0.0)) fail(ErrorCode::config, "lambda must be >= 0");
  finetune.validate();
}

FitnessReport make_report(const Individual& ind, double error,
                          const FitnessConfig& config) {
  FitnessReport r;
  r.error = error;
  r.sparsity = sparsity_term(ind, config.variant);
  r.fitness = 1.0 - error + config.lambda * r.sparsity;
  r.variant = config.variant;
  r.lambda = config.lambda;
  r.kept_weights = kept_weight_count(ind.layout(), surviving_counts(ind)).kept;
  return r;
}

TrainedNetwork fine_tune(TrainedNetwork net, const LabeledDataset& data,
                         std::span<const std::size_t> subset,
                         std::size_t steps, const TrainConfig& config) {
  return train_steps(std::move(net), data, config, subset, steps);
}

std::size_t one_pass_steps(std::size_t subset_size, int batch_size) {
  const std::size_t bs = std::size_t(std::max(batch_size, 1));
  return (subset_size + bs - 1) / bs;
}

FitnessEvaluator::FitnessEvaluator(FitnessConfig config)
    : config_(std::move(config)) {
  config_.validate();
}

FitnessReport FitnessEvaluator::evaluate(const Individual& ind) {
  const std::string key = ind.key();
  if (auto hit = cached(key)) return *hit;
  FitnessReport report = compute(ind);
  ++computed_;
  std::lock_guard lock(mutex_);
  cache_[key] = report;
  return report;
}

std::optional<FitnessReport> FitnessEvaluator::cached(
    const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(key);
  if (it == cache_.end()) return std::nullopt;
  return it->second;
}

std::size_t FitnessEvaluator::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

std::uint64_t FitnessEvaluator::individual_seed(const std::string& key) const {
  return derive_seed(derive_seed(config_.seed, seed_tag::fitness),
                     fnv1a64(key));
}

NetworkFitness::NetworkFitness(const TrainedNetwork& net,
                               const LabeledDataset& data,
                               std::vector<std::size_t> finetune_indices,
                               std::vector<std::size_t> eval_indices,
                               FitnessConfig config)
    : FitnessEvaluator(std::move(config)),
      net_(net),
      data_(data),
      finetune_(std::move(finetune_indices)),
      eval_(std::move(eval_indices)) {
  if (eval_.empty()) fail(ErrorCode::invalid_argument, "empty eval set");
  if (this->config().finetune_steps > 0 && finetune_.empty()) {
    fail(ErrorCode::invalid_argument, "fine-tune steps without a subset");
  }
}

FitnessReport NetworkFitness::compute(const Individual& ind) const {
  TrainedNetwork compact = compact_network(net_, ind);
  const FitnessConfig& cfg = config();
  bool diverged = false;
  if (cfg.finetune_steps > 0) {
    TrainConfig tc = cfg.finetune;
    tc.seed = individual_seed(ind.key());
    try {
      compact = fine_tune(std::move(compact), data_, finetune_,
                          cfg.finetune_steps, tc);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      diverged = true;
    }
  }
  double error = 1.0;
  if (!diverged) {
    try {
      error = evaluate_error(compact, data_, eval_);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      diverged = true;
    }
  }
  FitnessReport r = make_report(ind, error, cfg);
  r.fine_tuned = cfg.finetune_steps > 0 && !diverged;
  r.diverged = diverged;
  return r;
}

SurrogateFitness::SurrogateFitness(LayoutPtr layout, FitnessConfig config,
                                   std::uint64_t surrogate_seed)
    : FitnessEvaluator(std::move(config)), layout_(std::move(layout)) {
  Rng rng(derive_seed(surrogate_seed, seed_tag::surrogate));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = layout_->bit_count();
  // Scale so that dropping everything costs roughly the whole error budget.
  const double scale = 3.0 / double(std::max<std::size_t>(n, 1));
  importance_.resize(n);
  pair_penalty_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = u(rng);
    importance_[i] = scale * a * a;
    pair_penalty_[i] = u(rng) < 0.3 ? scale * u(rng) : 0.0;
  }
}

double SurrogateFitness::surrogate_error(const Individual& ind) const {
  const auto& bits = ind.bits();
  double e = 0.01;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) continue;
    e += importance_[i];
    if (i + 1 < bits.size() && !bits[i + 1]) e += pair_penalty_[i];
  }
  return std::clamp(e, 0.0, 1.0);
}

FitnessReport SurrogateFitness::compute(const Individual& ind) const {
  return make_report(ind, surrogate_error(ind), config());
}

void evaluate_many(FitnessEvaluator& evaluator,
                   std::span<const Individual> individuals, int workers) {
  std::vector<const Individual*> pending;
  std::unordered_set<std::string> seen;
  for (const Individual& ind : individuals) {
    std::string key = ind.key();
    if (evaluator.cached(key) || !seen.insert(std::move(key)).second) continue;
    pending.push_back(&ind);
  }
  const std::size_t threads =
      std::min<std::size_t>(std::size_t(std::max(workers, 1)), pending.size());
  if (threads <= 1) {
    for (const Individual* ind : pending) evaluator.evaluate(*ind);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next++;
        if (i >= pending.size()) return;
        try {
          evaluator.evaluate(*pending[i]);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ecs
