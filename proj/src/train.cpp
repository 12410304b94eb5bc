#include "ecs/train.hpp"

#include <numeric>
#include <random>

namespace ecs {

namespace {

constexpr std::size_t kEvalBatch = 256;
constexpr float kRunningMomentum = 0.9f;

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    fail(ErrorCode::config, "learning_rate must be > 0");
  }
  if (batch_size < 1) fail(ErrorCode::config, "batch_size must be >= 1");
  if (epochs < 0) fail(ErrorCode::config, "epochs must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    fail(ErrorCode::config, "momentum must lie in [0,1)");
  }
  if (weight_decay < 0.0) fail(ErrorCode::config, "weight_decay must be >= 0");
}

double evaluate_error(const TrainedNetwork& net, const LabeledDataset& data,
                      std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorCode::invalid_argument, "empty dataset");
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const auto chunk = indices.subspan(
        start, std::min(kEvalBatch, indices.size() - start));
    const Tensor logits = forward(net, data.gather(chunk));
    const std::vector<int> predicted = argmax_rows(logits);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int label = data.labels[chunk[i]];
      if (label < 0 || label >= net.spec().class_count) {
        fail(ErrorCode::invalid_argument,
             "label " + std::to_string(label) + " outside [0, class_count)");
      }
      if (predicted[i] != label) ++wrong;
    }
  }
  return double(wrong) / double(indices.size());
}

double evaluate_error(const TrainedNetwork& net, const LabeledDataset& data) {
  if (data.size() == 0) fail(ErrorCode::invalid_argument, "empty dataset");
  const auto idx = all_indices(data.size());
  return evaluate_error(net, data, idx);
}

void sgd_step(ParamSet<float>& params, const ParamSet<float>& grads,
              const TrainConfig& config, SgdState& state) {
  auto p = trainable_tensors(params);
  auto g = trainable_tensors(grads);
  if (p.size() != g.size()) {
    fail(ErrorCode::shape, "gradient list does not match parameters");
  }
  if (state.velocity.empty()) {
    state.velocity.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      state.velocity[i].assign(p[i]->size(), 0.0f);
    }
  }
  const float lr = float(config.learning_rate);
  const float mu = float(config.momentum);
  const float wd = float(config.weight_decay);
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t]->shape() != g[t]->shape() ||
        state.velocity[t].size() != p[t]->size()) {
      fail(ErrorCode::shape, "gradient tensor " + std::to_string(t) +
                                 " does not match its parameter");
    }
    float* w = p[t]->data();
    const float* d = g[t]->data();
    float* v = state.velocity[t].data();
    for (std::size_t k = 0; k < p[t]->size(); ++k) {
      v[k] = mu * v[k] + d[k];
      w[k] = w[k] - lr * v[k] - lr * wd * w[k];
    }
  }
}

void update_running_stats(ParamSet<float>& params,
                          const BatchStats<float>& stats) {
  for (std::size_t i = 0; i < params.size() && i < stats.mean.size(); ++i) {
    if (stats.mean[i].empty()) continue;
    float* rm = params[i].running_mean.data();
    float* rv = params[i].running_var.data();
    for (std::size_t c = 0; c < stats.mean[i].size(); ++c) {
      rm[c] = kRunningMomentum * rm[c] + (1.0f - kRunningMomentum) * stats.mean[i][c];
      rv[c] = kRunningMomentum * rv[c] + (1.0f - kRunningMomentum) * stats.var[i][c];
    }
  }
}

namespace {

class Trainer {
 public:
  Trainer(TrainedNetwork net, const LabeledDataset& data,
          const TrainConfig& config)
      : net_(std::move(net)), data_(data), config_(config) {}

  void step(std::span<const std::size_t> batch, int epoch, std::size_t index,
            const TrainObserver& observer) {
    const Tensor x = data_.gather(batch);
    const std::vector<int> y = data_.gather_labels(batch);
    ParamSet<float> grads;
    BatchStats<float> stats;
    float loss = 0.0f;
    try {
      loss = loss_and_gradients(net_.spec(), net_.params(), x, y, &grads,
                                &stats);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric) throw;
      fail(ErrorCode::numeric, "training diverged at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(index) + ": " + e.what());
    }
    sgd_step(net_.mutable_params(), grads, config_, sgd_);
    update_running_stats(net_.mutable_params(), stats);
    if (observer) observer(epoch, index, double(loss));
  }

  TrainedNetwork release() { return std::move(net_); }

 private:
  TrainedNetwork net_;
  const LabeledDataset& data_;
  const TrainConfig& config_;
  SgdState sgd_;
};

}  // namespace

TrainedNetwork train(TrainedNetwork net, const LabeledDataset& data,
                     const TrainConfig& config,
                     std::span<const std::size_t> indices,
                     const TrainObserver& observer) {
  config.validate();
  if (data.size() == 0) fail(ErrorCode::invalid_argument, "empty dataset");
  std::vector<std::size_t> order =
      indices.empty() ? all_indices(data.size())
                      : std::vector<std::size_t>(indices.begin(), indices.end());
  std::mt19937_64 rng(config.seed);
  Trainer trainer(std::move(net), data, config);
  const std::size_t bs = std::size_t(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t index = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++index) {
      const std::span<const std::size_t> batch(
          order.data() + start, std::min(bs, order.size() - start));
      trainer.step(batch, epoch, index, observer);
    }
  }
  return trainer.release();
}

TrainedNetwork train_steps(TrainedNetwork net, const LabeledDataset& data,
                           const TrainConfig& config,
                           std::span<const std::size_t> indices,
                           std::size_t steps) {
  config.validate();
  if (steps == 0) return net;
  if (indices.empty()) fail(ErrorCode::invalid_argument, "empty dataset");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::mt19937_64 rng(config.seed);
  Trainer trainer(std::move(net), data, config);
  const std::size_t bs = std::size_t(config.batch_size);
  std::size_t start = order.size();
  int epoch = -1;
  for (std::size_t s = 0; s < steps; ++s) {
    if (start >= order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      start = 0;
      ++epoch;
    }
    const std::span<const std::size_t> batch(
        order.data() + start, std::min(bs, order.size() - start));
    trainer.step(batch, epoch, s, {});
    start += bs;
  }
  return trainer.release();
}

}  // namespace ecs
