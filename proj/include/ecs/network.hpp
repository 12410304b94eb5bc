#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecs/tensor.hpp"

namespace ecs {

enum class LayerKind { conv, maxpool, relu, batchnorm, softmax_loss };

const char* to_string(LayerKind kind) noexcept;
LayerKind layer_kind_from_string(const std::string& name);

/// One stage of a sequential network. Only the fields relevant to `kind` are
/// meaningful: conv uses the filter geometry plus stride/padding, maxpool uses
/// window/stride.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int filter_height = 0;
  int filter_width = 0;
  int in_channels = 0;
  int out_filters = 0;
  int stride = 1;
  int padding = 0;
  int window = 0;

  static LayerSpec conv(int h, int w, int c, int n, int stride = 1,
                        int padding = 0);
  static LayerSpec maxpool(int window, int stride);
  static LayerSpec relu();
  static LayerSpec batchnorm();
  static LayerSpec softmax_loss();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Dims3 {
  int height = 0;
  int width = 0;
  int channels = 0;

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

struct NetworkSpec {
  Dims3 input;
  std::vector<LayerSpec> layers;
  int class_count = 0;

  /// Throws Error(shape) naming the first offending layer.
  void validate() const;

  /// Output dims of every layer, index-aligned with `layers`.
  std::vector<Dims3> output_dims() const;

  /// Indices into `layers` of the convolution stages, in order.
  std::vector<std::size_t> conv_layers() const;

  std::string describe() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// The LeNet variant used for MNIST: 5x5x1x20, 5x5x20x50, 4x4x50x500 and
/// 1x1x500x10 convolutions with batch normalization after the first three.
NetworkSpec lenet_spec();

/// Learned state of one layer. Conv: weight {H,W,C,N}, bias {N}. Batchnorm:
/// weight = scale {C}, bias = shift {C}, plus running statistics. Other kinds
/// leave everything empty.
template <class T>
struct LayerParams {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;

  bool trainable() const { return !weight.empty(); }

  template <class U>
  LayerParams<U> cast() const {
    return {weight.template cast<U>(), bias.template cast<U>(),
            running_mean.template cast<U>(), running_var.template cast<U>()};
  }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <class T>
using ParamSet = std::vector<LayerParams<T>>;

template <class U, class T>
ParamSet<U> cast_params(const ParamSet<T>& params) {
  ParamSet<U> out;
  out.reserve(params.size());
  for (const auto& layer : params) out.push_back(layer.template cast<U>());
  return out;
}

/// Expected tensor shapes of one layer; empty shapes mean "no tensor".
struct ParamShapes {
  Shape weight, bias, running_mean, running_var;
};
std::vector<ParamShapes> param_shapes(const NetworkSpec& spec);

/// Zero-filled parameter set shaped for `spec` (running variance set to 1).
template <class T>
ParamSet<T> zero_params(const NetworkSpec& spec);

/// Trainable tensors (weight then bias per layer) in a fixed order; the
/// counterpart list of a gradient set lines up index-for-index.
template <class T>
std::vector<BasicTensor<T>*> trainable_tensors(ParamSet<T>& params);
template <class T>
std::vector<const BasicTensor<T>*> trainable_tensors(
    const ParamSet<T>& params);

class TrainedNetwork {
 public:
  TrainedNetwork() = default;
  TrainedNetwork(NetworkSpec spec, ParamSet<float> params);

  /// He-style uniform initialization per filter fan-in.
  static TrainedNetwork initialize(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const ParamSet<float>& params() const noexcept { return params_; }
  ParamSet<float>& mutable_params() noexcept { return params_; }

  /// Throws unless every tensor matches the spec and every value is finite.
  void validate() const;

  std::size_t parameter_count() const;

  friend bool operator==(const TrainedNetwork&,
                         const TrainedNetwork&) = default;

 private:
  NetworkSpec spec_;
  ParamSet<float> params_;
};

enum class Mode { inference, training };

/// Per-channel batch statistics produced by a training-mode forward pass, one
/// entry per batchnorm layer (empty entries for other layers).
template <class T>
struct BatchStats {
  std::vector<std::vector<T>> mean;
  std::vector<std::vector<T>> var;
};

/// Activation pattern of the piecewise-linear layers; two passes on nearby
/// parameters with equal patterns lie on the same smooth piece.
struct ActivationPattern {
  std::vector<std::vector<std::uint8_t>> relu_on;
  std::vector<std::vector<std::uint32_t>> pool_argmax;

  friend bool operator==(const ActivationPattern&,
                         const ActivationPattern&) = default;
};

/// Everything backprop needs from the forward pass.
template <class T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> inputs;   // input of layer i
  std::vector<BasicTensor<T>> patches;  // conv im2col matrices
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<BasicTensor<T>> bn_xhat;
  std::vector<std::vector<T>> bn_inv_std;
  BatchStats<T> stats;
  std::vector<LayerKind> kinds;

  ActivationPattern pattern() const;
};

/// Runs the network on a [B,H,W,C] batch and returns [B,class_count] logits.
/// Pure; throws Error(shape) or Error(numeric) with the layer index.
template <class T>
BasicTensor<T> forward(const NetworkSpec& spec, const ParamSet<T>& params,
                       const BasicTensor<T>& batch, Mode mode,
                       ForwardTrace<T>* trace = nullptr);

Tensor forward(const TrainedNetwork& net, const Tensor& batch);

struct LossAndGradients {
  double loss = 0.0;
  ParamSet<float> grads;
  BatchStats<float> stats;
};

/// Mean softmax cross-entropy and exact gradients (training-mode batchnorm).
template <class T>
T loss_and_gradients(const NetworkSpec& spec, const ParamSet<T>& params,
                     const BasicTensor<T>& batch,
                     std::span<const int> labels, ParamSet<T>* grads,
                     BatchStats<T>* stats = nullptr,
                     ForwardTrace<T>* trace = nullptr);

LossAndGradients loss_and_gradients(const TrainedNetwork& net,
                                    const Tensor& batch,
                                    std::span<const int> labels);

/// Mean softmax cross-entropy of logits against labels.
template <class T>
T softmax_cross_entropy(const BasicTensor<T>& logits,
                        std::span<const int> labels,
                        BasicTensor<T>* dlogits = nullptr);

/// Index of the largest logit per row; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace ecs
