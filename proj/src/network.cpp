#include "ecs/network.hpp"

#include <random>
#include <sstream>

#include "blas.hpp"

namespace ecs {

namespace {

constexpr double kBatchNormEpsilon = 1e-5;

std::string layer_tag(std::size_t i) { return "layer " + std::to_string(i); }

}  // namespace

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::version: return "version";
    case ErrorCode::shape: return "shape";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::layout: return "layout";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::softmax_loss: return "softmax-loss";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (LayerKind kind : {LayerKind::conv, LayerKind::maxpool, LayerKind::relu,
                         LayerKind::batchnorm, LayerKind::softmax_loss}) {
    if (name == to_string(kind)) return kind;
  }
  fail(ErrorCode::format, "unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::conv(int h, int w, int c, int n, int stride,
                          int padding) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.filter_height = h;
  s.filter_width = w;
  s.in_channels = c;
  s.out_filters = n;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::maxpool(int window, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.window = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::batchnorm() {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  return s;
}

LayerSpec LayerSpec::softmax_loss() {
  LayerSpec s;
  s.kind = LayerKind::softmax_loss;
  return s;
}

std::vector<Dims3> NetworkSpec::output_dims() const {
  std::vector<Dims3> dims;
  dims.reserve(layers.size());
  Dims3 cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.filter_height < 1 || l.filter_width < 1 || l.in_channels < 1 ||
            l.out_filters < 1 || l.stride < 1 || l.padding < 0) {
          fail(ErrorCode::shape, layer_tag(i) + ": invalid conv geometry");
        }
        if (l.in_channels != cur.channels) {
          fail(ErrorCode::shape,
               layer_tag(i) + ": conv expects " +
                   std::to_string(l.in_channels) + " channels, input has " +
                   std::to_string(cur.channels));
        }
        const int h = cur.height + 2 * l.padding - l.filter_height;
        const int w = cur.width + 2 * l.padding - l.filter_width;
        if (h < 0 || w < 0) {
          fail(ErrorCode::shape, layer_tag(i) + ": filter larger than input");
        }
        cur = {h / l.stride + 1, w / l.stride + 1, l.out_filters};
        break;
      }
      case LayerKind::maxpool: {
        if (l.window < 1 || l.stride < 1) {
          fail(ErrorCode::shape, layer_tag(i) + ": invalid pool geometry");
        }
        if (cur.height < l.window || cur.width < l.window) {
          fail(ErrorCode::shape, layer_tag(i) + ": pool window larger than input");
        }
        cur = {(cur.height - l.window) / l.stride + 1,
               (cur.width - l.window) / l.stride + 1, cur.channels};
        break;
      }
      case LayerKind::relu:
      case LayerKind::batchnorm:
      case LayerKind::softmax_loss:
        break;
    }
    dims.push_back(cur);
  }
  return dims;
}

void NetworkSpec::validate() const {
  if (input.height < 1 || input.width < 1 || input.channels < 1) {
    fail(ErrorCode::shape, "input dims must be >= 1");
  }
  if (class_count < 1) fail(ErrorCode::shape, "class_count must be >= 1");
  if (layers.empty() || layers.back().kind != LayerKind::softmax_loss) {
    fail(ErrorCode::shape, "network must end with a softmax-loss layer");
  }
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::softmax_loss) {
      fail(ErrorCode::shape, layer_tag(i) + ": softmax-loss must be last");
    }
  }
  const auto convs = conv_layers();
  if (convs.empty()) fail(ErrorCode::shape, "network has no conv layer");
  if (layers[convs.back()].out_filters != class_count) {
    fail(ErrorCode::shape, layer_tag(convs.back()) +
                               ": last conv must have class_count filters");
  }
  const auto dims = output_dims();
  const Dims3 last = dims.back();
  if (last.height != 1 || last.width != 1 || last.channels != class_count) {
    fail(ErrorCode::shape, "network output must be 1x1x" +
                               std::to_string(class_count));
  }
}

std::vector<std::size_t> NetworkSpec::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::conv) out.push_back(i);
  }
  return out;
}

std::string NetworkSpec::describe() const {
  std::ostringstream out;
  out << "input " << input.height << 'x' << input.width << 'x'
      << input.channels << ", classes " << class_count;
  for (const LayerSpec& l : layers) {
    out << " | " << to_string(l.kind);
    if (l.kind == LayerKind::conv) {
      out << ' ' << l.filter_height << 'x' << l.filter_width << 'x'
          << l.in_channels << 'x' << l.out_filters;
    } else if (l.kind == LayerKind::maxpool) {
      out << ' ' << l.window << '/' << l.stride;
    }
  }
  return out.str();
}

NetworkSpec lenet_spec() {
  NetworkSpec spec;
  spec.input = {28, 28, 1};
  spec.class_count = 10;
  spec.layers = {
      LayerSpec::conv(5, 5, 1, 20),    LayerSpec::batchnorm(),
      LayerSpec::relu(),               LayerSpec::maxpool(2, 2),
      LayerSpec::conv(5, 5, 20, 50),   LayerSpec::batchnorm(),
      LayerSpec::relu(),               LayerSpec::maxpool(2, 2),
      LayerSpec::conv(4, 4, 50, 500),  LayerSpec::batchnorm(),
      LayerSpec::relu(),               LayerSpec::conv(1, 1, 500, 10),
      LayerSpec::softmax_loss(),
  };
  return spec;
}

std::vector<ParamShapes> param_shapes(const NetworkSpec& spec) {
  const auto dims = spec.output_dims();
  std::vector<ParamShapes> shapes(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::conv) {
      shapes[i].weight = {std::size_t(l.filter_height),
                          std::size_t(l.filter_width),
                          std::size_t(l.in_channels),
                          std::size_t(l.out_filters)};
      shapes[i].bias = {std::size_t(l.out_filters)};
    } else if (l.kind == LayerKind::batchnorm) {
      const std::size_t c = std::size_t(dims[i].channels);
      shapes[i] = {{c}, {c}, {c}, {c}};
    }
  }
  return shapes;
}

template <class T>
ParamSet<T> zero_params(const NetworkSpec& spec) {
  const auto shapes = param_shapes(spec);
  ParamSet<T> params(shapes.size());
  auto make = [](const Shape& s, T fill) {
    return s.empty() ? BasicTensor<T>{} : BasicTensor<T>(s, fill);
  };
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    params[i].weight = make(shapes[i].weight, T{0});
    params[i].bias = make(shapes[i].bias, T{0});
    params[i].running_mean = make(shapes[i].running_mean, T{0});
    params[i].running_var = make(shapes[i].running_var, T{1});
  }
  return params;
}

template <class T>
std::vector<BasicTensor<T>*> trainable_tensors(ParamSet<T>& params) {
  std::vector<BasicTensor<T>*> out;
  for (auto& layer : params) {
    if (!layer.trainable()) continue;
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

template <class T>
std::vector<const BasicTensor<T>*> trainable_tensors(
    const ParamSet<T>& params) {
  std::vector<const BasicTensor<T>*> out;
  for (const auto& layer : params) {
    if (!layer.trainable()) continue;
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

TrainedNetwork::TrainedNetwork(NetworkSpec spec, ParamSet<float> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  validate();
}

TrainedNetwork TrainedNetwork::initialize(NetworkSpec spec,
                                          std::uint64_t seed) {
  spec.validate();
  ParamSet<float> params = zero_params<float>(spec);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind == LayerKind::conv) {
      const double fan_in = double(l.filter_height) * l.filter_width *
                            l.in_channels;
      std::uniform_real_distribution<float> dist(
          -float(std::sqrt(6.0 / fan_in)), float(std::sqrt(6.0 / fan_in)));
      for (float& v : params[i].weight.values()) v = dist(rng);
    } else if (l.kind == LayerKind::batchnorm) {
      params[i].weight.fill(1.0f);
    }
  }
  return TrainedNetwork(std::move(spec), std::move(params));
}

void TrainedNetwork::validate() const {
  spec_.validate();
  if (params_.size() != spec_.layers.size()) {
    fail(ErrorCode::shape, "parameter list has " +
                               std::to_string(params_.size()) +
                               " layers, spec has " +
                               std::to_string(spec_.layers.size()));
  }
  const auto expected = param_shapes(spec_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& got = params_[i];
    const auto& want = expected[i];
    auto check = [&](const Tensor& a, const Shape& b, const char* what) {
      if (a.shape() != b) {
        fail(ErrorCode::shape, layer_tag(i) + ": " + what + " shape " +
                                   shape_string(a.shape()) + ", expected " +
                                   shape_string(b));
      }
      if (!a.all_finite()) {
        fail(ErrorCode::numeric, layer_tag(i) + ": non-finite " + what);
      }
    };
    check(got.weight, want.weight, "weight");
    check(got.bias, want.bias, "bias");
    check(got.running_mean, want.running_mean, "running mean");
    check(got.running_var, want.running_var, "running variance");
  }
}

std::size_t TrainedNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : trainable_tensors(params_)) n += t->size();
  return n;
}

// ---------------------------------------------------------------------------
// Layer kernels. All activations are NHWC.

namespace {

struct ConvGeom {
  int batch, in_h, in_w, in_c, k_h, k_w, out_h, out_w, out_c, stride, pad;

  int rows() const { return batch * out_h * out_w; }
  int cols() const { return k_h * k_w * in_c; }
  bool is_pointwise() const {
    return k_h == 1 && k_w == 1 && stride == 1 && pad == 0;
  }
};

template <class T>
void im2col(const T* in, const ConvGeom& g, T* cols) {
  const int k = g.cols();
  for (int b = 0; b < g.batch; ++b) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        T* row = cols + (std::size_t(b * g.out_h + oh) * g.out_w + ow) * k;
        for (int kh = 0; kh < g.k_h; ++kh) {
          const int ih = oh * g.stride - g.pad + kh;
          for (int kw = 0; kw < g.k_w; ++kw) {
            const int iw = ow * g.stride - g.pad + kw;
            T* dst = row + (kh * g.k_w + kw) * g.in_c;
            if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) {
              std::fill(dst, dst + g.in_c, T{0});
            } else {
              const T* src =
                  in + (std::size_t(b * g.in_h + ih) * g.in_w + iw) * g.in_c;
              std::copy(src, src + g.in_c, dst);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* in) {
  const int k = g.cols();
  for (int b = 0; b < g.batch; ++b) {
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        const T* row =
            cols + (std::size_t(b * g.out_h + oh) * g.out_w + ow) * k;
        for (int kh = 0; kh < g.k_h; ++kh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.in_h) continue;
          for (int kw = 0; kw < g.k_w; ++kw) {
            const int iw = ow * g.stride - g.pad + kw;
            if (iw < 0 || iw >= g.in_w) continue;
            const T* src = row + (kh * g.k_w + kw) * g.in_c;
            T* dst = in + (std::size_t(b * g.in_h + ih) * g.in_w + iw) * g.in_c;
            for (int c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <class T>
ConvGeom conv_geom(const LayerSpec& l, const BasicTensor<T>& in,
                   const Dims3& out) {
  return {int(in.dim(0)), int(in.dim(1)), int(in.dim(2)), int(in.dim(3)),
          l.filter_height, l.filter_width, out.height, out.width,
          l.out_filters, l.stride, l.padding};
}

template <class T>
BasicTensor<T> conv_forward(const LayerSpec& l, const LayerParams<T>& p,
                            const BasicTensor<T>& in, const Dims3& out_dims,
                            BasicTensor<T>* patches_out) {
  const ConvGeom g = conv_geom(l, in, out_dims);
  BasicTensor<T> out({std::size_t(g.batch), std::size_t(g.out_h),
                      std::size_t(g.out_w), std::size_t(g.out_c)});
  const T* a = in.data();
  BasicTensor<T> patches;
  if (!g.is_pointwise()) {
    patches = BasicTensor<T>({std::size_t(g.rows()), std::size_t(g.cols())});
    im2col(in.data(), g, patches.data());
    a = patches.data();
  }
  T* o = out.data();
  const T* bias = p.bias.data();
  for (int r = 0; r < g.rows(); ++r) {
    std::copy(bias, bias + g.out_c, o + std::size_t(r) * g.out_c);
  }
  blas::gemm(false, false, g.rows(), g.out_c, g.cols(), T{1}, a, g.cols(),
             p.weight.data(), g.out_c, T{1}, o, g.out_c);
  if (patches_out) *patches_out = std::move(patches);
  return out;
}

template <class T>
BasicTensor<T> conv_backward(const LayerSpec& l, const LayerParams<T>& p,
                             const BasicTensor<T>& in,
                             const BasicTensor<T>& patches,
                             const BasicTensor<T>& dout, LayerParams<T>& grad,
                             bool need_input_grad) {
  const Dims3 out_dims{int(dout.dim(1)), int(dout.dim(2)), int(dout.dim(3))};
  const ConvGeom g = conv_geom(l, in, out_dims);
  const T* a = g.is_pointwise() ? in.data() : patches.data();
  // dW = patches^T * dout
  blas::gemm(true, false, g.cols(), g.out_c, g.rows(), T{1}, a, g.cols(),
             dout.data(), g.out_c, T{0}, grad.weight.data(), g.out_c);
  T* db = grad.bias.data();
  std::fill(db, db + g.out_c, T{0});
  for (int r = 0; r < g.rows(); ++r) {
    const T* row = dout.data() + std::size_t(r) * g.out_c;
    for (int n = 0; n < g.out_c; ++n) db[n] += row[n];
  }
  if (!need_input_grad) return {};
  BasicTensor<T> din(in.shape());
  if (g.is_pointwise()) {
    blas::gemm(false, true, g.rows(), g.cols(), g.out_c, T{1}, dout.data(),
               g.out_c, p.weight.data(), g.out_c, T{0}, din.data(), g.cols());
    return din;
  }
  BasicTensor<T> dcols({std::size_t(g.rows()), std::size_t(g.cols())});
  blas::gemm(false, true, g.rows(), g.cols(), g.out_c, T{1}, dout.data(),
             g.out_c, p.weight.data(), g.out_c, T{0}, dcols.data(), g.cols());
  col2im_add(dcols.data(), g, din.data());
  return din;
}

template <class T>
BasicTensor<T> pool_forward(const LayerSpec& l, const BasicTensor<T>& in,
                            const Dims3& out_dims,
                            std::vector<std::uint32_t>& argmax) {
  const int batch = int(in.dim(0)), h = int(in.dim(1)), w = int(in.dim(2)),
            c = int(in.dim(3));
  BasicTensor<T> out({std::size_t(batch), std::size_t(out_dims.height),
                      std::size_t(out_dims.width), std::size_t(c)});
  argmax.assign(out.size(), 0);
  const T* src = in.data();
  T* dst = out.data();
  std::size_t o = 0;
  for (int b = 0; b < batch; ++b) {
    for (int oh = 0; oh < out_dims.height; ++oh) {
      for (int ow = 0; ow < out_dims.width; ++ow) {
        for (int ch = 0; ch < c; ++ch, ++o) {
          std::uint32_t best_idx = 0;
          T best = T{0};
          bool first = true;
          for (int kh = 0; kh < l.window; ++kh) {
            const int ih = oh * l.stride + kh;
            for (int kw = 0; kw < l.window; ++kw) {
              const int iw = ow * l.stride + kw;
              const std::uint32_t idx = std::uint32_t(
                  (std::size_t(b * h + ih) * w + iw) * c + ch);
              if (first || src[idx] > best) {
                best = src[idx];
                best_idx = idx;
                first = false;
              }
            }
          }
          dst[o] = best;
          argmax[o] = best_idx;
        }
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> batchnorm_forward(const LayerParams<T>& p,
                                 const BasicTensor<T>& in, Mode mode,
                                 BasicTensor<T>* xhat_out,
                                 std::vector<T>* inv_std_out,
                                 std::vector<T>* mean_out,
                                 std::vector<T>* var_out) {
  const std::size_t c = in.dim(3);
  const std::size_t m = in.size() / c;
  std::vector<T> mean(c, T{0}), var(c, T{0});
  const T* x = in.data();
  if (mode == Mode::training) {
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[r * c + ch];
    }
    for (auto& v : mean) v /= T(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T d = x[r * c + ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (auto& v : var) v /= T(m);
  } else {
    std::copy(p.running_mean.data(), p.running_mean.data() + c, mean.begin());
    std::copy(p.running_var.data(), p.running_var.data() + c, var.begin());
  }
  std::vector<T> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = T{1} / std::sqrt(var[ch] + T(kBatchNormEpsilon));
  }
  BasicTensor<T> out(in.shape());
  BasicTensor<T> xhat;
  if (xhat_out) xhat = BasicTensor<T>(in.shape());
  const T* gamma = p.weight.data();
  const T* beta = p.bias.data();
  T* y = out.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const T xh = (x[i] - mean[ch]) * inv_std[ch];
      if (xhat_out) xhat[i] = xh;
      y[i] = gamma[ch] * xh + beta[ch];
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = inv_std;
  if (mode == Mode::training) {
    if (mean_out) *mean_out = mean;
    if (var_out) {
      const T unbias = m > 1 ? T(m) / T(m - 1) : T{1};
      for (auto& v : var) v *= unbias;
      *var_out = var;
    }
  }
  return out;
}

template <class T>
BasicTensor<T> batchnorm_backward(const LayerParams<T>& p,
                                  const BasicTensor<T>& xhat,
                                  const std::vector<T>& inv_std,
                                  const BasicTensor<T>& dout,
                                  LayerParams<T>& grad) {
  const std::size_t c = dout.dim(3);
  const std::size_t m = dout.size() / c;
  T* dgamma = grad.weight.data();
  T* dbeta = grad.bias.data();
  std::fill(dgamma, dgamma + c, T{0});
  std::fill(dbeta, dbeta + c, T{0});
  const T* dy = dout.data();
  const T* xh = xhat.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      dgamma[ch] += dy[i] * xh[i];
      dbeta[ch] += dy[i];
    }
  }
  BasicTensor<T> din(dout.shape());
  T* dx = din.data();
  const T* gamma = p.weight.data();
  const T mt = T(m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      dx[i] = gamma[ch] * inv_std[ch] / mt *
              (mt * dy[i] - dbeta[ch] - xh[i] * dgamma[ch]);
    }
  }
  return din;
}

template <class T>
void check_params(std::size_t i, const LayerParams<T>& got,
                  const ParamShapes& want) {
  if (got.weight.shape() != want.weight ||
      got.bias.shape() != want.bias ||
      got.running_mean.shape() != want.running_mean ||
      got.running_var.shape() != want.running_var) {
    fail(ErrorCode::shape, layer_tag(i) + ": parameter shape mismatch");
  }
}

}  // namespace

template <class T>
BasicTensor<T> forward(const NetworkSpec& spec, const ParamSet<T>& params,
                       const BasicTensor<T>& batch, Mode mode,
                       ForwardTrace<T>* trace) {
  const auto dims = spec.output_dims();
  if (params.size() != spec.layers.size()) {
    fail(ErrorCode::shape, "parameter list does not match the spec");
  }
  if (batch.rank() != 4 || int(batch.dim(1)) != spec.input.height ||
      int(batch.dim(2)) != spec.input.width ||
      int(batch.dim(3)) != spec.input.channels) {
    fail(ErrorCode::shape, layer_tag(0) + ": batch shape " +
                               shape_string(batch.shape()) +
                               " does not match input dims");
  }
  const std::size_t n_layers = spec.layers.size();
  if (trace) {
    *trace = ForwardTrace<T>{};
    trace->inputs.resize(n_layers + 1);
    trace->patches.resize(n_layers);
    trace->pool_argmax.resize(n_layers);
    trace->bn_xhat.resize(n_layers);
    trace->bn_inv_std.resize(n_layers);
    trace->stats.mean.resize(n_layers);
    trace->stats.var.resize(n_layers);
    for (const LayerSpec& l : spec.layers) trace->kinds.push_back(l.kind);
  }
  const auto expected_layout = param_shapes(spec);
  BasicTensor<T> cur = batch;
  std::vector<std::uint32_t> scratch_argmax;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const LayerSpec& l = spec.layers[i];
    check_params(i, params[i], expected_layout[i]);
    BasicTensor<T> next;
    switch (l.kind) {
      case LayerKind::conv:
        next = conv_forward(l, params[i], cur, dims[i],
                            trace ? &trace->patches[i] : nullptr);
        break;
      case LayerKind::maxpool:
        next = pool_forward(l, cur, dims[i],
                            trace ? trace->pool_argmax[i] : scratch_argmax);
        break;
      case LayerKind::relu:
        next = cur;
        for (T& v : next.values()) v = v > T{0} ? v : T{0};
        break;
      case LayerKind::batchnorm:
        next = batchnorm_forward(
            params[i], cur, mode, trace ? &trace->bn_xhat[i] : nullptr,
            trace ? &trace->bn_inv_std[i] : nullptr,
            trace ? &trace->stats.mean[i] : nullptr,
            trace ? &trace->stats.var[i] : nullptr);
        break;
      case LayerKind::softmax_loss:
        next = cur;
        break;
    }
    if (!next.all_finite()) {
      fail(ErrorCode::numeric, layer_tag(i) + " (" + to_string(l.kind) +
                                   "): non-finite activation");
    }
    if (trace) trace->inputs[i] = std::move(cur);
    cur = std::move(next);
  }
  if (trace) trace->inputs[n_layers] = cur;
  cur.reshape({cur.dim(0), std::size_t(spec.class_count)});
  return cur;
}

template <class T>
ActivationPattern ForwardTrace<T>::pattern() const {
  ActivationPattern p;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == LayerKind::maxpool) {
      p.pool_argmax.push_back(pool_argmax[i]);
    } else if (kinds[i] == LayerKind::relu) {
      const auto& in = inputs[i];
      std::vector<std::uint8_t> on(in.size());
      for (std::size_t k = 0; k < in.size(); ++k) on[k] = in[k] > T{0};
      p.relu_on.push_back(std::move(on));
    }
  }
  return p;
}

template <class T>
T softmax_cross_entropy(const BasicTensor<T>& logits,
                        std::span<const int> labels, BasicTensor<T>* dlogits) {
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (labels.size() != batch) {
    fail(ErrorCode::invalid_argument, "label count does not match batch");
  }
  if (dlogits) *dlogits = BasicTensor<T>(logits.shape());
  T total{0};
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || std::size_t(y) >= k) {
      fail(ErrorCode::invalid_argument,
           "label " + std::to_string(y) + " outside [0, class_count)");
    }
    const T* row = logits.data() + b * k;
    const T mx = *std::max_element(row, row + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    const T log_z = mx + std::log(sum);
    total += log_z - row[y];
    if (dlogits) {
      T* d = dlogits->data() + b * k;
      for (std::size_t j = 0; j < k; ++j) {
        d[j] = std::exp(row[j] - log_z) / T(batch);
      }
      d[y] -= T{1} / T(batch);
    }
  }
  return total / T(batch);
}

template <class T>
T loss_and_gradients(const NetworkSpec& spec, const ParamSet<T>& params,
                     const BasicTensor<T>& batch, std::span<const int> labels,
                     ParamSet<T>* grads, BatchStats<T>* stats,
                     ForwardTrace<T>* trace_out) {
  if (batch.rank() == 0 || batch.dim(0) == 0 || labels.empty()) {
    fail(ErrorCode::invalid_argument, "empty batch");
  }
  ForwardTrace<T> local;
  ForwardTrace<T>& trace = trace_out ? *trace_out : local;
  const BasicTensor<T> logits =
      forward(spec, params, batch, Mode::training, &trace);
  BasicTensor<T> dlogits;
  const T loss =
      softmax_cross_entropy(logits, labels, grads ? &dlogits : nullptr);
  if (!std::isfinite(double(loss))) {
    fail(ErrorCode::numeric, "non-finite loss");
  }
  if (stats) *stats = trace.stats;
  if (!grads) return loss;

  *grads = zero_params<T>(spec);
  for (auto& g : *grads) {
    g.running_mean = {};
    g.running_var = {};
  }
  std::size_t first_trainable = spec.layers.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (params[i].trainable()) {
      first_trainable = i;
      break;
    }
  }
  BasicTensor<T> d = std::move(dlogits);
  d.reshape(trace.inputs.back().shape());
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const bool need_input = ii > first_trainable;
    switch (l.kind) {
      case LayerKind::softmax_loss:
        break;
      case LayerKind::conv:
        d = conv_backward(l, params[ii], trace.inputs[ii], trace.patches[ii],
                          d, (*grads)[ii], need_input);
        break;
      case LayerKind::maxpool: {
        if (!need_input) break;
        BasicTensor<T> din(trace.inputs[ii].shape());
        const auto& argmax = trace.pool_argmax[ii];
        for (std::size_t o = 0; o < argmax.size(); ++o) din[argmax[o]] += d[o];
        d = std::move(din);
        break;
      }
      case LayerKind::relu: {
        if (!need_input) break;
        const BasicTensor<T>& in = trace.inputs[ii];
        for (std::size_t k = 0; k < d.size(); ++k) {
          if (!(in[k] > T{0})) d[k] = T{0};
        }
        break;
      }
      case LayerKind::batchnorm:
        d = batchnorm_backward(params[ii], trace.bn_xhat[ii],
                               trace.bn_inv_std[ii], d, (*grads)[ii]);
        break;
    }
    if (!need_input && l.kind != LayerKind::softmax_loss) break;
  }
  return loss;
}

Tensor forward(const TrainedNetwork& net, const Tensor& batch) {
  return forward(net.spec(), net.params(), batch, Mode::inference);
}

LossAndGradients loss_and_gradients(const TrainedNetwork& net,
                                    const Tensor& batch,
                                    std::span<const int> labels) {
  LossAndGradients out;
  out.loss = loss_and_gradients(net.spec(), net.params(), batch, labels,
                                &out.grads, &out.stats);
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* row = logits.data() + b * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[b] = int(best);
  }
  return out;
}

template ParamSet<float> zero_params<float>(const NetworkSpec&);
template ParamSet<double> zero_params<double>(const NetworkSpec&);
template std::vector<BasicTensor<float>*> trainable_tensors(ParamSet<float>&);
template std::vector<BasicTensor<double>*> trainable_tensors(
    ParamSet<double>&);
template std::vector<const BasicTensor<float>*> trainable_tensors(
    const ParamSet<float>&);
template std::vector<const BasicTensor<double>*> trainable_tensors(
    const ParamSet<double>&);
template BasicTensor<float> forward(const NetworkSpec&, const ParamSet<float>&,
                                    const BasicTensor<float>&, Mode,
                                    ForwardTrace<float>*);
template BasicTensor<double> forward(const NetworkSpec&,
                                     const ParamSet<double>&,
                                     const BasicTensor<double>&, Mode,
                                     ForwardTrace<double>*);
template float softmax_cross_entropy(const BasicTensor<float>&,
                                     std::span<const int>,
                                     BasicTensor<float>*);
template double softmax_cross_entropy(const BasicTensor<double>&,
                                      std::span<const int>,
                                      BasicTensor<double>*);
template float loss_and_gradients(const NetworkSpec&, const ParamSet<float>&,
                                  const BasicTensor<float>&,
                                  std::span<const int>, ParamSet<float>*,
                                  BatchStats<float>*, ForwardTrace<float>*);
template double loss_and_gradients(const NetworkSpec&,
                                   const ParamSet<double>&,
                                   const BasicTensor<double>&,
                                   std::span<const int>, ParamSet<double>*,
                                   BatchStats<double>*, ForwardTrace<double>*);
template struct ForwardTrace<float>;
template struct ForwardTrace<double>;

}  // namespace ecs
