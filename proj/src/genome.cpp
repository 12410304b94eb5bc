#include "ecs/genome.hpp"

#include <numeric>
#include <sstream>

namespace ecs {

MaskLayout::MaskLayout(int input_channels, std::vector<ConvGeometry> layers)
    : input_channels_(input_channels), layers_(std::move(layers)) {
  if (input_channels_ < 1) fail(ErrorCode::layout, "N_0 must be >= 1");
  if (layers_.empty()) fail(ErrorCode::layout, "layout has no conv layers");
  int prev = input_channels_;
  offsets_.push_back(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const ConvGeometry& g = layers_[i];
    if (g.height < 1 || g.width < 1 || g.filters < 1) {
      fail(ErrorCode::layout, "conv layer " + std::to_string(i + 1) +
                                  ": extents must be >= 1");
    }
    if (g.in_channels != prev) {
      fail(ErrorCode::layout, "conv layer " + std::to_string(i + 1) +
                                  ": C_i must equal N_{i-1}");
    }
    prev = g.filters;
    if (maskable(i)) offsets_.push_back(offsets_.back() + std::size_t(g.filters));
  }
}

MaskLayout MaskLayout::from_spec(const NetworkSpec& spec) {
  std::vector<ConvGeometry> layers;
  for (std::size_t i : spec.conv_layers()) {
    const LayerSpec& l = spec.layers[i];
    layers.push_back({l.filter_height, l.filter_width, l.in_channels,
                      l.out_filters});
  }
  return MaskLayout(spec.input.channels, std::move(layers));
}

std::size_t MaskLayout::total_filters() const {
  std::size_t n = 0;
  for (const auto& g : layers_) n += std::size_t(g.filters);
  return n;
}

std::size_t MaskLayout::total_weights() const {
  std::size_t n = 0;
  for (const auto& g : layers_) n += g.weights();
  return n;
}

std::string MaskLayout::describe() const {
  std::ostringstream out;
  out << input_channels_;
  for (const auto& g : layers_) {
    out << ' ' << g.height << 'x' << g.width << 'x' << g.in_channels << 'x'
        << g.filters;
  }
  return out.str();
}

Individual::Individual(LayoutPtr layout, std::vector<std::uint8_t> bits)
    : layout_(std::move(layout)), bits_(std::move(bits)) {
  if (!layout_) fail(ErrorCode::layout, "individual without layout");
  if (bits_.size() != layout_->bit_count()) {
    fail(ErrorCode::layout, "individual has " + std::to_string(bits_.size()) +
                                " bits, layout needs " +
                                std::to_string(layout_->bit_count()));
  }
  for (auto& b : bits_) {
    if (b > 1) fail(ErrorCode::invalid_argument, "bits must be 0 or 1");
  }
}

Individual Individual::all_ones(LayoutPtr layout) {
  const std::size_t n = layout->bit_count();
  return Individual(std::move(layout), std::vector<std::uint8_t>(n, 1));
}

Individual Individual::keep_first(LayoutPtr layout,
                                  std::span<const int> counts) {
  const std::size_t maskable = layout->layer_count() - 1;
  if (counts.size() != maskable) {
    fail(ErrorCode::layout, "keep_first needs one count per maskable layer");
  }
  std::vector<std::uint8_t> bits(layout->bit_count(), 0);
  for (std::size_t i = 0; i < maskable; ++i) {
    if (counts[i] < 1 || counts[i] > layout->layer(i).filters) {
      fail(ErrorCode::layout, "count for layer " + std::to_string(i + 1) +
                                  " outside [1, N_i]");
    }
    std::fill_n(bits.begin() + std::ptrdiff_t(layout->offset(i)), counts[i], 1);
  }
  return Individual(std::move(layout), std::move(bits));
}

Individual Individual::parse(LayoutPtr layout, std::string_view text) {
  std::vector<std::uint8_t> bits;
  std::vector<std::size_t> breaks;
  for (char c : text) {
    if (c == '0' || c == '1') {
      bits.push_back(std::uint8_t(c - '0'));
    } else if (c == '|') {
      breaks.push_back(bits.size());
    } else if (c == '\n' || c == '\r' || c == ' ') {
      continue;
    } else {
      fail(ErrorCode::format, std::string("unexpected character '") + c +
                                  "' in individual");
    }
  }
  if (!breaks.empty()) {
    const std::size_t maskable = layout->layer_count() - 1;
    bool ok = breaks.size() + 1 == maskable;
    for (std::size_t i = 0; ok && i < breaks.size(); ++i) {
      ok = breaks[i] == layout->offset(i + 1);
    }
    if (!ok) fail(ErrorCode::layout, "layer separators do not match layout");
  }
  return Individual(std::move(layout), std::move(bits));
}

std::span<const std::uint8_t> Individual::layer_bits(std::size_t i) const {
  if (!layout_->maskable(i)) {
    fail(ErrorCode::layout, "layer " + std::to_string(i + 1) + " is not maskable");
  }
  return std::span<const std::uint8_t>(bits_).subspan(
      layout_->offset(i), std::size_t(layout_->layer(i).filters));
}

int Individual::kept(std::size_t i) const {
  const auto b = layer_bits(i);
  return int(std::count(b.begin(), b.end(), std::uint8_t{1}));
}

bool Individual::satisfies_floor() const {
  for (std::size_t i = 0; i + 1 < layout_->layer_count(); ++i) {
    if (kept(i) == 0) return false;
  }
  return true;
}

std::string Individual::to_string() const {
  std::string out;
  out.reserve(bits_.size() + layout_->layer_count());
  for (std::size_t i = 0; i + 1 < layout_->layer_count(); ++i) {
    if (i) out.push_back('|');
    for (auto b : layer_bits(i)) out.push_back(char('0' + b));
  }
  return out;
}

std::string Individual::key() const {
  std::string out(bits_.size(), '0');
  for (std::size_t i = 0; i < bits_.size(); ++i) out[i] = char('0' + bits_[i]);
  return out;
}

void repair(Individual& ind, Rng& rng) {
  const MaskLayout& layout = ind.layout();
  for (std::size_t i = 0; i + 1 < layout.layer_count(); ++i) {
    if (ind.kept(i) > 0) continue;
    std::uniform_int_distribution<int> pick(0, layout.layer(i).filters - 1);
    ind.mutable_bits()[layout.offset(i) + std::size_t(pick(rng))] = 1;
  }
}

Individual random_individual(const LayoutPtr& layout, double density,
                             Rng& rng) {
  if (!(density > 0.0 && density <= 1.0)) {
    fail(ErrorCode::invalid_argument, "density must lie in (0,1]");
  }
  std::bernoulli_distribution keep(density);
  std::vector<std::uint8_t> bits(layout->bit_count());
  for (auto& b : bits) b = keep(rng) ? 1 : 0;
  Individual ind(layout, std::move(bits));
  repair(ind, rng);
  return ind;
}

std::vector<int> surviving_counts(const Individual& ind) {
  const MaskLayout& layout = ind.layout();
  std::vector<int> counts{layout.input_channels()};
  for (std::size_t i = 0; i < layout.layer_count(); ++i) {
    counts.push_back(layout.maskable(i) ? ind.kept(i) : layout.layer(i).filters);
  }
  return counts;
}

CompactArchitecture compact_architecture(const Individual& ind) {
  CompactArchitecture arch;
  arch.counts = surviving_counts(ind);
  const MaskLayout& layout = ind.layout();
  for (std::size_t i = 0; i < layout.layer_count(); ++i) {
    std::vector<int> kept;
    if (layout.maskable(i)) {
      const auto bits = ind.layer_bits(i);
      for (std::size_t n = 0; n < bits.size(); ++n) {
        if (bits[n]) kept.push_back(int(n));
      }
    } else {
      kept.resize(std::size_t(layout.layer(i).filters));
      std::iota(kept.begin(), kept.end(), 0);
    }
    arch.kept_filters.push_back(std::move(kept));
  }
  return arch;
}

NetworkSpec compact_spec(const NetworkSpec& spec, std::span<const int> counts) {
  const auto convs = spec.conv_layers();
  if (counts.size() != convs.size() + 1) {
    fail(ErrorCode::layout, "counts must have p+1 entries");
  }
  NetworkSpec out = spec;
  for (std::size_t k = 0; k < convs.size(); ++k) {
    LayerSpec& l = out.layers[convs[k]];
    if (counts[k + 1] < 1 || counts[k + 1] > l.out_filters) {
      fail(ErrorCode::layout, "count for conv layer " + std::to_string(k + 1) +
                                  " outside [1, N_i]");
    }
    l.in_channels = counts[k];
    l.out_filters = counts[k + 1];
  }
  out.validate();
  return out;
}

namespace {

Tensor gather_entries(const Tensor& t, const std::vector<int>& keep) {
  Tensor out({keep.size()});
  for (std::size_t i = 0; i < keep.size(); ++i) out[i] = t[std::size_t(keep[i])];
  return out;
}

}  // namespace

TrainedNetwork compact_network(const TrainedNetwork& net,
                               const Individual& ind) {
  const NetworkSpec& spec = net.spec();
  if (!(MaskLayout::from_spec(spec) == ind.layout())) {
    fail(ErrorCode::layout, "individual layout " + ind.layout().describe() +
                                " does not match network " +
                                MaskLayout::from_spec(spec).describe());
  }
  const CompactArchitecture arch = compact_architecture(ind);
  NetworkSpec out_spec = compact_spec(spec, arch.counts);
  ParamSet<float> params(spec.layers.size());

  std::vector<int> channels(std::size_t(spec.input.channels));
  std::iota(channels.begin(), channels.end(), 0);
  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerParams<float>& src = net.params()[i];
    if (l.kind == LayerKind::conv) {
      const std::vector<int>& keep = arch.kept_filters[conv_index++];
      const std::size_t h = std::size_t(l.filter_height);
      const std::size_t w = std::size_t(l.filter_width);
      const std::size_t c_old = std::size_t(l.in_channels);
      const std::size_t n_old = std::size_t(l.out_filters);
      Tensor weight({h, w, channels.size(), keep.size()});
      for (std::size_t kh = 0; kh < h; ++kh) {
        for (std::size_t kw = 0; kw < w; ++kw) {
          for (std::size_t c = 0; c < channels.size(); ++c) {
            const float* row =
                src.weight.data() +
                ((kh * w + kw) * c_old + std::size_t(channels[c])) * n_old;
            float* dst =
                weight.data() + ((kh * w + kw) * channels.size() + c) * keep.size();
            for (std::size_t n = 0; n < keep.size(); ++n) {
              dst[n] = row[keep[n]];
            }
          }
        }
      }
      params[i].weight = std::move(weight);
      params[i].bias = gather_entries(src.bias, keep);
      channels = keep;
    } else if (l.kind == LayerKind::batchnorm) {
      params[i].weight = gather_entries(src.weight, channels);
      params[i].bias = gather_entries(src.bias, channels);
      params[i].running_mean = gather_entries(src.running_mean, channels);
      params[i].running_var = gather_entries(src.running_var, channels);
    }
  }
  return TrainedNetwork(std::move(out_spec), std::move(params));
}

WeightCount kept_weight_count(const MaskLayout& layout,
                              std::span<const int> counts) {
  if (counts.size() != layout.layer_count() + 1) {
    fail(ErrorCode::layout, "counts must have p+1 entries");
  }
  WeightCount wc;
  wc.total = layout.total_weights();
  for (std::size_t i = 0; i < layout.layer_count(); ++i) {
    const ConvGeometry& g = layout.layer(i);
    wc.kept += std::size_t(g.height) * g.width * std::size_t(counts[i]) *
               std::size_t(counts[i + 1]);
  }
  wc.discarded = wc.total - wc.kept;
  return wc;
}

}  // namespace ecs
