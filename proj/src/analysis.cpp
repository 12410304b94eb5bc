#include "ecs/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>

namespace ecs {

namespace {

std::string dims(const ConvGeometry& g) {
  return std::to_string(g.height) + "x" + std::to_string(g.width) + "x" +
         std::to_string(g.in_channels) + "x" + std::to_string(g.filters);
}

double ratio(std::size_t a, std::size_t b) {
  return b == 0 ? 0.0 : double(a) / double(b);
}

void finish_layer(LayerStats& s) {
  s.weights_original = s.original.weights();
  s.weights_compressed = s.compressed.weights();
  const std::size_t pixels = std::size_t(s.out_height) * std::size_t(s.out_width);
  s.mults_original = s.weights_original * pixels;
  s.mults_compressed = s.weights_compressed * pixels;
  s.r_c = ratio(s.weights_original, s.weights_compressed);
  s.r_s = ratio(s.mults_original, s.mults_compressed);
  s.r_f = ratio(s.fmap_original, s.fmap_compressed);
}

void finish_totals(CompressionReport& r) {
  for (const LayerStats& s : r.layers) {
    r.weights_original += s.weights_original;
    r.weights_compressed += s.weights_compressed;
    r.mults_original += s.mults_original;
    r.mults_compressed += s.mults_compressed;
    r.fmap_original += s.fmap_original;
    r.fmap_compressed += s.fmap_compressed;
  }
  r.r_c = ratio(r.weights_original, r.weights_compressed);
  r.r_s = ratio(r.mults_original, r.mults_compressed);
  r.r_f = ratio(r.fmap_original, r.fmap_compressed);
}

}  // namespace

LayerRatios layer_ratios(const MaskLayout& layout, std::span<const int> counts,
                         std::size_t i) {
  if (i < 1 || i > layout.layer_count()) {
    fail(ErrorCode::invalid_argument, "layer index must lie in [1, p]");
  }
  if (counts.size() != layout.layer_count() + 1) {
    fail(ErrorCode::layout, "counts must have p+1 entries");
  }
  const double n_prev = i == 1 ? layout.input_channels()
                               : layout.layer(i - 2).filters;
  const double n_cur = layout.layer(i - 1).filters;
  const double keep = double(counts[i - 1]) * counts[i];
  LayerRatios r;
  r.r_c = r.r_s = n_prev * n_cur / keep;
  r.r_f = n_cur / counts[i];
  return r;
}

CompressionReport overall_report(const NetworkSpec& spec,
                                 std::span<const int> counts,
                                 Accuracies accuracies) {
  const NetworkSpec small = compact_spec(spec, counts);
  const auto out = spec.output_dims();
  const auto convs = spec.conv_layers();
  CompressionReport r;
  for (std::size_t k = 0; k < convs.size(); ++k) {
    const std::size_t li = convs[k];
    const LayerSpec& a = spec.layers[li];
    const LayerSpec& b = small.layers[li];
    LayerStats s;
    s.name = "conv" + std::to_string(k + 1);
    s.original = {a.filter_height, a.filter_width, a.in_channels, a.out_filters};
    s.compressed = {b.filter_height, b.filter_width, b.in_channels, b.out_filters};
    s.out_height = out[li].height;
    s.out_width = out[li].width;
    auto entries = [](const Dims3& d, int c) {
      return std::size_t(d.height) * std::size_t(d.width) * std::size_t(c);
    };
    s.fmap_original = entries(out[li], a.out_filters);
    s.fmap_compressed = entries(out[li], b.out_filters);
    // Pooling stages that follow before the next conv; relu and batchnorm
    // run in place.
    const std::size_t stop = k + 1 < convs.size() ? convs[k + 1] : spec.layers.size();
    for (std::size_t j = li + 1; j < stop; ++j) {
      if (spec.layers[j].kind != LayerKind::maxpool) continue;
      s.fmap_original += entries(out[j], a.out_filters);
      s.fmap_compressed += entries(out[j], b.out_filters);
    }
    finish_layer(s);
    r.layers.push_back(std::move(s));
  }
  finish_totals(r);
  const auto extra = [](const NetworkSpec& sp) {
    std::size_t n = 0;
    int channels = sp.input.channels;
    for (const LayerSpec& l : sp.layers) {
      if (l.kind == LayerKind::conv) {
        channels = l.out_filters;
        n += std::size_t(channels);
      } else if (l.kind == LayerKind::batchnorm) {
        n += 4 * std::size_t(channels);
      }
    }
    return n;
  };
  r.extra_original = extra(spec);
  r.extra_compressed = extra(small);
  r.accuracy_before = accuracies.before;
  r.accuracy_after = accuracies.after;
  return r;
}

CompressionReport overall_report(const TrainedNetwork& net,
                                 const Individual& ind, Accuracies accuracies) {
  if (!(MaskLayout::from_spec(net.spec()) == ind.layout())) {
    fail(ErrorCode::layout, "individual does not match the network layout");
  }
  return overall_report(net.spec(), surviving_counts(ind), accuracies);
}

CompressionReport geometry_report(const std::vector<GeometryLayer>& layers) {
  CompressionReport r;
  for (const GeometryLayer& g : layers) {
    LayerStats s;
    s.name = g.name;
    s.original = g.original;
    s.compressed = g.compressed;
    s.out_height = g.out_height;
    s.out_width = g.out_width;
    const std::size_t pixels = std::size_t(g.out_height) * std::size_t(g.out_width);
    s.fmap_original = pixels * std::size_t(g.original.filters);
    s.fmap_compressed = pixels * std::size_t(g.compressed.filters);
    finish_layer(s);
    r.layers.push_back(std::move(s));
  }
  finish_totals(r);
  return r;
}

std::string emit_table(const CompressionReport& report) {
  std::string out;
  char buf[256];
  auto mb = [](std::size_t weights) {
    return double(weights) * kBytesPerValue / kBytesPerMB;
  };
  std::snprintf(buf, sizeof buf, "%-8s %-18s %12s %-18s %12s %9s\n", "layer",
                "weights", "memory", "new weights", "memory", "r_c");
  out += buf;
  for (const LayerStats& s : report.layers) {
    std::snprintf(buf, sizeof buf, "%-8s %-18s %9.4f MB %-18s %9.4f MB %8.2fx\n",
                  s.name.c_str(), dims(s.original).c_str(),
                  mb(s.weights_original), dims(s.compressed).c_str(),
                  mb(s.weights_compressed), s.r_c);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-8s %-18zu %9.4f MB %-18zu %9.4f MB %8.2fx\n",
                "total", report.weights_original, report.memory_original_mb(),
                report.weights_compressed, report.memory_compressed_mb(),
                report.r_c);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "multiplications %zu -> %zu, r_s = %.2f\n", report.mults_original,
                report.mults_compressed, report.r_s);
  out += buf;
  std::snprintf(buf, sizeof buf,
                "feature-map entries (conv+pool) %zu -> %zu (%.4f MB -> %.4f "
                "MB), r_f = %.2f\n",
                report.fmap_original, report.fmap_compressed,
                report.fmap_original_mb(), report.fmap_compressed_mb(),
                report.r_f);
  out += buf;
  if (report.extra_original > 0) {
    std::snprintf(buf, sizeof buf,
                  "bias/batchnorm values not counted above: %zu -> %zu\n",
                  report.extra_original, report.extra_compressed);
    out += buf;
  }
  if (report.accuracy_before || report.accuracy_after) {
    out += "accuracy";
    if (report.accuracy_before) {
      std::snprintf(buf, sizeof buf, " before %.2f%%", 100.0 * *report.accuracy_before);
      out += buf;
    }
    if (report.accuracy_after) {
      std::snprintf(buf, sizeof buf, " after %.2f%%", 100.0 * *report.accuracy_after);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string emit_jsonl(const CompressionReport& report) {
  std::string out;
  auto geometry = [](const ConvGeometry& g) {
    return nlohmann::ordered_json::array({g.height, g.width, g.in_channels, g.filters});
  };
  for (const LayerStats& s : report.layers) {
    nlohmann::ordered_json j;
    j["record"] = "layer";
    j["name"] = s.name;
    j["original"] = geometry(s.original);
    j["compressed"] = geometry(s.compressed);
    j["output"] = {s.out_height, s.out_width};
    j["weights"] = {s.weights_original, s.weights_compressed};
    j["multiplications"] = {s.mults_original, s.mults_compressed};
    j["feature_map_entries"] = {s.fmap_original, s.fmap_compressed};
    j["r_c"] = s.r_c;
    j["r_s"] = s.r_s;
    j["r_f"] = s.r_f;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json t;
  t["record"] = "total";
  t["weights"] = {report.weights_original, report.weights_compressed};
  t["multiplications"] = {report.mults_original, report.mults_compressed};
  t["feature_map_entries"] = {report.fmap_original, report.fmap_compressed};
  t["memory_mb"] = {report.memory_original_mb(), report.memory_compressed_mb()};
  t["extra_parameters"] = {report.extra_original, report.extra_compressed};
  t["r_c"] = report.r_c;
  t["r_s"] = report.r_s;
  t["r_f"] = report.r_f;
  if (report.accuracy_before) t["accuracy_before"] = *report.accuracy_before;
  if (report.accuracy_after) t["accuracy_after"] = *report.accuracy_after;
  out += t.dump() + "\n";
  return out;
}

namespace {

void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            std::streamsize(pixels.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> export_filters(
    const TrainedNetwork& net, std::size_t layer,
    const std::filesystem::path& dir) {
  const auto convs = net.spec().conv_layers();
  if (layer < 1 || layer > convs.size()) {
    fail(ErrorCode::invalid_argument, "conv layer " + std::to_string(layer) +
                                          " does not exist");
  }
  const Tensor& w = net.params()[convs[layer - 1]].weight;
  const std::size_t h = w.dim(0), wd = w.dim(1), c = w.dim(2), n = w.dim(3);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  for (std::size_t f = 0; f < n; ++f) {
    float lo = w[f], hi = w[f];
    for (std::size_t i = f; i < w.size(); i += n) {
      lo = std::min(lo, w[i]);
      hi = std::max(hi, w[i]);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::vector<std::uint8_t> pixels(h * wd);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < wd; ++x) {
          const float v = w[((y * wd + x) * c + ch) * n + f];
          const double t = hi > lo ? (double(v) - lo) / (double(hi) - lo) : 0.5;
          pixels[y * wd + x] = std::uint8_t(std::lround(t * 255.0));
        }
      }
      std::string name = "layer_" + std::to_string(layer) + "_filter_" +
                         std::to_string(f + 1);
      if (c > 1) name += "_channel_" + std::to_string(ch + 1);
      const auto path = dir / (name + ".pgm");
      write_pgm(path, int(wd), int(h), pixels);
      written.push_back(path);
    }
  }
  return written;
}

double mean_pairwise_distance(const Tensor& weight,
                              std::span<const int> filters) {
  if (weight.rank() != 4) fail(ErrorCode::shape, "filters must be rank 4");
  const std::size_t n = weight.dim(3);
  const std::size_t per = weight.size() / n;
  std::vector<int> pick(filters.begin(), filters.end());
  if (pick.empty()) {
    pick.resize(n);
    std::iota(pick.begin(), pick.end(), 0);
  }
  if (pick.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < pick.size(); ++a) {
    for (std::size_t b = a + 1; b < pick.size(); ++b) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < per; ++k) {
        const double d = double(weight[k * n + std::size_t(pick[a])]) -
                         weight[k * n + std::size_t(pick[b])];
        d2 += d * d;
      }
      total += std::sqrt(d2);
      ++pairs;
    }
  }
  return total / double(pairs);
}

}  // namespace ecs
