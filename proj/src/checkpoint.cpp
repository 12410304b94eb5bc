#include "ecs/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ecs {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

namespace {

constexpr const char* kMagic = "ECS-CHECKPOINT";

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos),
                uInt(n));
    pos += n;
  }
  return std::uint32_t(crc);
}

std::vector<std::string> split_words(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

int to_int(const std::string& s, const std::string& context) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::format, context + ": bad integer '" + s + "'");
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* tensor_names[] = {"weight", "bias", "running_mean", "running_var"};

}  // namespace

std::string encode_container(const CheckpointContainer& c) {
  std::string out;
  out += kMagic;
  out += "\nversion " + std::to_string(kCheckpointVersion) + "\nkind " +
         c.kind + "\n";
  for (const auto& line : c.header) {
    if (line.find('\n') != std::string::npos) {
      fail(ErrorCode::invalid_argument, "header line contains a newline");
    }
    out += line + "\n";
  }
  out += "payload " + std::to_string(c.payload.size()) + "\n";
  out += c.payload;
  const std::uint32_t crc = crc32_of(out);
  for (int i = 0; i < 4; ++i) out.push_back(char((crc >> (8 * i)) & 0xff));
  return out;
}

CheckpointContainer decode_container(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&](const char* what) {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) {
      fail(ErrorCode::format, std::string("truncated checkpoint header (") +
                                  what + ") at byte " + std::to_string(pos));
    }
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line("magic") != kMagic) {
    fail(ErrorCode::format, "not an ECS checkpoint");
  }
  const auto version = split_words(next_line("version"));
  if (version.size() != 2 || version[0] != "version") {
    fail(ErrorCode::format, "missing version line");
  }
  if (to_int(version[1], "version") != kCheckpointVersion) {
    fail(ErrorCode::version, "checkpoint version " + version[1] +
                                 ", expected " +
                                 std::to_string(kCheckpointVersion));
  }
  const auto kind = split_words(next_line("kind"));
  if (kind.size() != 2 || kind[0] != "kind") {
    fail(ErrorCode::format, "missing kind line");
  }
  CheckpointContainer c;
  c.kind = kind[1];
  for (;;) {
    std::string line = next_line("header");
    if (line.rfind("payload ", 0) == 0) {
      std::size_t n = 0;
      try {
        n = std::stoull(line.substr(8));
      } catch (const std::exception&) {
        fail(ErrorCode::format, "bad payload size");
      }
      if (bytes.size() < pos || bytes.size() - pos != n + 4) {
        fail(ErrorCode::format, "payload size " + std::to_string(n) +
                                    " does not match file size " +
                                    std::to_string(bytes.size()));
      }
      c.payload = bytes.substr(pos, n);
      std::uint32_t stored = 0;
      for (int i = 0; i < 4; ++i) {
        stored |= std::uint32_t(static_cast<unsigned char>(bytes[pos + n + i]))
                  << (8 * i);
      }
      if (stored != crc32_of(std::string_view(bytes).substr(0, pos + n))) {
        fail(ErrorCode::checksum, "checkpoint checksum mismatch");
      }
      return c;
    }
    c.header.push_back(std::move(line));
  }
}

void write_container(const std::filesystem::path& path,
                     const CheckpointContainer& c) {
  const std::string bytes = encode_container(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

CheckpointContainer read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

std::string checkpoint_kind(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::string magic, version, kind;
  std::getline(in, magic);
  std::getline(in, version);
  std::getline(in, kind);
  if (magic != kMagic || kind.rfind("kind ", 0) != 0) {
    fail(ErrorCode::format, path.string() + " is not an ECS checkpoint");
  }
  return kind.substr(5);
}

std::vector<std::string> spec_lines(const NetworkSpec& spec) {
  std::vector<std::string> lines;
  lines.push_back("input " + std::to_string(spec.input.height) + " " +
                  std::to_string(spec.input.width) + " " +
                  std::to_string(spec.input.channels));
  lines.push_back("classes " + std::to_string(spec.class_count));
  lines.push_back("layers " + std::to_string(spec.layers.size()));
  for (const LayerSpec& l : spec.layers) {
    std::string line = std::string("layer ") + to_string(l.kind);
    if (l.kind == LayerKind::conv) {
      for (int v : {l.filter_height, l.filter_width, l.in_channels,
                    l.out_filters, l.stride, l.padding}) {
        line += " " + std::to_string(v);
      }
    } else if (l.kind == LayerKind::maxpool) {
      line += " " + std::to_string(l.window) + " " + std::to_string(l.stride);
    }
    lines.push_back(line);
  }
  return lines;
}

NetworkSpec parse_spec_lines(const std::vector<std::string>& lines) {
  NetworkSpec spec;
  std::size_t expected_layers = 0;
  bool have_input = false, have_classes = false, have_count = false;
  for (const auto& line : lines) {
    const auto w = split_words(line);
    if (w.empty()) continue;
    if (w[0] == "input" && w.size() == 4) {
      spec.input = {to_int(w[1], "input"), to_int(w[2], "input"),
                    to_int(w[3], "input")};
      have_input = true;
    } else if (w[0] == "classes" && w.size() == 2) {
      spec.class_count = to_int(w[1], "classes");
      have_classes = true;
    } else if (w[0] == "layers" && w.size() == 2) {
      expected_layers = std::size_t(to_int(w[1], "layers"));
      have_count = true;
    } else if (w[0] == "layer" && w.size() >= 2) {
      const LayerKind kind = layer_kind_from_string(w[1]);
      const std::string ctx = "layer " + std::to_string(spec.layers.size());
      if (kind == LayerKind::conv) {
        if (w.size() != 8) fail(ErrorCode::format, ctx + ": conv needs 6 values");
        spec.layers.push_back(LayerSpec::conv(
            to_int(w[2], ctx), to_int(w[3], ctx), to_int(w[4], ctx),
            to_int(w[5], ctx), to_int(w[6], ctx), to_int(w[7], ctx)));
      } else if (kind == LayerKind::maxpool) {
        if (w.size() != 4) fail(ErrorCode::format, ctx + ": maxpool needs 2 values");
        spec.layers.push_back(
            LayerSpec::maxpool(to_int(w[2], ctx), to_int(w[3], ctx)));
      } else if (kind == LayerKind::relu) {
        spec.layers.push_back(LayerSpec::relu());
      } else if (kind == LayerKind::batchnorm) {
        spec.layers.push_back(LayerSpec::batchnorm());
      } else {
        spec.layers.push_back(LayerSpec::softmax_loss());
      }
    }
  }
  if (!have_input || !have_classes || !have_count) {
    fail(ErrorCode::format, "incomplete network spec in checkpoint header");
  }
  if (spec.layers.size() != expected_layers) {
    fail(ErrorCode::format, "layer count mismatch in checkpoint header");
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const TrainedNetwork& net,
                     const std::filesystem::path& path) {
  net.validate();
  CheckpointContainer c;
  c.kind = "network";
  c.header = spec_lines(net.spec());
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const LayerParams<float>& p = net.params()[i];
    const Tensor* tensors[] = {&p.weight, &p.bias, &p.running_mean,
                               &p.running_var};
    for (int t = 0; t < 4; ++t) {
      if (tensors[t]->empty()) continue;
      std::string line = "tensor " + std::to_string(i) + " " + tensor_names[t];
      for (std::size_t d : tensors[t]->shape()) line += " " + std::to_string(d);
      c.header.push_back(line);
      const auto* bytes = reinterpret_cast<const char*>(tensors[t]->data());
      c.payload.append(bytes, tensors[t]->size() * sizeof(float));
    }
  }
  write_container(path, c);
}

TrainedNetwork load_network(const std::filesystem::path& path) {
  const CheckpointContainer c = read_container(path);
  if (c.kind != "network") {
    fail(ErrorCode::format, path.string() + " holds a " + c.kind +
                                ", not a network");
  }
  std::vector<std::string> spec_part;
  for (const auto& line : c.header) {
    if (line.rfind("tensor ", 0) != 0) spec_part.push_back(line);
  }
  NetworkSpec spec = parse_spec_lines(spec_part);
  ParamSet<float> params(spec.layers.size());
  std::size_t offset = 0;
  for (const auto& line : c.header) {
    if (line.rfind("tensor ", 0) != 0) continue;
    const auto w = split_words(line);
    if (w.size() < 4) fail(ErrorCode::format, "bad tensor line '" + line + "'");
    const std::size_t layer = std::size_t(to_int(w[1], "tensor"));
    if (layer >= params.size()) fail(ErrorCode::format, "tensor layer out of range");
    Shape shape;
    for (std::size_t k = 3; k < w.size(); ++k) {
      const int d = to_int(w[k], "tensor");
      if (d < 1) fail(ErrorCode::format, "tensor extent must be >= 1");
      shape.push_back(std::size_t(d));
    }
    const std::size_t n = shape_size(shape);
    if (offset + n * sizeof(float) > c.payload.size()) {
      fail(ErrorCode::format, "payload shorter than tensor manifest");
    }
    std::vector<float> values(n);
    std::memcpy(values.data(), c.payload.data() + offset, n * sizeof(float));
    offset += n * sizeof(float);
    Tensor t(shape, std::move(values));
    LayerParams<float>& p = params[layer];
    if (w[2] == "weight") p.weight = std::move(t);
    else if (w[2] == "bias") p.bias = std::move(t);
    else if (w[2] == "running_mean") p.running_mean = std::move(t);
    else if (w[2] == "running_var") p.running_var = std::move(t);
    else fail(ErrorCode::format, "unknown tensor '" + w[2] + "'");
  }
  if (offset != c.payload.size()) {
    fail(ErrorCode::format, "payload longer than tensor manifest");
  }
  return TrainedNetwork(std::move(spec), std::move(params));
}

std::string layout_line(const MaskLayout& layout) {
  std::string line = "layout " + std::to_string(layout.input_channels());
  for (const auto& g : layout.layers()) {
    line += " " + std::to_string(g.height) + "x" + std::to_string(g.width) +
            "x" + std::to_string(g.in_channels) + "x" + std::to_string(g.filters);
  }
  return line;
}

MaskLayout parse_layout_line(const std::string& line) {
  const auto w = split_words(line);
  if (w.size() < 3 || w[0] != "layout") {
    fail(ErrorCode::format, "bad layout line '" + line + "'");
  }
  std::vector<ConvGeometry> layers;
  for (std::size_t k = 2; k < w.size(); ++k) {
    int v[4];
    std::istringstream in(w[k]);
    char x1 = 0, x2 = 0, x3 = 0;
    if (!(in >> v[0] >> x1 >> v[1] >> x2 >> v[2] >> x3 >> v[3]) || x1 != 'x' ||
        x2 != 'x' || x3 != 'x' || !in.eof()) {
      fail(ErrorCode::format, "bad layer geometry '" + w[k] + "'");
    }
    layers.push_back({v[0], v[1], v[2], v[3]});
  }
  return MaskLayout(to_int(w[1], "layout"), std::move(layers));
}

void save_checkpoint(const Individual& ind, const std::filesystem::path& path) {
  CheckpointContainer c;
  c.kind = "individual";
  c.header = {layout_line(ind.layout()), "bits " + ind.to_string()};
  write_container(path, c);
}

Individual load_individual(const std::filesystem::path& path) {
  const CheckpointContainer c = read_container(path);
  if (c.kind != "individual") {
    fail(ErrorCode::format, path.string() + " holds a " + c.kind +
                                ", not an individual");
  }
  if (c.header.size() != 2 || c.header[1].rfind("bits ", 0) != 0) {
    fail(ErrorCode::format, "malformed individual checkpoint");
  }
  auto layout = std::make_shared<const MaskLayout>(parse_layout_line(c.header[0]));
  return Individual::parse(layout, c.header[1].substr(5));
}

void save_log_checkpoint(const std::string& jsonl,
                         const std::filesystem::path& path) {
  write_container(path, {"log", {}, jsonl});
}

std::string load_log_checkpoint(const std::filesystem::path& path) {
  CheckpointContainer c = read_container(path);
  if (c.kind != "log") {
    fail(ErrorCode::format, path.string() + " holds a " + c.kind + ", not a log");
  }
  return std::move(c.payload);
}

}  // namespace ecs
