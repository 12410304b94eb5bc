#include "ecs/dataset.hpp"

#include <array>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace ecs {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;  // 2051
constexpr std::uint32_t kLabelsMagic = 0x00000801;  // 2049

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  std::uint32_t u32() {
    require(4);
    const std::uint32_t v = (std::uint32_t(bytes_[pos_]) << 24) |
                            (std::uint32_t(bytes_[pos_ + 1]) << 16) |
                            (std::uint32_t(bytes_[pos_ + 2]) << 8) |
                            std::uint32_t(bytes_[pos_ + 3]);
    pos_ += 4;
    return v;
  }

  const unsigned char* take(std::size_t n) {
    require(n);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t offset() const { return pos_; }
  const std::string& name() const { return name_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorCode::format,
           name_ + ": truncated at byte offset " + std::to_string(pos_) +
               " (need " + std::to_string(n) + " bytes, file has " +
               std::to_string(bytes_.size()) + ")");
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

void expect_magic(ByteReader& r, std::uint32_t want) {
  const std::size_t at = r.offset();
  const std::uint32_t got = r.u32();
  if (got != want) {
    fail(ErrorCode::format, r.name() + ": wrong magic " + std::to_string(got) +
                                " at byte offset " + std::to_string(at) +
                                ", expected " + std::to_string(want));
  }
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8),
                              char(v)};
  out.write(b.data(), 4);
}

}  // namespace

Dims3 LabeledDataset::dims() const {
  if (images.rank() != 4) return {};
  return {int(images.dim(1)), int(images.dim(2)), int(images.dim(3))};
}

Tensor LabeledDataset::gather(std::span<const std::size_t> indices) const {
  const Dims3 d = dims();
  const std::size_t per = std::size_t(d.height) * d.width * d.channels;
  Tensor out({indices.size(), std::size_t(d.height), std::size_t(d.width),
              std::size_t(d.channels)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) {
      fail(ErrorCode::invalid_argument,
           "sample index " + std::to_string(indices[i]) + " out of range");
    }
    const float* src = images.data() + indices[i] * per;
    std::copy(src, src + per, out.data() + i * per);
  }
  return out;
}

std::vector<int> LabeledDataset::gather_labels(
    std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices,
                                      std::string new_name) const {
  if (indices.empty()) fail(ErrorCode::invalid_argument, "empty subset");
  return {gather(indices), gather_labels(indices), std::move(new_name)};
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) fail(ErrorCode::shape, name + ": images must be rank 4");
  if (images.dim(0) != labels.size()) {
    fail(ErrorCode::shape, name + ": image count " +
                               std::to_string(images.dim(0)) + " != label count " +
                               std::to_string(labels.size()));
  }
  for (float v : images.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      fail(ErrorCode::numeric, name + ": pixel outside [0,1]");
    }
  }
  for (int y : labels) {
    if (y < 0) fail(ErrorCode::invalid_argument, name + ": negative label");
  }
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);
  ByteReader ri(image_bytes, images_path.string());
  ByteReader rl(label_bytes, labels_path.string());

  expect_magic(ri, kImagesMagic);
  const std::uint32_t count = ri.u32();
  const std::uint32_t rows = ri.u32();
  const std::uint32_t cols = ri.u32();
  expect_magic(rl, kLabelsMagic);
  const std::size_t count_at = rl.offset();
  const std::uint32_t label_count = rl.u32();
  if (label_count != count) {
    fail(ErrorCode::format,
         rl.name() + ": label count " + std::to_string(label_count) +
             " at byte offset " + std::to_string(count_at) +
             " does not match image count " + std::to_string(count));
  }
  if (count == 0 || rows == 0 || cols == 0) {
    fail(ErrorCode::format, ri.name() + ": zero dimension in header");
  }
  const std::size_t per = std::size_t(rows) * cols;
  const unsigned char* pixels = ri.take(std::size_t(count) * per);
  const unsigned char* raw_labels = rl.take(count);

  LabeledDataset out;
  out.name = images_path.filename().string();
  out.images = Tensor({count, rows, cols, 1});
  float* dst = out.images.data();
  for (std::size_t i = 0; i < std::size_t(count) * per; ++i) {
    dst[i] = float(pixels[i]) / 255.0f;
  }
  out.labels.assign(raw_labels, raw_labels + count);
  return out;
}

void save_idx(const LabeledDataset& dataset,
              const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  const Dims3 d = dataset.dims();
  if (d.channels != 1) {
    fail(ErrorCode::invalid_argument, "IDX export supports one channel only");
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) fail(ErrorCode::io, "cannot write IDX files");
  put_u32(img, kImagesMagic);
  put_u32(img, std::uint32_t(dataset.size()));
  put_u32(img, std::uint32_t(d.height));
  put_u32(img, std::uint32_t(d.width));
  for (float v : dataset.images.values()) {
    img.put(char(static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  put_u32(lab, kLabelsMagic);
  put_u32(lab, std::uint32_t(dataset.size()));
  for (int y : dataset.labels) lab.put(char(static_cast<unsigned char>(y)));
  if (!img || !lab) fail(ErrorCode::io, "short write on IDX files");
}

LabeledDataset synthetic_blobs(int classes, int per_class, Dims3 dims,
                               std::uint64_t seed, double spread) {
  if (classes < 2) fail(ErrorCode::invalid_argument, "need at least 2 classes");
  if (per_class < 1) fail(ErrorCode::invalid_argument, "per_class must be >= 1");
  const std::size_t per = std::size_t(dims.height) * dims.width * dims.channels;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> center_dist(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, float(spread));
  std::vector<std::vector<float>> centers(classes, std::vector<float>(per));
  for (auto& c : centers) {
    for (float& v : c) v = center_dist(rng);
  }
  const std::size_t n = std::size_t(classes) * per_class;
  LabeledDataset out;
  out.name = "blobs";
  out.images = Tensor({n, std::size_t(dims.height), std::size_t(dims.width),
                       std::size_t(dims.channels)});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = int(i % std::size_t(classes));
    out.labels[i] = label;
    float* dst = out.images.data() + i * per;
    for (std::size_t k = 0; k < per; ++k) {
      dst[k] = std::clamp(centers[label][k] + noise(rng), 0.0f, 1.0f);
    }
  }
  return out;
}

std::vector<std::size_t> sample_subset(std::span<const std::size_t> train,
                                       std::size_t size, std::uint64_t seed) {
  if (size > train.size()) {
    fail(ErrorCode::invalid_argument,
         "subset size " + std::to_string(size) + " exceeds " +
             std::to_string(train.size()) + " available samples");
  }
  std::vector<std::size_t> out;
  out.reserve(size);
  std::mt19937_64 rng(seed);
  std::sample(train.begin(), train.end(), std::back_inserter(out), size, rng);
  return out;
}

SplitPlan sample_finetune_subset(std::size_t dataset_size, std::size_t holdout,
                                 std::size_t size, std::uint64_t seed) {
  if (holdout >= dataset_size) {
    fail(ErrorCode::invalid_argument, "holdout leaves no training samples");
  }
  SplitPlan plan;
  plan.seed = seed;
  plan.train.resize(dataset_size - holdout);
  std::iota(plan.train.begin(), plan.train.end(), std::size_t{0});
  plan.eval.resize(holdout);
  std::iota(plan.eval.begin(), plan.eval.end(), dataset_size - holdout);
  plan.finetune = sample_subset(plan.train, size, seed);
  return plan;
}

}  // namespace ecs
