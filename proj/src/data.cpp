#include "gradnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "gradnet/errors.hpp"

namespace gradnet {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

std::string hex_bytes(const std::vector<unsigned char>& bytes, std::size_t count) {
  std::string out;
  char buf[4];
  for (std::size_t i = 0; i < std::min(count, bytes.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%02x", bytes[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

void check_magic(const std::vector<unsigned char>& bytes, std::uint32_t expected,
                 const std::filesystem::path& path) {
  if (bytes.size() < 4 || read_be32(bytes, 0) != expected) {
    char want[16];
    std::snprintf(want, sizeof want, "%08x", expected);
    throw FormatError(path.string() + ": bad IDX magic, expected " + want + ", found bytes [" +
                      hex_bytes(bytes, 4) + "]");
  }
}

}  // namespace

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw DimensionError("dataset images must be N x C x H x W, got " +
                         to_string(images.shape()));
  }
  if (images.dim(0) != labels.size()) {
    throw DimensionError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw IndexError("label " + std::to_string(l) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

Tensor load_idx_images(const std::filesystem::path& images_path) {
  const auto bytes = read_file(images_path);
  check_magic(bytes, kIdxImagesMagic, images_path);
  if (bytes.size() < 16) {
    throw FormatError(images_path.string() + ": truncated IDX header (length " +
                      std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t n = read_be32(bytes, 4);
  const std::size_t rows = read_be32(bytes, 8);
  const std::size_t cols = read_be32(bytes, 12);
  const std::size_t expected = 16 + n * rows * cols;
  if (bytes.size() != expected) {
    throw FormatError(images_path.string() + ": length " + std::to_string(bytes.size()) +
                      " bytes, header implies " + std::to_string(expected));
  }
  Tensor images(Shape{n, 1, rows, cols});
  auto dst = images.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = bytes[16 + i] / 255.0;
  return images;
}

std::vector<int> load_idx_labels(const std::filesystem::path& labels_path) {
  const auto bytes = read_file(labels_path);
  check_magic(bytes, kIdxLabelsMagic, labels_path);
  if (bytes.size() < 8) {
    throw FormatError(labels_path.string() + ": truncated IDX header (length " +
                      std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() != 8 + n) {
    throw FormatError(labels_path.string() + ": length " + std::to_string(bytes.size()) +
                      " bytes, header implies " + std::to_string(8 + n));
  }
  return std::vector<int>(bytes.begin() + 8, bytes.end());
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t num_classes) {
  Dataset ds;
  ds.images = load_idx_images(images_path);
  ds.labels = load_idx_labels(labels_path);
  ds.num_classes = num_classes;
  ds.validate();
  return ds;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  dataset.validate();
  const Shape& s = dataset.images.shape();
  if (s[1] != 1) throw DimensionError("IDX images must have one channel");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw Error("cannot write " + images_path.string());
  write_be32(img, kIdxImagesMagic);
  write_be32(img, static_cast<std::uint32_t>(s[0]));
  write_be32(img, static_cast<std::uint32_t>(s[2]));
  write_be32(img, static_cast<std::uint32_t>(s[3]));
  std::vector<char> pixels(dataset.images.size());
  auto src = dataset.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const long v = std::lround(std::clamp(src[i], 0.0, 1.0) * 255.0);
    pixels[i] = static_cast<char>(static_cast<unsigned char>(v));
  }
  img.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw Error("cannot write " + labels_path.string());
  write_be32(lab, kIdxLabelsMagic);
  write_be32(lab, static_cast<std::uint32_t>(dataset.labels.size()));
  for (int l : dataset.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
  if (!img || !lab) throw Error("write failed for IDX dataset");
}

Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths) {
  std::vector<double> pixels;
  std::vector<int> labels;
  for (const auto& path : paths) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a positive multiple of the 3073-byte CIFAR-10 record");
    }
    const std::size_t records = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const unsigned char* rec = bytes.data() + r * kCifarRecord;
      if (rec[0] >= 10) {
        throw FormatError(path.string() + ": record " + std::to_string(r) + " has label byte " +
                          std::to_string(rec[0]));
      }
      labels.push_back(rec[0]);
      for (std::size_t i = 0; i < kCifarPixels; ++i) pixels.push_back(rec[1 + i] / 255.0);
    }
  }
  Dataset ds;
  const std::size_t n = labels.size();
  ds.images = Tensor(Shape{n, 3, kCifarSide, kCifarSide}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = 10;
  return ds;
}

Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
  if (k < 2 || n < k) throw ConfigError("synth_blobs needs n >= k >= 2");
  if (d == 0) throw ConfigError("synth_blobs needs d >= 1");
  Rng rng{seed, 0xb10b5};
  constexpr double kSigma = 1.0;
  constexpr double kMinSeparation = 6.0 * kSigma;
  // Means are drawn uniformly from a box large enough that rejection
  // sampling terminates quickly even in one dimension.
  const double half_width = kMinSeparation * static_cast<double>(k);
  std::vector<std::vector<double>> means;
  while (means.size() < k) {
    std::vector<double> m(d);
    for (double& v : m) v = (2.0 * rng.uniform() - 1.0) * half_width;
    bool far = true;
    for (const auto& other : means) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += (m[j] - other[j]) * (m[j] - other[j]);
      far = far && std::sqrt(sq) >= kMinSeparation;
    }
    if (far) means.push_back(std::move(m));
  }
  std::vector<double> values(n * d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % k);
    for (std::size_t j = 0; j < d; ++j) {
      values[i * d + j] = means[static_cast<std::size_t>(labels[i])][j] + kSigma * rng.normal();
    }
  }
  // One global affine map into [0, 1] keeps the geometry (ratios of
  // distances) intact.
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double offset = *lo;
  const double span = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
  for (double& v : values) v = std::clamp((v - offset) / span, 0.0, 1.0);

  Dataset ds;
  ds.images = Tensor(Shape{n, 1, 1, d}, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = k;
  return ds;
}

Tensor augment_hflip(const Tensor& images, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("flip probability must be in [0, 1]");
  if (images.rank() != 4) {
    throw DimensionError("augment_hflip expects N x C x H x W, got " + to_string(images.shape()));
  }
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensor out = images;
  for (std::size_t s = 0; s < n; ++s) {
    // Draw for every image so the stream position does not depend on p.
    const bool flip = rng.uniform() < p;
    if (!flip) continue;
    auto dst = out.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        double* row = dst.data() + ((s * c + ch) * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan,
                                                    std::uint64_t epoch) {
  if (plan.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng{plan.seed, 0x5ff1e, epoch};
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t end = std::min(n, start + plan.batch_size);
    if (plan.drop_last && end - start < plan.batch_size) break;
    out.emplace_back(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(end));
  }
  return out;
}

Batch gather(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  const Shape sample = dataset.sample_shape();
  const std::size_t stride = numel(sample);
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Batch b;
  b.images = Tensor(shape);
  b.labels.reserve(indices.size());
  auto dst = b.images.mutable_data();
  auto src = dataset.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(src.begin() + static_cast<long>(indices[i] * stride), stride,
                dst.begin() + static_cast<long>(i * stride));
    b.labels.push_back(dataset.labels[indices[i]]);
  }
  return b;
}

std::vector<Batch> batches(const Dataset& dataset, const BatchPlan& plan, std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(dataset.size(), plan, epoch)) {
    out.push_back(gather(dataset, idx));
  }
  return out;
}

Dataset take(const Dataset& dataset, std::size_t n) {
  n = std::min(n, dataset.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Batch b = gather(dataset, idx);
  return Dataset{std::move(b.images), std::move(b.labels), dataset.num_classes, dataset.split};
}

std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must be in (0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto val_n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (val_n == 0 || val_n >= n) throw ConfigError("validation split leaves an empty partition");
  std::vector<std::size_t> head(n - val_n), tail(val_n);
  std::iota(head.begin(), head.end(), std::size_t{0});
  std::iota(tail.begin(), tail.end(), n - val_n);
  Batch a = gather(dataset, head);
  Batch b = gather(dataset, tail);
  return {Dataset{std::move(a.images), std::move(a.labels), dataset.num_classes, Split::Train},
          Dataset{std::move(b.images), std::move(b.labels), dataset.num_classes, Split::Val}};
}

}  // namespace gradnet
