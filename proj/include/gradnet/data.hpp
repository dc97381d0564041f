#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gradnet/rng.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

enum class Split { Train, Val, Test };

/// Labelled images, N x C x H x W with pixel values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 10;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  /// Per-sample shape (C, H, W).
  Shape sample_shape() const;
  /// Throws if counts disagree or a label is out of range.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255; images become N x 1 x H x W.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::size_t num_classes = 10);

/// Reads only an IDX image file.
Tensor load_idx_images(const std::filesystem::path& images_path);
std::vector<int> load_idx_labels(const std::filesystem::path& labels_path);

/// Writes `dataset` as IDX. Pixels are stored as round(255 * value); single
/// channel only.
void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Reads CIFAR-10 binary batches: 3073-byte records of one label byte
/// followed by 32x32 R, G, B planes.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

/// k well-separated Gaussian clusters in d dimensions (cluster means at
/// least 6 standard deviations apart), scaled into [0, 1]. Images are
/// N x 1 x 1 x d. Labels cycle through the clusters so every cluster gets
/// floor(n / k) or ceil(n / k) points.
Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed);

/// Mirrors each image across its vertical axis independently with
/// probability p.
Tensor augment_hflip(const Tensor& images, double p, Rng& rng);

struct BatchPlan {
  std::size_t batch_size = 500;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

/// Per-epoch shuffled partition of sample indices; the permutation depends
/// only on (plan.seed, epoch).
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, const BatchPlan& plan,
                                                    std::uint64_t epoch);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const Dataset& dataset, const std::vector<std::size_t>& indices);

std::vector<Batch> batches(const Dataset& dataset, const BatchPlan& plan, std::uint64_t epoch);

/// First n samples of `dataset` in stored order.
Dataset take(const Dataset& dataset, std::size_t n);

/// Splits off the last round(fraction * N) samples, in stored order, as the
/// validation set.
std::pair<Dataset, Dataset> split_tail(const Dataset& dataset, double fraction);

}  // namespace gradnet
