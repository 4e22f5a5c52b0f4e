#pragma once

#include "llp/bagset.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace llp {

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset test;
};

/// Isotropic 2-D Gaussian blobs with class centers evenly spaced on a circle.
struct BlobsSpec {
  int num_classes = 4;
  double radius = 0.6;
  double stddev = 0.1;
};

LabeledDataset make_blobs(std::size_t size, const BlobsSpec& spec, std::uint64_t seed,
                          const std::string& name = "blobs");

/// Bayes-optimal rule for equal-prior isotropic blobs: nearest class center.
std::vector<int> blobs_bayes_predict(const Matrix& points, const BlobsSpec& spec);

/// Reads IDX image/label files (MNIST layout); pixels mapped to [-1, 1].
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::optional<std::size_t> limit, const std::string& name);

/// Reads CIFAR-10 style binary batches (1 label byte + 3072 CHW pixel bytes).
LabeledDataset load_cifar_binary(const std::vector<std::filesystem::path>& batches,
                                 std::optional<std::size_t> limit, const std::string& name);

/// Resolves a dataset name to train/test splits.
///
/// Recognized names: `blobs`, `blobs-<n>` (n training points), `mnist`,
/// `mnist-<n>` (first n training images), `cifar10`. A `:<a>,<b>` suffix selects
/// the binary subset of classes a and b. Image data is read below the
/// directory named by `LLP_DATA_DIR` (`mnist/` and `cifar-10-batches-bin/`).
/// Unknown names or absent files raise a resolution error.
DatasetSplits resolve_dataset(const std::string& name);

/// Default discriminator/generator architecture names for a dataset name.
std::string default_architecture(const std::string& dataset_name);

}  // namespace llp
