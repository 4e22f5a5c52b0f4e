#include "llp/datasets.hpp"

#include "llp/error.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

namespace llp {

namespace {

constexpr std::uint64_t kBlobsTrainSeed = 2019;
constexpr std::uint64_t kBlobsTestSeed = 2020;
constexpr std::size_t kBlobsDefaultSize = 4000;
constexpr std::size_t kBlobsTestSize = 1000;

Eigen::Vector2d blob_center(int k, const BlobsSpec& spec) {
  const double angle = 2.0 * std::numbers::pi * k / spec.num_classes;
  return {spec.radius * std::cos(angle), spec.radius * std::sin(angle)};
}

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::filesystem::path data_dir() {
  const char* env = std::getenv("LLP_DATA_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::path("data");
}

std::optional<std::size_t> size_suffix(const std::string& name, const std::string& base) {
  if (name == base) return std::nullopt;
  const auto prefix = base + "-";
  if (name.rfind(prefix, 0) != 0) {
    throw Error(ErrorKind::Resolution, "unknown dataset " + name);
  }
  try {
    return static_cast<std::size_t>(std::stoull(name.substr(prefix.size())));
  } catch (const std::exception&) {
    throw Error(ErrorKind::Resolution, "bad size suffix in dataset name " + name);
  }
}

}  // namespace

LabeledDataset make_blobs(std::size_t size, const BlobsSpec& spec, std::uint64_t seed,
                          const std::string& name) {
  LabeledDataset out;
  out.name = name;
  out.num_classes = spec.num_classes;
  out.shape = Shape{1, 1, 2};
  out.features.resize(static_cast<Eigen::Index>(size), 2);
  out.labels.resize(size);
  Rng rng(seed);
  for (std::size_t i = 0; i < size; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(spec.num_classes));
    const auto center = blob_center(k, spec);
    const auto row = static_cast<Eigen::Index>(i);
    out.features(row, 0) = center.x() + spec.stddev * rng.normal();
    out.features(row, 1) = center.y() + spec.stddev * rng.normal();
    out.labels[i] = k;
  }
  return out;
}

std::vector<int> blobs_bayes_predict(const Matrix& points, const BlobsSpec& spec) {
  std::vector<int> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::Vector2d x(points(i, 0), points(i, 1));
    int best = 0;
    double best_dist = (x - blob_center(0, spec)).squaredNorm();
    for (int k = 1; k < spec.num_classes; ++k) {
      const double d = (x - blob_center(k, spec)).squaredNorm();
      if (d < best_dist) {
        best_dist = d;
        best = k;
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::optional<std::size_t> limit, const std::string& name) {
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img || !lab) {
    throw Error(ErrorKind::Resolution, "missing IDX files under " + images.parent_path().string());
  }
  if (read_be32(img) != 0x00000803 || read_be32(lab) != 0x00000801) {
    throw ParseError(0, "bad IDX magic number in " + images.string());
  }
  std::size_t count = read_be32(img);
  const auto rows = static_cast<int>(read_be32(img));
  const auto cols = static_cast<int>(read_be32(img));
  if (read_be32(lab) != count) throw ParseError(0, "IDX image and label counts differ");
  if (limit) count = std::min(count, *limit);

  LabeledDataset out;
  out.name = name;
  out.num_classes = 10;
  out.shape = Shape{1, rows, cols};
  out.features.resize(static_cast<Eigen::Index>(count), rows * cols);
  out.labels.resize(count);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(rows * cols));
  for (std::size_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    char y = 0;
    lab.read(&y, 1);
    if (!img || !lab) throw ParseError(0, "truncated IDX file");
    for (std::size_t p = 0; p < pixels.size(); ++p) {
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = pixels[p] / 127.5 - 1.0;
    }
    out.labels[i] = static_cast<unsigned char>(y);
  }
  return out;
}

LabeledDataset load_cifar_binary(const std::vector<std::filesystem::path>& batches,
                                 std::optional<std::size_t> limit, const std::string& name) {
  constexpr int kPixels = 3 * 32 * 32;
  std::vector<std::vector<unsigned char>> records;
  for (const auto& path : batches) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Resolution, "missing CIFAR batch " + path.string());
    std::vector<unsigned char> record(kPixels + 1);
    while (in.read(reinterpret_cast<char*>(record.data()), kPixels + 1)) {
      records.push_back(record);
      if (limit && records.size() >= *limit) break;
    }
    if (limit && records.size() >= *limit) break;
  }
  LabeledDataset out;
  out.name = name;
  out.num_classes = 10;
  out.shape = Shape{3, 32, 32};
  out.features.resize(static_cast<Eigen::Index>(records.size()), kPixels);
  out.labels.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.labels[i] = records[i][0];
    for (int p = 0; p < kPixels; ++p) {
      out.features(static_cast<Eigen::Index>(i), p) = records[i][static_cast<std::size_t>(p) + 1] / 127.5 - 1.0;
    }
  }
  return out;
}

DatasetSplits resolve_dataset(const std::string& name) {
  const auto colon = name.find(':');
  if (colon != std::string::npos) {
    const std::string base = name.substr(0, colon);
    const std::string pair = name.substr(colon + 1);
    const auto comma = pair.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::Resolution, "bad binary suffix in " + name);
    int a = 0;
    int b = 0;
    try {
      a = std::stoi(pair.substr(0, comma));
      b = std::stoi(pair.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Resolution, "bad binary suffix in " + name);
    }
    auto splits = resolve_dataset(base);
    return {select_binary_subset(splits.train, a, b), select_binary_subset(splits.test, a, b)};
  }

  if (name.rfind("blobs", 0) == 0) {
    const auto size = size_suffix(name, "blobs").value_or(kBlobsDefaultSize);
    return {make_blobs(size, BlobsSpec{}, kBlobsTrainSeed, name),
            make_blobs(kBlobsTestSize, BlobsSpec{}, kBlobsTestSeed, name + "/test")};
  }
  if (name.rfind("mnist", 0) == 0) {
    const auto limit = size_suffix(name, "mnist");
    const auto dir = data_dir() / "mnist";
    return {load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", limit, name),
            load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", std::nullopt,
                     name + "/test")};
  }
  if (name.rfind("cifar10", 0) == 0) {
    const auto limit = size_suffix(name, "cifar10");
    const auto dir = data_dir() / "cifar-10-batches-bin";
    std::vector<std::filesystem::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    return {load_cifar_binary(train, limit, name),
            load_cifar_binary({dir / "test_batch.bin"}, std::nullopt, name + "/test")};
  }
  throw Error(ErrorKind::Resolution, "unknown dataset " + name);
}

std::string default_architecture(const std::string& dataset_name) {
  if (dataset_name.rfind("blobs", 0) == 0) return "blobs";
  if (dataset_name.rfind("mnist", 0) == 0) return "mnist";
  if (dataset_name.rfind("cifar10", 0) == 0) return "cifar10";
  throw Error(ErrorKind::Resolution, "no default architecture for dataset " + dataset_name);
}

}  // namespace llp
