#pragma once

#include "llp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace llp {

/// Fully labeled source data. Labels exist only to build bags and to score
/// test predictions; training code receives a FeatureTable instead.
struct LabeledDataset {
  Matrix features;  ///< one instance per row, values in [-1, 1] for image data
  Shape shape;      ///< per-instance shape of a feature row
  std::vector<int> labels;
  int num_classes = 2;
  std::string name;

  std::size_t size() const { return labels.size(); }
  /// Throws InvalidConfiguration / LabelDomain when the invariants are broken.
  void validate() const;
};

/// Instance features with the labels removed.
struct FeatureTable {
  Matrix features;
  Shape shape;
  std::string name;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

FeatureTable strip_labels(const LabeledDataset& dataset);

/// Length-K simplex of class frequencies.
struct ProportionVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t k) const { return values[k]; }
  bool operator==(const ProportionVector&) const = default;

  /// Entries non-negative and summing to one within `tolerance`.
  bool is_simplex(double tolerance = 1e-6) const;
};

struct Bag {
  int id = 0;
  std::vector<std::size_t> instance_indices;
  ProportionVector proportions;

  std::size_t size() const { return instance_indices.size(); }
  bool operator==(const Bag&) const = default;
};

struct BagDataset {
  std::vector<Bag> bags;
  int num_classes = 2;
  std::string source;
  int bag_size = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return bags.size(); }
  bool operator==(const BagDataset&) const = default;

  /// Checks disjointness, per-bag simplex and 1/N_i granularity.
  void validate() const;
};

ProportionVector compute_proportions(std::span<const int> labels, int num_classes);

/// Shuffles instance order with the seed, then chunks consecutive bags of
/// exactly `bag_size`; the trailing remainder is dropped.
BagDataset partition_into_bags(const LabeledDataset& dataset, int bag_size, std::uint64_t seed);

/// Keeps only `class_a` and `class_b`, relabeled to 0 and 1.
LabeledDataset select_binary_subset(const LabeledDataset& dataset, int class_a, int class_b);

/// JSON-lines manifest: a header object, then one object per bag.
void persist_manifest(const BagDataset& bags, const std::filesystem::path& path);
BagDataset load_manifest(const std::filesystem::path& path);

std::string manifest_to_string(const BagDataset& bags);
BagDataset manifest_from_string(const std::string& text);

/// Test-only sidecar with the hidden instance labels of every bag, one JSON
/// line per bag: {"id": i, "labels": [...]}.
void persist_label_sidecar(const BagDataset& bags, const LabeledDataset& dataset,
                           const std::filesystem::path& path);
std::vector<std::vector<int>> load_label_sidecar(const std::filesystem::path& path);

}  // namespace llp
