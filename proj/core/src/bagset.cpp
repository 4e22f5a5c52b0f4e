#include "llp/bagset.hpp"

#include "llp/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace llp {

using nlohmann::json;

void LabeledDataset::validate() const {
  if (num_classes < 2) throw Error(ErrorKind::InvalidConfiguration, "K must be at least 2");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw Error(ErrorKind::InvalidConfiguration, "features and labels differ in length");
  }
  if (features.rows() > 0 && features.cols() != shape.size()) {
    throw Error(ErrorKind::InvalidConfiguration,
                "feature width does not match shape " + to_string(shape));
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorKind::LabelDomain, "label " + std::to_string(y) + " outside [0, K-1]");
    }
  }
}

FeatureTable strip_labels(const LabeledDataset& dataset) {
  return FeatureTable{dataset.features, dataset.shape, dataset.name};
}

bool ProportionVector::is_simplex(double tolerance) const {
  if (values.empty()) return false;
  double total = 0.0;
  for (double v : values) {
    if (!(v >= 0.0)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tolerance;
}

ProportionVector compute_proportions(std::span<const int> labels, int num_classes) {
  if (labels.empty()) throw Error(ErrorKind::InvalidBag, "cannot compute proportions of an empty bag");
  if (num_classes < 2) throw Error(ErrorKind::InvalidConfiguration, "K must be at least 2");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw Error(ErrorKind::LabelDomain, "label " + std::to_string(y) + " outside [0, K-1]");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  ProportionVector out;
  out.values.reserve(counts.size());
  const auto n = static_cast<double>(labels.size());
  for (auto c : counts) out.values.push_back(static_cast<double>(c) / n);
  return out;
}

namespace {

void validate_bag(const Bag& bag, int num_classes, std::size_t line) {
  auto fail = [&](const std::string& what) {
    std::string where = line > 0 ? "line " + std::to_string(line) + ": " : "";
    throw Error(ErrorKind::Validation, where + "bag " + std::to_string(bag.id) + " " + what);
  };
  if (bag.instance_indices.empty()) fail("has no instances");
  if (bag.proportions.size() != static_cast<std::size_t>(num_classes)) {
    fail("proportions length differs from K");
  }
  if (!bag.proportions.is_simplex(1e-6)) fail("proportions are not a simplex vector");
  const auto n = static_cast<double>(bag.size());
  for (double v : bag.proportions.values) {
    const double scaled = v * n;
    if (std::abs(scaled - std::round(scaled)) > 1e-9 * n) {
      fail("proportion is not a multiple of 1/N_i");
    }
  }
}

}  // namespace

void BagDataset::validate() const {
  std::unordered_set<std::size_t> seen;
  for (const auto& bag : bags) {
    validate_bag(bag, num_classes, 0);
    for (auto idx : bag.instance_indices) {
      if (!seen.insert(idx).second) {
        throw Error(ErrorKind::Validation,
                    "instance " + std::to_string(idx) + " appears in more than one bag");
      }
    }
  }
}

BagDataset partition_into_bags(const LabeledDataset& dataset, int bag_size, std::uint64_t seed) {
  dataset.validate();
  if (bag_size < 1) throw Error(ErrorKind::InvalidConfiguration, "bag size must be at least 1");
  if (dataset.size() == 0) throw Error(ErrorKind::InvalidConfiguration, "dataset is empty");
  const auto size = static_cast<std::size_t>(bag_size);
  if (size > dataset.size()) {
    throw Error(ErrorKind::InvalidConfiguration,
                "bag size " + std::to_string(bag_size) + " exceeds dataset size " +
                    std::to_string(dataset.size()));
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 engine(seed);
  std::shuffle(order.begin(), order.end(), engine);

  BagDataset out;
  out.num_classes = dataset.num_classes;
  out.source = dataset.name;
  out.bag_size = bag_size;
  out.seed = seed;
  const std::size_t count = dataset.size() / size;
  out.bags.reserve(count);
  std::vector<int> bag_labels(size);
  for (std::size_t b = 0; b < count; ++b) {
    Bag bag;
    bag.id = static_cast<int>(b);
    bag.instance_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(b * size),
                                order.begin() + static_cast<std::ptrdiff_t>((b + 1) * size));
    for (std::size_t j = 0; j < size; ++j) bag_labels[j] = dataset.labels[bag.instance_indices[j]];
    bag.proportions = compute_proportions(bag_labels, dataset.num_classes);
    out.bags.push_back(std::move(bag));
  }
  return out;
}

LabeledDataset select_binary_subset(const LabeledDataset& dataset, int class_a, int class_b) {
  if (class_a == class_b) {
    throw Error(ErrorKind::InvalidConfiguration, "binary subset needs two distinct classes");
  }
  for (int c : {class_a, class_b}) {
    if (c < 0 || c >= dataset.num_classes) {
      throw Error(ErrorKind::InvalidConfiguration,
                  "class " + std::to_string(c) + " outside [0, K-1]");
    }
  }
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.labels[i] == class_a || dataset.labels[i] == class_b) {
      keep.push_back(static_cast<Eigen::Index>(i));
    }
  }
  LabeledDataset out;
  out.shape = dataset.shape;
  out.num_classes = 2;
  out.name = dataset.name + ":" + std::to_string(class_a) + "," + std::to_string(class_b);
  out.features.resize(static_cast<Eigen::Index>(keep.size()), dataset.features.cols());
  out.labels.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = dataset.features.row(keep[r]);
    out.labels.push_back(dataset.labels[static_cast<std::size_t>(keep[r])] == class_a ? 0 : 1);
  }
  return out;
}

std::string manifest_to_string(const BagDataset& bags) {
  std::ostringstream out;
  json header = {{"k", bags.num_classes},
                 {"bag_size", bags.bag_size},
                 {"seed", bags.seed},
                 {"source", bags.source},
                 {"n", bags.bags.size()}};
  out << header.dump() << '\n';
  for (const auto& bag : bags.bags) {
    json row = {{"id", bag.id}, {"indices", bag.instance_indices}, {"proportions", bag.proportions.values}};
    out << row.dump() << '\n';
  }
  return out.str();
}

namespace {

template <typename T>
T required(const json& object, const char* key, std::size_t line) {
  auto it = object.find(key);
  if (it == object.end()) throw ParseError(line, std::string("missing field \"") + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ParseError(line, std::string("field \"") + key + "\" has the wrong type");
  }
}

}  // namespace

BagDataset manifest_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  BagDataset out;
  std::size_t declared = 0;
  bool have_header = false;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    json object;
    try {
      object = json::parse(raw);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!object.is_object()) throw ParseError(line, "expected a JSON object");
    if (!have_header) {
      out.num_classes = required<int>(object, "k", line);
      out.bag_size = required<int>(object, "bag_size", line);
      out.seed = required<std::uint64_t>(object, "seed", line);
      out.source = required<std::string>(object, "source", line);
      declared = required<std::size_t>(object, "n", line);
      if (out.num_classes < 2) throw ParseError(line, "k must be at least 2");
      have_header = true;
      continue;
    }
    Bag bag;
    bag.id = required<int>(object, "id", line);
    bag.instance_indices = required<std::vector<std::size_t>>(object, "indices", line);
    bag.proportions.values = required<std::vector<double>>(object, "proportions", line);
    validate_bag(bag, out.num_classes, line);
    out.bags.push_back(std::move(bag));
  }
  if (!have_header) throw ParseError(line, "manifest has no header line");
  if (out.bags.size() != declared) {
    throw ParseError(line, "header declares " + std::to_string(declared) + " bags, found " +
                               std::to_string(out.bags.size()));
  }
  out.validate();
  return out;
}

void persist_manifest(const BagDataset& bags, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidConfiguration, "cannot write " + path.string());
  out << manifest_to_string(bags);
}

BagDataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return manifest_from_string(buffer.str());
}

void persist_label_sidecar(const BagDataset& bags, const LabeledDataset& dataset,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidConfiguration, "cannot write " + path.string());
  for (const auto& bag : bags.bags) {
    std::vector<int> labels;
    labels.reserve(bag.size());
    for (auto idx : bag.instance_indices) labels.push_back(dataset.labels.at(idx));
    out << json{{"id", bag.id}, {"labels", labels}}.dump() << '\n';
  }
}

std::vector<std::vector<int>> load_label_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot read " + path.string());
  std::vector<std::vector<int>> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.empty()) continue;
    try {
      out.push_back(json::parse(raw).at("labels").get<std::vector<int>>());
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  }
  return out;
}

}  // namespace llp
