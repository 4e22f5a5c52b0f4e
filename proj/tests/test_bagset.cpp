#include "llp/bagset.hpp"
#include "llp/datasets.hpp"
#include "llp/error.hpp"
#include "llp/trainer.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

using namespace llp;

namespace {

LabeledDataset cyclic_dataset(std::size_t n, int k) {
  LabeledDataset d;
  d.features = Matrix(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    d.features(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    d.labels.push_back(static_cast<int>((i * 7 + i / 3) % static_cast<std::size_t>(k)));
  }
  d.shape = Shape{1, 1, 1};
  d.num_classes = k;
  d.name = "cyclic";
  return d;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

template <class T>
concept HasLabels = requires(T t) { t.labels; };

}  // namespace

// Training code only ever sees FeatureTable and BagDataset.
static_assert(!HasLabels<FeatureTable>);
static_assert(!HasLabels<BagDataset>);
static_assert(!HasLabels<Bag>);
static_assert(!std::is_constructible_v<Trainer, TrainConfig, BagDataset, LabeledDataset, Discriminator,
                                       std::optional<Generator>>);

TEST_CASE("compute_proportions counts classes") {
  const std::vector<int> a{0, 0, 1, 2};
  CHECK(compute_proportions(a, 3).values == std::vector<double>{0.5, 0.25, 0.25});
  const std::vector<int> b{1, 1, 1, 1};
  CHECK(compute_proportions(b, 2).values == std::vector<double>{0.0, 1.0});
}

TEST_CASE("compute_proportions on size-16 bags gives multiples of 1/16") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> labels;
    for (int i = 0; i < 16; ++i) labels.push_back(testing::uniform_int(rng, 0, 4));
    const auto p = compute_proportions(labels, 5);
    CHECK(p.is_simplex());
    for (double v : p.values) CHECK(std::abs(v * 16 - std::round(v * 16)) < 1e-12);
  }
}

TEST_CASE("compute_proportions rejects bad input") {
  const std::vector<int> empty;
  try {
    compute_proportions(empty, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidBag);
  }
  const std::vector<int> bad{0, 3};
  try {
    compute_proportions(bad, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LabelDomain);
  }
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(compute_proportions(negative, 3), Error);
}

TEST_CASE("partition_into_bags covers 60000 instances with 3750 bags") {
  const auto data = cyclic_dataset(60000, 10);
  const auto bags = partition_into_bags(data, 16, 1);
  CHECK(bags.size() == 3750);
  std::set<std::size_t> seen;
  for (const auto& bag : bags.bags) {
    CHECK(bag.size() == 16);
    seen.insert(bag.instance_indices.begin(), bag.instance_indices.end());
  }
  CHECK(seen.size() == 60000);
  CHECK_NOTHROW(bags.validate());
}

TEST_CASE("partition_into_bags drops the remainder") {
  const auto data = cyclic_dataset(100, 3);
  const auto bags = partition_into_bags(data, 32, 5);
  CHECK(bags.size() == 3);
  std::set<std::size_t> seen;
  for (const auto& bag : bags.bags) seen.insert(bag.instance_indices.begin(), bag.instance_indices.end());
  CHECK(seen.size() == 96);
}

TEST_CASE("bag proportions equal hidden label frequencies exactly") {
  const auto data = cyclic_dataset(1000, 4);
  const auto bags = partition_into_bags(data, 20, 9);
  for (const auto& bag : bags.bags) {
    std::vector<int> counts(4, 0);
    for (auto idx : bag.instance_indices) ++counts[static_cast<std::size_t>(data.labels[idx])];
    for (int k = 0; k < 4; ++k) CHECK(bag.proportions[static_cast<std::size_t>(k)] * 20 == doctest::Approx(counts[static_cast<std::size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("partition_into_bags is deterministic per seed and differs across seeds") {
  const auto data = cyclic_dataset(500, 3);
  CHECK(manifest_to_string(partition_into_bags(data, 16, 7)) == manifest_to_string(partition_into_bags(data, 16, 7)));
  CHECK(manifest_to_string(partition_into_bags(data, 16, 7)) != manifest_to_string(partition_into_bags(data, 16, 8)));
}

TEST_CASE("partition_into_bags rejects oversize bags") {
  const auto data = cyclic_dataset(10, 2);
  try {
    partition_into_bags(data, 11, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfiguration);
  }
  CHECK_THROWS_AS(partition_into_bags(data, 0, 0), Error);
}

TEST_CASE("select_binary_subset keeps two classes relabeled") {
  const auto data = cyclic_dataset(300, 10);
  const auto sub = select_binary_subset(data, 3, 8);
  CHECK(sub.num_classes == 2);
  std::size_t threes = 0, eights = 0;
  for (int y : data.labels) threes += y == 3, eights += y == 8;
  CHECK(sub.size() == threes + eights);
  for (std::size_t i = 0; i < sub.size(); ++i) {
    CHECK((sub.labels[i] == 0 || sub.labels[i] == 1));
  }
  const auto bags = partition_into_bags(sub, 4, 1);
  for (const auto& bag : bags.bags) {
    CHECK(bag.proportions.size() == 2);
    CHECK(bag.proportions.is_simplex());
  }
  CHECK_THROWS_AS(select_binary_subset(data, 3, 3), Error);
  CHECK_THROWS_AS(select_binary_subset(data, 3, 10), Error);
}

TEST_CASE("manifest round trip") {
  const auto dir = testing::scratch_dir("manifest");
  const auto data = cyclic_dataset(200, 3);
  const auto bags = partition_into_bags(data, 16, 7);
  persist_manifest(bags, dir / "a.jsonl");
  const auto loaded = load_manifest(dir / "a.jsonl");
  CHECK(loaded == bags);
  persist_manifest(loaded, dir / "b.jsonl");
  CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
}

TEST_CASE("manifest header matches the documented layout") {
  const auto data = cyclic_dataset(40, 2);
  const auto text = manifest_to_string(partition_into_bags(data, 8, 3));
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(header.at("k") == 2);
  CHECK(header.at("bag_size") == 8);
  CHECK(header.at("seed") == 3);
  CHECK(header.at("source") == "cyclic");
  CHECK(header.at("n") == 5);
}

TEST_CASE("manifest with bad proportions fails validation") {
  const std::string text =
      "{\"k\":2,\"bag_size\":2,\"seed\":0,\"source\":\"x\",\"n\":1}\n"
      "{\"id\":0,\"indices\":[0,1],\"proportions\":[0.4,0.5]}\n";
  try {
    manifest_from_string(text);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
  }
  const std::string coarse =
      "{\"k\":2,\"bag_size\":4,\"seed\":0,\"source\":\"x\",\"n\":1}\n"
      "{\"id\":0,\"indices\":[0,1,2,3],\"proportions\":[0.3,0.7]}\n";
  CHECK_THROWS_AS(manifest_from_string(coarse), Error);
  const std::string overlap =
      "{\"k\":2,\"bag_size\":2,\"seed\":0,\"source\":\"x\",\"n\":2}\n"
      "{\"id\":0,\"indices\":[0,1],\"proportions\":[0.5,0.5]}\n"
      "{\"id\":1,\"indices\":[1,2],\"proportions\":[0.5,0.5]}\n";
  CHECK_THROWS_AS(manifest_from_string(overlap), Error);
}

TEST_CASE("manifest missing k reports the line") {
  const std::string text =
      "{\"bag_size\":2,\"seed\":0,\"source\":\"x\",\"n\":1}\n"
      "{\"id\":0,\"indices\":[0,1],\"proportions\":[0.5,0.5]}\n";
  try {
    manifest_from_string(text);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
  }
  const std::string broken_row =
      "{\"k\":2,\"bag_size\":2,\"seed\":0,\"source\":\"x\",\"n\":1}\n"
      "{\"id\":0,\"proportions\":[0.5,0.5]}\n";
  try {
    manifest_from_string(broken_row);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("label sidecar stores per-bag labels") {
  const auto dir = testing::scratch_dir("sidecar");
  const auto data = cyclic_dataset(64, 3);
  const auto bags = partition_into_bags(data, 8, 2);
  persist_label_sidecar(bags, data, dir / "m.labels");
  const auto labels = load_label_sidecar(dir / "m.labels");
  REQUIRE(labels.size() == bags.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    for (std::size_t j = 0; j < bags.bags[b].size(); ++j) {
      CHECK(labels[b][j] == data.labels[bags.bags[b].instance_indices[j]]);
    }
  }
}

TEST_CASE("blobs dataset and the Bayes rule") {
  const auto splits = resolve_dataset("blobs");
  CHECK(splits.train.size() == 4000);
  CHECK(splits.train.num_classes == 4);
  CHECK(splits.train.shape == Shape{1, 1, 2});
  const auto predicted = blobs_bayes_predict(splits.test.features, BlobsSpec{});
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != splits.test.labels[i];
  CHECK(wrong <= 5);
  CHECK(resolve_dataset("blobs-300").train.size() == 300);
  CHECK(resolve_dataset("blobs:0,2").train.num_classes == 2);
  CHECK_THROWS_AS(resolve_dataset("imagenet"), Error);
}
