#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

namespace llp {

/// Batches are row-major: one instance per row, features flattened in CHW order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  int spatial() const { return height * width; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Seeded engine shared by shuffling, initialization, dropout masks and noise.
/// The engine state serializes to text so checkpoints can resume exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

  /// Batch of i.i.d. standard normal entries.
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

 private:
  std::mt19937_64 engine_;
};

}  // namespace llp
