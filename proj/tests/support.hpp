#pragma once

#include "llp/bagset.hpp"
#include "llp/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>

namespace llp::testing {

/// ||a - b|| / max(||a||, ||b||, tiny).
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Central differences of a scalar function of a matrix.
template <class F>
Matrix numeric_gradient(F&& f, Matrix x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  return scale * rng.normal_matrix(rows, cols);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.uniform() * (hi - lo + 1)) % (hi - lo + 1);
}

/// Dirichlet(1) draw as a proportion vector.
inline ProportionVector random_prior(Rng& rng, int k) {
  std::vector<double> v(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& x : v) total += (x = -std::log(1.0 - rng.uniform()));
  for (auto& x : v) x /= total;
  return ProportionVector{v};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("llp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace llp::testing
