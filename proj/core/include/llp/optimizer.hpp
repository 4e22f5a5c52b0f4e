#pragma once

#include "llp/layers.hpp"

#include <nlohmann/json_fwd.hpp>

#include <vector>

namespace llp {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment descent. Each instance is bound to one parameter list;
/// step() consumes the accumulated grads and moves against them.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(const std::vector<Param>& params);
  long steps() const { return steps_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& state, const std::vector<Param>& params);

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace llp
