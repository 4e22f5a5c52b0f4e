#include "llp/optimizer.hpp"

#include "llp/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace llp {

using nlohmann::json;

void Adam::step(const std::vector<Param>& params) {
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      second_.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (first_.size() != params.size()) throw Error(ErrorKind::InvalidConfiguration, "optimizer bound to another model");
  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  const double lr = config_.learning_rate * std::sqrt(c2) / c1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = *params[i].grad;
    first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * g;
    second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    params[i].value->array() -= lr * first_[i].array() / (second_[i].array().sqrt() + config_.epsilon);
  }
}

json Adam::state() const {
  json moments = json::array();
  for (std::size_t i = 0; i < first_.size(); ++i) {
    moments.push_back({{"m", std::vector<double>(first_[i].data(), first_[i].data() + first_[i].size())},
                       {"v", std::vector<double>(second_[i].data(), second_[i].data() + second_[i].size())}});
  }
  return {{"steps", steps_}, {"moments", moments}};
}

void Adam::restore(const json& state, const std::vector<Param>& params) {
  steps_ = state.at("steps").get<long>();
  first_.clear();
  second_.clear();
  const auto& moments = state.at("moments");
  if (moments.empty()) return;
  if (moments.size() != params.size()) throw Error(ErrorKind::Integrity, "optimizer state does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto m = moments[i].at("m").get<std::vector<double>>();
    const auto v = moments[i].at("v").get<std::vector<double>>();
    const auto rows = params[i].value->rows();
    const auto cols = params[i].value->cols();
    if (static_cast<Eigen::Index>(m.size()) != rows * cols || m.size() != v.size()) {
      throw Error(ErrorKind::Integrity, "optimizer moment has the wrong size");
    }
    first_.push_back(Eigen::Map<const Matrix>(m.data(), rows, cols));
    second_.push_back(Eigen::Map<const Matrix>(v.data(), rows, cols));
  }
}

}  // namespace llp
