#include "llp/oracle.hpp"

#include "llp/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace llp::oracle {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// w * log(x) with the 0 * log(0) = 0 convention.
double xlog(double w, double x) {
  if (w == 0.0) return 0.0;
  return x > 0.0 ? w * std::log(x) : kNegInf;
}

void check_row_simplex(const Eigen::Ref<const RowVector>& row, const std::string& what) {
  if ((row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::Validation, what + " is not a probability vector within 1e-9");
  }
}

struct SpgResult {
  RowVector x;
  double value = kNegInf;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
};

using Objective = std::function<double(const RowVector&)>;
using Gradient = std::function<RowVector(const RowVector&)>;

double projected_residual(const RowVector& x, const RowVector& g) {
  return (project_to_simplex(x + g) - x).norm();
}

// Spectral projected-gradient ascent on one probability simplex.
SpgResult spg_maximize(const Objective& f, const Gradient& grad, RowVector x, const SolverOptions& options) {
  constexpr double kArmijo = 1e-4;
  x = project_to_simplex(x);
  double fx = f(x);
  RowVector g = grad(x);
  double step = 1.0;
  SpgResult best{x, fx, projected_residual(x, g), false};
  for (int it = 0; it < options.max_iterations; ++it) {
    const double residual = projected_residual(x, g);
    if (fx >= best.value || residual < best.residual) best = {x, fx, residual, false};
    if (residual < options.tolerance) return {x, fx, residual, true};

    const RowVector d = project_to_simplex(x + step * g) - x;
    const double slope = g.dot(d);
    double t = 1.0;
    RowVector candidate = x + d;
    double fc = f(candidate);
    while (!(fc >= fx + kArmijo * t * slope) && t > 1e-30) {
      t *= 0.5;
      candidate = x + t * d;
      fc = f(candidate);
    }
    if (t <= 1e-30) break;

    const RowVector gc = grad(candidate);
    const RowVector s = candidate - x;
    const double curvature = s.dot(g - gc);
    step = curvature > 0.0 ? std::clamp(s.squaredNorm() / curvature, 1e-12, 1e12) : 1e12;
    x = candidate;
    fx = fc;
    g = gc;
  }
  const double residual = projected_residual(x, g);
  if (residual < options.tolerance) return {x, fx, residual, true};
  return best;
}

// Per-point slice of the surrogate objective.
struct PointProblem {
  RowVector weights;  // p_d^i(x), length n
  const Matrix* priors = nullptr;
  double fake_weight = 0.0;  // p_g(x)

  double value(const RowVector& p) const {
    const Eigen::Index k = priors->cols();
    const double real_mass = p.head(k).sum();
    double v = xlog(fake_weight, p(k));
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      const double a = weights(i);
      if (a == 0.0) continue;
      v += xlog(a, real_mass);
      for (Eigen::Index c = 0; c < k; ++c) {
        const double w = a * (*priors)(i, c);
        if (w == 0.0) continue;
        v += (p(c) > 0.0 && real_mass > 0.0) ? w * std::log(p(c) / real_mass) : kNegInf;
      }
    }
    return v;
  }

  RowVector gradient(const RowVector& p) const {
    const Eigen::Index k = priors->cols();
    const double real_mass = std::max(p.head(k).sum(), 1e-300);
    RowVector g = RowVector::Zero(k + 1);
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      const double a = weights(i);
      if (a == 0.0) continue;
      const double prior_total = priors->row(i).sum();
      for (Eigen::Index c = 0; c < k; ++c) {
        g(c) += a / real_mass - a * prior_total / real_mass;
        const double w = a * (*priors)(i, c);
        if (w != 0.0) g(c) += w / std::max(p(c), 1e-300);
      }
    }
    if (fake_weight != 0.0) g(k) = fake_weight / std::max(p(k), 1e-300);
    return g;
  }
};

TabularWorld single_bag(const TabularWorld& world, int bag) {
  TabularWorld out;
  out.bag_densities = world.bag_densities.row(bag);
  out.priors = world.priors.row(bag);
  out.generator = world.generator ? *world.generator : RowVector(world.bag_densities.row(bag));
  return out;
}

}  // namespace

RowVector TabularWorld::mixture() const { return bag_densities.colwise().sum(); }

void TabularWorld::validate() const {
  if (num_bags() < 1) throw Error(ErrorKind::Validation, "world needs at least one bag");
  if (num_classes() < 2) throw Error(ErrorKind::Validation, "world needs K >= 2");
  if (support_size() < 1) throw Error(ErrorKind::Validation, "world has an empty support");
  if (priors.rows() != bag_densities.rows()) throw Error(ErrorKind::Validation, "one prior per bag required");
  for (int i = 0; i < num_bags(); ++i) {
    check_row_simplex(bag_densities.row(i), "bag density " + std::to_string(i));
    check_row_simplex(priors.row(i), "prior " + std::to_string(i));
  }
  if (generator) {
    if (generator->size() != support_size()) throw Error(ErrorKind::Validation, "generator density length != S");
    check_row_simplex(*generator, "generator density");
  }
}

json to_json(const TabularWorld& world) {
  auto rows = [](const Matrix& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
    }
    return out;
  };
  json j = {{"support_size", world.support_size()},
            {"n", world.num_bags()},
            {"k", world.num_classes()},
            {"bag_densities", rows(world.bag_densities)},
            {"priors", rows(world.priors)}};
  if (world.generator) {
    j["generator_density"] = std::vector<double>(world.generator->data(), world.generator->data() + world.generator->size());
  }
  return j;
}

TabularWorld world_from_json(const json& j) {
  auto matrix = [](const json& rows, int expect_rows, int expect_cols, const char* what) {
    const auto data = rows.get<std::vector<std::vector<double>>>();
    if (static_cast<int>(data.size()) != expect_rows) {
      throw Error(ErrorKind::Validation, std::string(what) + " has the wrong number of rows");
    }
    Matrix m(expect_rows, expect_cols);
    for (int i = 0; i < expect_rows; ++i) {
      if (static_cast<int>(data[static_cast<std::size_t>(i)].size()) != expect_cols) {
        throw Error(ErrorKind::Validation, std::string(what) + " row has the wrong length");
      }
      for (int c = 0; c < expect_cols; ++c) m(i, c) = data[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    return m;
  };
  try {
    const int s = j.at("support_size").get<int>();
    const int n = j.at("n").get<int>();
    const int k = j.at("k").get<int>();
    TabularWorld world;
    world.bag_densities = matrix(j.at("bag_densities"), n, s, "bag_densities");
    world.priors = matrix(j.at("priors"), n, k, "priors");
    if (j.contains("generator_density") && !j.at("generator_density").is_null()) {
      world.generator = matrix(json::array({j.at("generator_density")}), 1, s, "generator_density").row(0);
    }
    world.validate();
    return world;
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("world file: ") + e.what());
  }
}

TabularWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot read world file " + path);
  try {
    return world_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(0, path + ": " + e.what());
  }
}

RowVector random_simplex(Rng& rng, int size) {
  RowVector v(size);
  for (int i = 0; i < size; ++i) v(i) = -std::log(1.0 - rng.uniform());
  return v / v.sum();
}

TabularWorld random_world(Rng& rng, int support, int bags, int classes, bool with_generator) {
  TabularWorld world;
  world.bag_densities.resize(bags, support);
  world.priors.resize(bags, classes);
  for (int i = 0; i < bags; ++i) {
    world.bag_densities.row(i) = random_simplex(rng, support);
    world.priors.row(i) = random_simplex(rng, classes);
  }
  if (with_generator) world.generator = random_simplex(rng, support);
  return world;
}

RowVector project_to_simplex(const RowVector& v) {
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

TabularDiscriminator optimal_discriminator_closed_form(const TabularWorld& world) {
  if (!world.generator) throw Error(ErrorKind::InvalidConfiguration, "closed form needs a generator density");
  // Any non-negative p_g works here, including the all-zero one.
  TabularWorld real = world;
  real.generator.reset();
  real.validate();
  const RowVector& g = *world.generator;
  if (g.size() != world.support_size() || !g.allFinite() || (g.array() < 0.0).any()) {
    throw Error(ErrorKind::Validation, "generator density must be non-negative with length S");
  }
  const int s = world.support_size();
  const int k = world.num_classes();
  TabularDiscriminator out{Matrix(s, k + 1)};
  for (int x = 0; x < s; ++x) {
    const double mass = world.bag_densities.col(x).sum();
    const double denom = mass + (*world.generator)(x);
    if (denom <= 0.0) {
      out.rows.row(x).setConstant(1.0 / (k + 1));
      continue;
    }
    for (int c = 0; c < k; ++c) out.rows(x, c) = world.priors.col(c).dot(world.bag_densities.col(x)) / denom;
    out.rows(x, k) = 1.0 - out.rows.row(x).head(k).sum();
  }
  return out;
}

ClassifierAtPoint classifier_posterior_and_weights(const TabularWorld& world, int point) {
  if (point < 0 || point >= world.support_size()) throw Error(ErrorKind::UndefinedPoint, "point outside the support");
  const double mass = world.bag_densities.col(point).sum();
  if (!(mass > 0.0)) {
    throw Error(ErrorKind::UndefinedPoint, "point " + std::to_string(point) + " has zero mixture mass");
  }
  ClassifierAtPoint out;
  out.point = point;
  out.weights = world.bag_densities.col(point).transpose() / mass;
  out.posterior = out.weights * world.priors;
  return out;
}

std::vector<ClassifierAtPoint> classifier_on_support(const TabularWorld& world) {
  world.validate();
  std::vector<ClassifierAtPoint> out;
  for (int x = 0; x < world.support_size(); ++x) {
    if (world.bag_densities.col(x).sum() > 0.0) out.push_back(classifier_posterior_and_weights(world, x));
  }
  return out;
}

double surrogate_objective(const TabularWorld& world, const TabularDiscriminator& disc) {
  if (!world.generator) throw Error(ErrorKind::InvalidConfiguration, "objective needs a generator density");
  double total = 0.0;
  for (int x = 0; x < world.support_size(); ++x) {
    PointProblem problem{world.bag_densities.col(x).transpose(), &world.priors, (*world.generator)(x)};
    total += problem.value(disc.rows.row(x));
  }
  return total;
}

TabularDiscriminator numeric_best_response(const TabularWorld& world, const SolverOptions& options) {
  world.validate();
  if (!world.generator) throw Error(ErrorKind::InvalidConfiguration, "best response needs a generator density");
  const int s = world.support_size();
  const int k = world.num_classes();
  Rng rng(options.seed);
  TabularDiscriminator out{Matrix(s, k + 1)};
  for (int x = 0; x < s; ++x) {
    PointProblem problem{world.bag_densities.col(x).transpose(), &world.priors, (*world.generator)(x)};
    if (problem.weights.sum() + problem.fake_weight <= 0.0) {
      out.rows.row(x).setConstant(1.0 / (k + 1));
      continue;
    }
    SpgResult best;
    for (int r = 0; r < std::max(options.restarts, 1); ++r) {
      const RowVector start = r == 0 ? RowVector::Constant(k + 1, 1.0 / (k + 1)) : random_simplex(rng, k + 1);
      auto result = spg_maximize([&](const RowVector& p) { return problem.value(p); },
                                 [&](const RowVector& p) { return problem.gradient(p); }, start, options);
      if (result.converged && (!best.converged || result.value > best.value)) best = result;
      else if (!best.converged && result.residual < best.residual) best = result;
    }
    if (!best.converged) {
      std::vector<double> iterate(best.x.data(), best.x.data() + best.x.size());
      throw NonConvergenceError("best response did not converge at point " + std::to_string(x), iterate,
                                best.residual);
    }
    out.rows.row(x) = best.x;
  }
  return out;
}

RowVector optimal_generator(const TabularWorld& world) {
  world.validate();
  return world.mixture() / world.num_bags();
}

double generator_objective(const TabularWorld& world, const RowVector& generator) {
  TabularWorld with_generator = world;
  with_generator.generator = generator;
  return surrogate_objective(with_generator, optimal_discriminator_closed_form(with_generator));
}

RowVector numeric_optimal_generator(const TabularWorld& world, const SolverOptions& options) {
  world.validate();
  const RowVector mass = world.mixture();
  Rng rng(options.seed);
  auto objective = [&](const RowVector& g) { return -generator_objective(world, g); };
  // dC/dp_g(x) is log P*(fake|x) at the best response.
  auto gradient = [&](const RowVector& g) {
    RowVector out(g.size());
    for (Eigen::Index x = 0; x < g.size(); ++x) {
      if (mass(x) <= 0.0) {
        out(x) = 0.0;
      } else {
        out(x) = -std::log(std::max(g(x), 1e-300) / (mass(x) + g(x)));
      }
    }
    return out;
  };
  SpgResult best;
  for (int r = 0; r < std::max(options.restarts, 1); ++r) {
    const RowVector start = r == 0 ? RowVector::Constant(mass.size(), 1.0 / mass.size())
                                   : random_simplex(rng, static_cast<int>(mass.size()));
    auto result = spg_maximize(objective, gradient, start, options);
    if (result.converged && (!best.converged || result.value > best.value)) best = result;
    else if (!best.converged && result.residual < best.residual) best = result;
  }
  if (!best.converged) {
    std::vector<double> iterate(best.x.data(), best.x.data() + best.x.size());
    throw NonConvergenceError("generator minimization did not converge", iterate, best.residual);
  }
  return best.x;
}

EquilibriumValue equilibrium_value(const TabularWorld& world) {
  world.validate();
  const double n = world.num_bags();
  EquilibriumValue out;
  out.divergence = n * std::log(n) - (n + 1.0) * std::log(n + 1.0);
  for (int i = 0; i < world.num_bags(); ++i) {
    for (int x = 0; x < world.support_size(); ++x) {
      const double density = world.bag_densities(i, x);
      if (density == 0.0) continue;
      const auto classifier = classifier_posterior_and_weights(world, x);
      double ce = 0.0;
      for (int c = 0; c < world.num_classes(); ++c) ce -= xlog(world.priors(i, c), classifier.posterior(c));
      out.cross_entropy += density * ce;
    }
  }
  out.total = out.divergence - out.cross_entropy;
  return out;
}

double single_bag_kl(const TabularWorld& world, const TabularDiscriminator& disc) {
  if (world.num_bags() != 1) throw Error(ErrorKind::InvalidConfiguration, "KL form applies to single-bag worlds");
  const int k = world.num_classes();
  double total = 0.0;
  for (int x = 0; x < world.support_size(); ++x) {
    const double density = world.bag_densities(0, x);
    if (density == 0.0) continue;
    const double real_mass = disc.rows.row(x).head(k).sum();
    for (int c = 0; c < k; ++c) {
      const double p = world.priors(0, c);
      if (p == 0.0) continue;
      total += density * p * std::log(p / (disc.rows(x, c) / real_mass));
    }
  }
  return total;
}

std::vector<CheckResult> run_checks(const TabularWorld& world, const std::string& which,
                                    const SolverOptions& options) {
  world.validate();
  const bool all = which == "all";
  const std::vector<std::string> known = {"thm1", "pgfree", "lemma1", "thm2", "value"};
  if (!all && std::find(known.begin(), known.end(), which) == known.end()) {
    throw Error(ErrorKind::InvalidConfiguration, "unknown check " + which);
  }
  auto wanted = [&](const char* name) { return all || which == name; };
  TabularWorld game = world;
  std::string generator_note = "given p_g";
  if (!game.generator) {
    game.generator = optimal_generator(world);
    generator_note = "p_g defaulted to the uniform bag mixture";
  }
  const int k = world.num_classes();
  std::vector<CheckResult> out;

  if (wanted("thm1")) {
    const auto closed = optimal_discriminator_closed_form(game);
    CheckResult r{"thm1", false, 0.0, 1e-4, generator_note};
    try {
      const auto numeric = numeric_best_response(game, options);
      r.metric = (numeric.rows - closed.rows).cwiseAbs().maxCoeff();
      r.passed = r.metric <= r.tolerance;
    } catch (const NonConvergenceError& e) {
      r.metric = e.best_residual();
      r.detail = e.what();
    }
    out.push_back(r);
  }
  if (wanted("pgfree")) {
    CheckResult r{"pgfree", false, 0.0, 1e-9, "normalized closed form vs weighted prior"};
    const auto closed = optimal_discriminator_closed_form(game);
    for (const auto& point : classifier_on_support(game)) {
      const RowVector row = closed.rows.row(point.point);
      const RowVector normalized = row.head(k) / (1.0 - row(k));
      r.metric = std::max(r.metric, (normalized - point.posterior).cwiseAbs().maxCoeff());
    }
    r.passed = r.metric <= r.tolerance;
    out.push_back(r);
  }
  if (wanted("lemma1")) {
    CheckResult r{"lemma1", true, 0.0, 1e-4, "per-bag single-bag worlds"};
    double worst_kl = 0.0;
    for (int i = 0; i < world.num_bags(); ++i) {
      const auto single = single_bag(game, i);
      try {
        const auto numeric = numeric_best_response(single, options);
        for (int x = 0; x < single.support_size(); ++x) {
          if (single.bag_densities(0, x) == 0.0) continue;
          const RowVector row = numeric.rows.row(x);
          const RowVector normalized = row.head(k) / row.head(k).sum();
          r.metric = std::max(r.metric, (normalized - single.priors.row(0)).cwiseAbs().maxCoeff());
        }
        worst_kl = std::max(worst_kl, single_bag_kl(single, numeric));
      } catch (const NonConvergenceError& e) {
        r.passed = false;
        r.detail = e.what();
      }
    }
    r.passed = r.passed && r.metric <= r.tolerance && worst_kl < 1e-6;
    std::ostringstream detail;
    detail << r.detail << "; max KL " << worst_kl << " (tol 1e-6)";
    r.detail = detail.str();
    out.push_back(r);
  }
  if (wanted("thm2")) {
    CheckResult r{"thm2", false, 0.0, 1e-3, "total variation to (1/n) sum p_d^i"};
    try {
      const RowVector numeric = numeric_optimal_generator(world, options);
      r.metric = 0.5 * (numeric - optimal_generator(world)).cwiseAbs().sum();
      r.passed = r.metric <= r.tolerance;
    } catch (const NonConvergenceError& e) {
      r.metric = e.best_residual();
      r.detail = e.what();
    }
    out.push_back(r);
  }
  if (wanted("value")) {
    const auto value = equilibrium_value(world);
    const double at_optimum = generator_objective(world, optimal_generator(world));
    CheckResult r{"value", false, std::abs(at_optimum - value.total), 1e-9, ""};
    r.passed = r.metric <= r.tolerance;
    std::ostringstream detail;
    detail << "C(G*) = " << value.total << " (divergence " << value.divergence << ", cross-entropy "
           << value.cross_entropy << ")";
    if (world.num_bags() == 1) {
      const double gap = std::abs(value.divergence + 2.0 * std::log(2.0));
      detail << "; n=1 divergence gap to -2 ln 2: " << gap;
      r.passed = r.passed && gap <= 1e-12;
    }
    r.detail = detail.str();
    out.push_back(r);
  }
  return out;
}

}  // namespace llp::oracle
