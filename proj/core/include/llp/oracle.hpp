#pragma once

#include "llp/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace llp::oracle {

/// Finite-support stand-in for the data space. Row i of bag_densities is the
/// density of bag i over the support; row i of priors is its label proportion.
struct TabularWorld {
  Matrix bag_densities;                ///< n x S
  Matrix priors;                       ///< n x K
  std::optional<RowVector> generator;  ///< length S

  int support_size() const { return static_cast<int>(bag_densities.cols()); }
  int num_bags() const { return static_cast<int>(bag_densities.rows()); }
  int num_classes() const { return static_cast<int>(priors.cols()); }

  /// Unnormalized mixture sum_i p_d^i.
  RowVector mixture() const;
  /// Throws Validation when a density or prior row is not a simplex within 1e-9.
  void validate() const;
};

nlohmann::json to_json(const TabularWorld& world);
TabularWorld world_from_json(const nlohmann::json& json);
TabularWorld load_world(const std::string& path);

/// Random world with Dirichlet(1) rows; includes a generator density when asked.
TabularWorld random_world(Rng& rng, int support, int bags, int classes, bool with_generator = true);
/// Uniformly random point of the probability simplex.
RowVector random_simplex(Rng& rng, int size);

/// Per-point (K+1)-way probability rows; the last column is the fake class.
struct TabularDiscriminator {
  Matrix rows;  ///< S x (K+1)
};

/// Closed-form best response for a fixed generator:
///   P(k|x) = sum_i p_i(k) p_d^i(x) / (sum_i p_d^i(x) + p_g(x)),
/// fake entry is the remainder. Zero-mass points get the uniform row.
TabularDiscriminator optimal_discriminator_closed_form(const TabularWorld& world);

struct ClassifierAtPoint {
  int point = 0;
  RowVector posterior;  ///< length K
  RowVector weights;    ///< length n, w_i(x) = p_d^i(x) / sum_j p_d^j(x)
};

/// Final classifier at one support point; throws UndefinedPoint on zero mass.
ClassifierAtPoint classifier_posterior_and_weights(const TabularWorld& world, int point);
/// The classifier at every support point with positive mixture mass.
std::vector<ClassifierAtPoint> classifier_on_support(const TabularWorld& world);

/// Discriminator objective with the Jensen surrogate, evaluated exactly:
///   sum_x { sum_i p_d^i [log(1 - P_f) + sum_k p_i(k) log(P_k / (1 - P_f))] + p_g log P_f }.
/// Terms with zero weight contribute zero.
double surrogate_objective(const TabularWorld& world, const TabularDiscriminator& disc);

struct SolverOptions {
  int restarts = 5;
  double tolerance = 1e-8;  ///< on the projected-gradient norm
  int max_iterations = 200000;
  std::uint64_t seed = 0;
};

/// Maximizes surrogate_objective over per-point simplex rows by projected
/// ascent with spectral step sizes and Armijo backtracking, from several
/// random starts. Throws NonConvergence with the best iterate on failure.
TabularDiscriminator numeric_best_response(const TabularWorld& world, const SolverOptions& options = {});

/// Uniform mixture (1/n) sum_i p_d^i.
RowVector optimal_generator(const TabularWorld& world);

/// C(G) = surrogate objective at the closed-form best response to `generator`.
double generator_objective(const TabularWorld& world, const RowVector& generator);

/// Minimizes C(G) over the support simplex by projected descent.
RowVector numeric_optimal_generator(const TabularWorld& world, const SolverOptions& options = {});

struct EquilibriumValue {
  double total = 0.0;
  double divergence = 0.0;     ///< n ln n - (n+1) ln(n+1)
  double cross_entropy = 0.0;  ///< sum_i E_{p_d^i} CE(p_i, classifier)
};

EquilibriumValue equilibrium_value(const TabularWorld& world);

/// sum_x p_d(x) KL(p(y) || pnorm(y|x)) for a single-bag world.
double single_bag_kl(const TabularWorld& world, const TabularDiscriminator& disc);

/// Euclidean projection onto the probability simplex.
RowVector project_to_simplex(const RowVector& v);

/// Result of one oracle check as reported by the CLI.
struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Runs "thm1", "pgfree", "lemma1", "thm2", "value" (or "all").
std::vector<CheckResult> run_checks(const TabularWorld& world, const std::string& which,
                                    const SolverOptions& options = {});

}  // namespace llp::oracle
