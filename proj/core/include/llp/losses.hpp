#pragma once

#include "llp/bagset.hpp"
#include "llp/tensor.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace llp {

/// Logs are clamped from below at log(kLogClamp) so saturated outputs stay finite.
inline constexpr double kLogClamp = 1e-7;

double clamped_log(double x);

/// Instance posteriors of a minibatch of bags. Rows are concatenated bag by
/// bag; bag i owns the next bag_sizes[i] rows.
struct BagBatch {
  Matrix posteriors;
  std::vector<std::size_t> bag_sizes;
  std::vector<ProportionVector> priors;

  std::size_t num_bags() const { return bag_sizes.size(); }
  void validate() const;
};

struct LossValue {
  double value = 0.0;
  std::vector<std::pair<std::string, double>> components;

  /// Throws InvalidConfiguration for an unknown component name.
  double component(const std::string& name) const;
};

/// Elementwise mean of the posterior rows of one bag.
ProportionVector bag_posterior_mean(const Matrix& posteriors);
/// Bag means of a batch, one row per bag.
Matrix bag_posterior_means(const Matrix& posteriors, std::span<const std::size_t> bag_sizes);

/// -sum_i p_i^T log(pbar_i).
double proportion_ce(std::span<const ProportionVector> priors, const Matrix& bag_means);
/// Gradient of proportion_ce w.r.t. bag_means.
Matrix proportion_ce_grad(std::span<const ProportionVector> priors, const Matrix& bag_means);

/// -sum over rows of p^T log(p).
double instance_entropy(const Matrix& posteriors);
Matrix instance_entropy_grad(const Matrix& posteriors);

/// L_prop + lambda_ent * E_in, components "l_prop" and "e_in" (unweighted).
LossValue dllp_total(const BagBatch& batch, double lambda_ent);
/// Gradient of dllp_total w.r.t. batch.posteriors.
Matrix dllp_total_grad(const BagBatch& batch, double lambda_ent);

/// First K probabilities renormalized after removing the fake mass; the
/// uniform vector when the fake probability is 1.
RowVector normalize_posterior(const RowVector& probs);
Matrix normalize_posterior(const Matrix& probs);

/// Discriminator outputs of the real instances grouped by bag, plus the fake batch.
struct AdversarialBatch {
  Matrix real_logits;  ///< rows grouped bag by bag as in BagBatch
  std::vector<std::size_t> bag_sizes;
  std::vector<ProportionVector> priors;
  Matrix fake_logits;

  void validate() const;
};

/// Objective to be maximized by the discriminator:
///   L_real + L_fake + lambda_sup * LB
/// with L_real = sum_i mean_j log(1 - P(fake|x_ij)), L_fake = mean log P(fake|z)
/// and LB = sum_i sum_k p_i(k) mean_j log pnorm(k|x_ij).
/// Components "l_real", "l_fake", "lb_sup" (= lambda_sup * LB) add up to value.
LossValue llp_gan_disc_loss(const AdversarialBatch& batch, double lambda_sup);

struct AdversarialGrad {
  Matrix real_logits;
  Matrix fake_logits;
};
/// Gradient of llp_gan_disc_loss w.r.t. real and fake logits.
AdversarialGrad llp_gan_disc_loss_grad(const AdversarialBatch& batch, double lambda_sup);

/// The Jensen surrogate LB alone.
double proportion_lower_bound(const Matrix& real_logits, std::span<const std::size_t> bag_sizes,
                              std::span<const ProportionVector> priors);

/// sum_i p_i^T log(pbar_i) with pbar_i the mean normalized posterior of bag i.
/// Equals -proportion_ce; LB never exceeds it.
double exact_proportion_term(const Matrix& real_probs, std::span<const std::size_t> bag_sizes,
                             std::span<const ProportionVector> priors);

/// Squared Euclidean distance between mean real and mean fake features.
double feature_matching_loss(const RowVector& real_feature_mean, const RowVector& fake_feature_mean);
/// Gradient w.r.t. each fake feature row when the fake mean is taken over the rows.
Matrix feature_matching_grad(const RowVector& real_feature_mean, const Matrix& fake_features);

}  // namespace llp
