#include "llp/losses.hpp"

#include "llp/error.hpp"

#include <cmath>
#include <numeric>

namespace llp {

namespace {

const double kLogFloor = std::log(kLogClamp);

void check_rows_simplex(const Matrix& rows, const char* what) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if ((rows.row(i).array() < 0.0).any() || std::abs(rows.row(i).sum() - 1.0) > 1e-6) {
      throw Error(ErrorKind::InvalidConfiguration,
                  std::string(what) + " row " + std::to_string(i) + " is not a simplex vector");
    }
  }
}

void check_groups(Eigen::Index rows, std::span<const std::size_t> bag_sizes, std::size_t priors) {
  if (bag_sizes.empty()) throw Error(ErrorKind::InvalidBag, "batch contains no bags");
  if (bag_sizes.size() != priors) {
    throw Error(ErrorKind::InvalidConfiguration, "bag count " + std::to_string(bag_sizes.size()) +
                                                     " differs from prior count " + std::to_string(priors));
  }
  std::size_t total = 0;
  for (auto n : bag_sizes) {
    if (n == 0) throw Error(ErrorKind::InvalidBag, "empty bag in batch");
    total += n;
  }
  if (static_cast<Eigen::Index>(total) != rows) {
    throw Error(ErrorKind::InvalidConfiguration, "bag sizes cover " + std::to_string(total) +
                                                     " rows, batch has " + std::to_string(rows));
  }
}

void check_priors(std::span<const ProportionVector> priors, Eigen::Index k) {
  for (const auto& p : priors) {
    if (static_cast<Eigen::Index>(p.size()) != k) {
      throw Error(ErrorKind::InvalidConfiguration, "prior length differs from class count");
    }
    if (!p.is_simplex()) throw Error(ErrorKind::InvalidConfiguration, "prior is not a simplex vector");
  }
}

// log-sum-exp of the row with an optional extra zero logit.
double log_sum_exp(const Eigen::Ref<const RowVector>& z, bool with_zero) {
  double m = z.maxCoeff();
  if (with_zero) m = std::max(m, 0.0);
  double s = (z.array() - m).exp().sum();
  if (with_zero) s += std::exp(-m);
  return m + std::log(s);
}

}  // namespace

double clamped_log(double x) { return x > kLogClamp ? std::log(x) : kLogFloor; }

void BagBatch::validate() const {
  check_groups(posteriors.rows(), bag_sizes, priors.size());
  check_priors(priors, posteriors.cols());
  check_rows_simplex(posteriors, "posterior");
}

double LossValue::component(const std::string& name) const {
  for (const auto& [key, v] : components) {
    if (key == name) return v;
  }
  throw Error(ErrorKind::InvalidConfiguration, "loss has no component " + name);
}

ProportionVector bag_posterior_mean(const Matrix& posteriors) {
  if (posteriors.rows() == 0) throw Error(ErrorKind::InvalidBag, "bag has no instances");
  const RowVector mean = posteriors.colwise().mean();
  return ProportionVector{std::vector<double>(mean.data(), mean.data() + mean.size())};
}

Matrix bag_posterior_means(const Matrix& posteriors, std::span<const std::size_t> bag_sizes) {
  Matrix means(static_cast<Eigen::Index>(bag_sizes.size()), posteriors.cols());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < bag_sizes.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(bag_sizes[i]);
    if (n == 0) throw Error(ErrorKind::InvalidBag, "bag has no instances");
    means.row(static_cast<Eigen::Index>(i)) = posteriors.middleRows(offset, n).colwise().mean();
    offset += n;
  }
  return means;
}

double proportion_ce(std::span<const ProportionVector> priors, const Matrix& bag_means) {
  if (static_cast<Eigen::Index>(priors.size()) != bag_means.rows()) {
    throw Error(ErrorKind::InvalidConfiguration, "prior and bag-mean counts differ");
  }
  check_priors(priors, bag_means.cols());
  double loss = 0.0;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    for (Eigen::Index k = 0; k < bag_means.cols(); ++k) {
      const double p = priors[i][static_cast<std::size_t>(k)];
      if (p > 0.0) loss -= p * clamped_log(bag_means(static_cast<Eigen::Index>(i), k));
    }
  }
  return loss;
}

Matrix proportion_ce_grad(std::span<const ProportionVector> priors, const Matrix& bag_means) {
  if (static_cast<Eigen::Index>(priors.size()) != bag_means.rows()) {
    throw Error(ErrorKind::InvalidConfiguration, "prior and bag-mean counts differ");
  }
  Matrix grad = Matrix::Zero(bag_means.rows(), bag_means.cols());
  for (Eigen::Index i = 0; i < bag_means.rows(); ++i) {
    for (Eigen::Index k = 0; k < bag_means.cols(); ++k) {
      const double q = bag_means(i, k);
      if (q > kLogClamp) grad(i, k) = -priors[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] / q;
    }
  }
  return grad;
}

double instance_entropy(const Matrix& posteriors) {
  check_rows_simplex(posteriors, "posterior");
  double h = 0.0;
  for (Eigen::Index i = 0; i < posteriors.size(); ++i) {
    const double p = posteriors.data()[i];
    if (p > 0.0) h -= p * clamped_log(p);
  }
  return h;
}

Matrix instance_entropy_grad(const Matrix& posteriors) {
  return posteriors.unaryExpr([](double p) { return p > kLogClamp ? -(std::log(p) + 1.0) : -kLogFloor; });
}

LossValue dllp_total(const BagBatch& batch, double lambda_ent) {
  if (!(lambda_ent >= 0.0)) throw Error(ErrorKind::InvalidConfiguration, "lambda_ent must be non-negative");
  batch.validate();
  const double prop = proportion_ce(batch.priors, bag_posterior_means(batch.posteriors, batch.bag_sizes));
  if (lambda_ent == 0.0) return LossValue{prop, {{"l_prop", prop}, {"e_in", 0.0}}};
  const double ent = instance_entropy(batch.posteriors);
  return LossValue{prop + lambda_ent * ent, {{"l_prop", prop}, {"e_in", ent}}};
}

Matrix dllp_total_grad(const BagBatch& batch, double lambda_ent) {
  if (!(lambda_ent >= 0.0)) throw Error(ErrorKind::InvalidConfiguration, "lambda_ent must be non-negative");
  batch.validate();
  const Matrix means = bag_posterior_means(batch.posteriors, batch.bag_sizes);
  const Matrix gmeans = proportion_ce_grad(batch.priors, means);
  Matrix grad(batch.posteriors.rows(), batch.posteriors.cols());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < batch.bag_sizes.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(batch.bag_sizes[i]);
    for (Eigen::Index j = 0; j < n; ++j) grad.row(offset + j) = gmeans.row(static_cast<Eigen::Index>(i)) / n;
    offset += n;
  }
  if (lambda_ent > 0.0) grad += lambda_ent * instance_entropy_grad(batch.posteriors);
  return grad;
}

RowVector normalize_posterior(const RowVector& probs) {
  const Eigen::Index k = probs.size() - 1;
  if (k < 1) throw Error(ErrorKind::InvalidConfiguration, "posterior needs at least two entries");
  const double fake = probs(k);
  if (std::abs(1.0 - fake) <= 1e-12) return RowVector::Constant(k, 1.0 / k);
  return probs.head(k) / (1.0 - fake);
}

Matrix normalize_posterior(const Matrix& probs) {
  Matrix out(probs.rows(), probs.cols() - 1);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) out.row(i) = normalize_posterior(RowVector(probs.row(i)));
  return out;
}

void AdversarialBatch::validate() const {
  check_groups(real_logits.rows(), bag_sizes, priors.size());
  check_priors(priors, real_logits.cols());
  if (fake_logits.rows() == 0) throw Error(ErrorKind::InvalidConfiguration, "fake batch is empty");
  if (fake_logits.cols() != real_logits.cols()) {
    throw Error(ErrorKind::InvalidConfiguration, "real and fake logits differ in width");
  }
  if (!real_logits.allFinite() || !fake_logits.allFinite()) {
    throw Error(ErrorKind::NumericDomain, "non-finite logits");
  }
}

double proportion_lower_bound(const Matrix& real_logits, std::span<const std::size_t> bag_sizes,
                              std::span<const ProportionVector> priors) {
  check_groups(real_logits.rows(), bag_sizes, priors.size());
  double lb = 0.0;
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < bag_sizes.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(bag_sizes[i]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto z = real_logits.row(offset + j);
      const double lse = log_sum_exp(z, false);
      for (Eigen::Index k = 0; k < z.size(); ++k) {
        const double p = priors[i][static_cast<std::size_t>(k)];
        if (p > 0.0) lb += p * std::max(z(k) - lse, kLogFloor) / static_cast<double>(n);
      }
    }
    offset += n;
  }
  return lb;
}

LossValue llp_gan_disc_loss(const AdversarialBatch& batch, double lambda_sup) {
  if (!(lambda_sup >= 0.0)) throw Error(ErrorKind::InvalidConfiguration, "lambda_sup must be non-negative");
  batch.validate();
  double l_real = 0.0;
  Eigen::Index offset = 0;
  for (auto size : batch.bag_sizes) {
    const auto n = static_cast<Eigen::Index>(size);
    double bag = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto z = batch.real_logits.row(offset + j);
      bag += std::max(log_sum_exp(z, false) - log_sum_exp(z, true), kLogFloor);
    }
    l_real += bag / static_cast<double>(n);
    offset += n;
  }
  double l_fake = 0.0;
  for (Eigen::Index f = 0; f < batch.fake_logits.rows(); ++f) {
    l_fake += std::max(-log_sum_exp(batch.fake_logits.row(f), true), kLogFloor);
  }
  l_fake /= static_cast<double>(batch.fake_logits.rows());
  const double sup =
      lambda_sup == 0.0 ? 0.0 : lambda_sup * proportion_lower_bound(batch.real_logits, batch.bag_sizes, batch.priors);
  return LossValue{l_real + l_fake + sup, {{"l_real", l_real}, {"l_fake", l_fake}, {"lb_sup", sup}}};
}

AdversarialGrad llp_gan_disc_loss_grad(const AdversarialBatch& batch, double lambda_sup) {
  if (!(lambda_sup >= 0.0)) throw Error(ErrorKind::InvalidConfiguration, "lambda_sup must be non-negative");
  batch.validate();
  const Eigen::Index k = batch.real_logits.cols();
  AdversarialGrad grad{Matrix::Zero(batch.real_logits.rows(), k), Matrix::Zero(batch.fake_logits.rows(), k)};

  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < batch.bag_sizes.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(batch.bag_sizes[i]);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto z = batch.real_logits.row(offset + j);
      const double lse = log_sum_exp(z, false);
      const double lse0 = log_sum_exp(z, true);
      const RowVector normalized = (z.array() - lse).exp().matrix();
      const RowVector full = (z.array() - lse0).exp().matrix();
      auto g = grad.real_logits.row(offset + j);
      if (lse - lse0 > kLogFloor) g += inv_n * (normalized - full);
      if (lambda_sup > 0.0) {
        for (Eigen::Index c = 0; c < k; ++c) {
          const double p = batch.priors[i][static_cast<std::size_t>(c)];
          if (p == 0.0 || z(c) - lse <= kLogFloor) continue;
          RowVector d = -normalized;
          d(c) += 1.0;
          g += lambda_sup * p * inv_n * d;
        }
      }
    }
    offset += n;
  }
  const double inv_m = 1.0 / static_cast<double>(batch.fake_logits.rows());
  for (Eigen::Index f = 0; f < batch.fake_logits.rows(); ++f) {
    const auto z = batch.fake_logits.row(f);
    const double lse0 = log_sum_exp(z, true);
    if (-lse0 > kLogFloor) grad.fake_logits.row(f) = -inv_m * (z.array() - lse0).exp().matrix();
  }
  return grad;
}

double exact_proportion_term(const Matrix& real_probs, std::span<const std::size_t> bag_sizes,
                             std::span<const ProportionVector> priors) {
  check_groups(real_probs.rows(), bag_sizes, priors.size());
  const Matrix normalized = normalize_posterior(real_probs);
  return -proportion_ce(priors, bag_posterior_means(normalized, bag_sizes));
}

double feature_matching_loss(const RowVector& real_feature_mean, const RowVector& fake_feature_mean) {
  if (real_feature_mean.size() != fake_feature_mean.size()) {
    throw Error(ErrorKind::InvalidConfiguration, "feature dimensions differ");
  }
  return (real_feature_mean - fake_feature_mean).squaredNorm();
}

Matrix feature_matching_grad(const RowVector& real_feature_mean, const Matrix& fake_features) {
  if (real_feature_mean.size() != fake_features.cols()) {
    throw Error(ErrorKind::InvalidConfiguration, "feature dimensions differ");
  }
  const RowVector diff = fake_features.colwise().mean() - real_feature_mean;
  Matrix grad(fake_features.rows(), fake_features.cols());
  grad.rowwise() = (2.0 / static_cast<double>(fake_features.rows())) * diff;
  return grad;
}

}  // namespace llp
