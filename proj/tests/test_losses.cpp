#include "llp/error.hpp"
#include "llp/losses.hpp"
#include "llp/netzoo.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace llp;
using testing::numeric_gradient;
using testing::relative_error;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : values) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Logits whose over-parameterized softmax is `probs` (last entry = fake).
Matrix logits_for(const Matrix& probs) {
  const Eigen::Index k = probs.cols() - 1;
  Matrix z(probs.rows(), k);
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < k; ++j) z(i, j) = std::log(probs(i, j) / probs(i, k));
  return z;
}

ProportionVector pv(std::vector<double> v) { return ProportionVector{std::move(v)}; }

const double kLn2 = std::log(2.0);

}  // namespace

TEST_CASE("bag_posterior_mean") {
  CHECK(bag_posterior_mean(rows({{1, 0}, {0, 1}})).values == std::vector<double>{0.5, 0.5});
  CHECK(bag_posterior_mean(rows({{0.2, 0.8}, {0.2, 0.8}})).values == std::vector<double>{0.2, 0.8});
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Matrix p = softmax_rows(rng.normal_matrix(5, 4));
    CHECK(std::abs(RowVector(Eigen::Map<const RowVector>(bag_posterior_mean(p).values.data(), 4)).sum() - 1) < 1e-9);
  }
  try {
    bag_posterior_mean(Matrix(0, 3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidBag);
  }
}

TEST_CASE("proportion_ce examples") {
  const std::vector<ProportionVector> half{pv({0.5, 0.5})};
  CHECK(proportion_ce(half, rows({{0.5, 0.5}})) == doctest::Approx(kLn2));
  const std::vector<ProportionVector> onehot{pv({1.0, 0.0})};
  CHECK(proportion_ce(onehot, rows({{1.0, 0.0}})) == doctest::Approx(0.0));
  CHECK(proportion_ce(onehot, rows({{0.5, 0.5}})) == doctest::Approx(kLn2));
  CHECK(std::isfinite(proportion_ce(onehot, rows({{0.0, 1.0}}))));
  CHECK_THROWS_AS(proportion_ce(half, rows({{0.5, 0.5}, {0.5, 0.5}})), Error);
}

TEST_CASE("proportion_ce obeys the Gibbs inequality") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const int k = testing::uniform_int(rng, 2, 5);
    std::vector<ProportionVector> priors{testing::random_prior(rng, k)};
    double h = 0.0;
    for (double p : priors[0].values) h -= p > 0 ? p * std::log(p) : 0.0;
    const auto q = testing::random_prior(rng, k);
    Matrix means = Eigen::Map<const Matrix>(q.values.data(), 1, k);
    CHECK(proportion_ce(priors, means) >= h - 1e-12);
    Matrix same = Eigen::Map<const Matrix>(priors[0].values.data(), 1, k);
    CHECK(proportion_ce(priors, same) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("instance_entropy examples") {
  CHECK(instance_entropy(rows({{0, 1, 0}})) == doctest::Approx(0.0));
  CHECK(instance_entropy(rows({{0.25, 0.25, 0.25, 0.25}})) == doctest::Approx(std::log(4.0)));
  const Matrix a = rows({{0.2, 0.8}});
  const Matrix b = rows({{0.6, 0.4}});
  CHECK(instance_entropy(rows({{0.2, 0.8}, {0.6, 0.4}})) ==
        doctest::Approx(instance_entropy(a) + instance_entropy(b)));
  CHECK_THROWS_AS(instance_entropy(rows({{0.2, 0.7}})), Error);
}

TEST_CASE("dllp_total examples") {
  BagBatch batch{rows({{0.5, 0.5}}), {1}, {pv({0.5, 0.5})}};
  CHECK(dllp_total(batch, 0.0).value == proportion_ce(batch.priors, rows({{0.5, 0.5}})));
  const auto v = dllp_total(batch, 1.0);
  CHECK(v.value == doctest::Approx(2 * kLn2));
  CHECK(v.component("l_prop") == doctest::Approx(kLn2));
  CHECK(v.component("e_in") == doctest::Approx(kLn2));
  CHECK_THROWS_AS(v.component("l_real"), Error);
  try {
    dllp_total(batch, -0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfiguration);
  }
}

TEST_CASE("normalize_posterior examples") {
  const RowVector p = normalize_posterior(RowVector(rows({{0.2, 0.3, 0.1, 0.4}})));
  CHECK(p(0) == doctest::Approx(1.0 / 3.0));
  CHECK(p(1) == doctest::Approx(0.5));
  CHECK(p(2) == doctest::Approx(1.0 / 6.0));
  const RowVector fake = normalize_posterior(RowVector(rows({{0, 0, 0, 1}})));
  for (int k = 0; k < 3; ++k) CHECK(fake(k) == doctest::Approx(1.0 / 3.0));
  const RowVector real = normalize_posterior(RowVector(rows({{0.1, 0.6, 0.3, 0.0}})));
  CHECK(real(0) == doctest::Approx(0.1));
  CHECK(real(1) == doctest::Approx(0.6));
}

TEST_CASE("llp_gan_disc_loss hand example") {
  AdversarialBatch batch{logits_for(rows({{0.25, 0.25, 0.5}})), {1}, {pv({0.5, 0.5})},
                         logits_for(rows({{0.25, 0.25, 0.5}}))};
  const auto v = llp_gan_disc_loss(batch, 1.0);
  const double ln_half = std::log(0.5);
  CHECK(v.component("l_real") == doctest::Approx(ln_half));
  CHECK(v.component("l_fake") == doctest::Approx(ln_half));
  CHECK(v.component("lb_sup") == doctest::Approx(ln_half));
  CHECK(v.value == doctest::Approx(3 * ln_half));
  const auto no_sup = llp_gan_disc_loss(batch, 0.0);
  CHECK(no_sup.value == doctest::Approx(2 * ln_half));
  double sum = 0.0;
  for (const auto& [name, c] : v.components) sum += c;
  CHECK(std::abs(sum - v.value) < 1e-12);
}

TEST_CASE("lower bound is below the exact term") {
  const Matrix probs = rows({{0.4, 0.1, 0.5}, {0.1, 0.4, 0.5}});
  const std::vector<std::size_t> sizes{2};
  const std::vector<ProportionVector> priors{pv({0.5, 0.5})};
  const double lb = proportion_lower_bound(logits_for(probs), sizes, priors);
  CHECK(lb == doctest::Approx((std::log(0.8) + std::log(0.2)) / 2));
  CHECK(exact_proportion_term(probs, sizes, priors) == doctest::Approx(std::log(0.5)));
  CHECK(lb <= exact_proportion_term(probs, sizes, priors));
}

TEST_CASE("Jensen bound on random bags") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const int k = testing::uniform_int(rng, 2, 4);
    const int bags = testing::uniform_int(rng, 1, 3);
    std::vector<std::size_t> sizes;
    std::vector<ProportionVector> priors;
    for (int b = 0; b < bags; ++b) {
      sizes.push_back(static_cast<std::size_t>(testing::uniform_int(rng, 1, 5)));
      priors.push_back(testing::random_prior(rng, k));
    }
    std::size_t n = 0;
    for (auto s : sizes) n += s;
    const Matrix z = 2.0 * rng.normal_matrix(static_cast<Eigen::Index>(n), k);
    CHECK(proportion_lower_bound(z, sizes, priors) <= exact_proportion_term(overparam_softmax(z), sizes, priors) + 1e-12);
  }
}

TEST_CASE("identical posteriors within a bag make the bound tight") {
  Rng rng(4);
  const Matrix one = rng.normal_matrix(1, 3);
  Matrix z(4, 3);
  for (int i = 0; i < 4; ++i) z.row(i) = one.row(0);
  const std::vector<std::size_t> sizes{4};
  const std::vector<ProportionVector> priors{pv({0.25, 0.5, 0.25})};
  CHECK(proportion_lower_bound(z, sizes, priors) ==
        doctest::Approx(exact_proportion_term(overparam_softmax(z), sizes, priors)).epsilon(1e-12));
}

TEST_CASE("adversarial batch validation") {
  AdversarialBatch empty_fake{Matrix::Zero(2, 2), {2}, {pv({0.5, 0.5})}, Matrix(0, 2)};
  try {
    llp_gan_disc_loss(empty_fake, 1.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfiguration);
  }
  AdversarialBatch mismatch{Matrix::Zero(2, 2), {1, 1}, {pv({0.5, 0.5})}, Matrix::Zero(1, 2)};
  CHECK_THROWS_AS(llp_gan_disc_loss(mismatch, 1.0), Error);
}

TEST_CASE("losses stay finite on saturated outputs") {
  AdversarialBatch batch{rows({{60.0, -60.0}, {-60.0, 60.0}}), {2}, {pv({0.5, 0.5})}, rows({{80.0, 80.0}})};
  const auto v = llp_gan_disc_loss(batch, 1.0);
  CHECK(std::isfinite(v.value));
  const auto g = llp_gan_disc_loss_grad(batch, 1.0);
  CHECK(g.real_logits.allFinite());
  CHECK(g.fake_logits.allFinite());
  BagBatch onehot{rows({{1, 0}, {0, 1}}), {2}, {pv({1.0, 0.0})}};
  CHECK(std::isfinite(dllp_total(onehot, 1.0).value));
}

TEST_CASE("feature matching examples") {
  const RowVector a = RowVector::LinSpaced(4, 0.0, 1.0);
  CHECK(feature_matching_loss(a, a) == 0.0);
  RowVector e1 = RowVector::Zero(3), e2 = RowVector::Zero(3);
  e1(0) = 1;
  e2(1) = 1;
  CHECK(feature_matching_loss(e1, e2) == doctest::Approx(2.0));
  const RowVector d = RowVector::Constant(4, 0.5);
  CHECK(feature_matching_loss(a, a + d) == doctest::Approx(d.squaredNorm()));
  CHECK_THROWS_AS(feature_matching_loss(e1, a), Error);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const int k = testing::uniform_int(rng, 2, 4);
    const std::vector<std::size_t> sizes{2, 3, 1};
    std::vector<ProportionVector> priors;
    for (int b = 0; b < 3; ++b) priors.push_back(testing::random_prior(rng, k));

    const Matrix means = softmax_rows(rng.normal_matrix(3, k));
    auto ce = [&](const Matrix& m) { return proportion_ce(priors, m); };
    CHECK(relative_error(proportion_ce_grad(priors, means), numeric_gradient(ce, means)) < 1e-6);

    // Entropy composed with a softmax keeps the perturbed input on the simplex.
    const Matrix z = rng.normal_matrix(6, k);
    auto h = [&](const Matrix& logits) { return instance_entropy(softmax_rows(logits)); };
    const Matrix p = softmax_rows(z);
    CHECK(relative_error(softmax_rows_backward(p, instance_entropy_grad(p)), numeric_gradient(h, z)) < 1e-6);

    const double lambda = rng.uniform() * 2;
    auto dllp = [&](const Matrix& logits) {
      return dllp_total(BagBatch{softmax_rows(logits), sizes, priors}, lambda).value;
    };
    const Matrix dllp_grad = softmax_rows_backward(p, dllp_total_grad(BagBatch{p, sizes, priors}, lambda));
    CHECK(relative_error(dllp_grad, numeric_gradient(dllp, z)) < 1e-6);

    AdversarialBatch batch{rng.normal_matrix(6, k), sizes, priors, rng.normal_matrix(4, k)};
    const auto g = llp_gan_disc_loss_grad(batch, lambda);
    auto by_real = [&](const Matrix& real) {
      AdversarialBatch b = batch;
      b.real_logits = real;
      return llp_gan_disc_loss(b, lambda).value;
    };
    auto by_fake = [&](const Matrix& fake) {
      AdversarialBatch b = batch;
      b.fake_logits = fake;
      return llp_gan_disc_loss(b, lambda).value;
    };
    CHECK(relative_error(g.real_logits, numeric_gradient(by_real, batch.real_logits)) < 1e-6);
    CHECK(relative_error(g.fake_logits, numeric_gradient(by_fake, batch.fake_logits)) < 1e-6);

    const RowVector real_mean = rng.normal_matrix(1, 5);
    const Matrix fake = rng.normal_matrix(4, 5);
    auto fm = [&](const Matrix& f) { return feature_matching_loss(real_mean, f.colwise().mean()); };
    CHECK(relative_error(feature_matching_grad(real_mean, fake), numeric_gradient(fm, fake)) < 1e-6);
  }
}
