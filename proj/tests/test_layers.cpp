#include "llp/error.hpp"
#include "llp/layers.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace llp;
using testing::numeric_gradient;
using testing::relative_error;

namespace {

// Checks input and parameter gradients of f(x) = sum(W .* layer(x)).
void check_layer_gradients(Layer& layer, const Matrix& x, Rng& rng, double tol = 1e-6) {
  const ForwardPass pass{true, nullptr};
  const Matrix y = layer.forward(x, pass);
  const Matrix w = rng.normal_matrix(y.rows(), y.cols());
  auto objective = [&](const Matrix& input) { return (layer.forward(input, pass).array() * w.array()).sum(); };

  for (auto& p : layer.params()) p.grad->setZero();
  layer.forward(x, pass);
  const Matrix dx = layer.backward(w);
  CHECK(relative_error(dx, numeric_gradient(objective, x)) < tol);

  for (auto& p : layer.params()) {
    const Matrix analytic = *p.grad;
    Matrix saved = *p.value;
    auto by_param = [&](const Matrix& v) {
      *p.value = v;
      const double out = objective(x);
      *p.value = saved;
      return out;
    };
    CAPTURE(p.name);
    CHECK(relative_error(analytic, numeric_gradient(by_param, saved)) < tol);
  }
}

double pixel(const Matrix& row, Shape s, int c, int y, int x) {
  if (y < 0 || x < 0 || y >= s.height || x >= s.width) return 0.0;
  return row(0, (c * s.height + y) * s.width + x);
}

}  // namespace

TEST_CASE("dense forward is an affine map") {
  Rng rng(1);
  auto dense = make_dense(3, 2, rng);
  auto params = dense->params();
  *params[0].value << 1, 2, 3, 4, 5, 6;
  *params[1].value << 0.5, -1;
  Matrix x(1, 3);
  x << 1, 0, -1;
  const Matrix y = dense->forward(x, {});
  CHECK(y(0, 0) == doctest::Approx(1 - 5 + 0.5));
  CHECK(y(0, 1) == doctest::Approx(2 - 6 - 1));
  CHECK(dense->output_shape() == Shape{1, 1, 2});
}

TEST_CASE("convolution matches a direct loop") {
  Rng rng(2);
  const Shape in{2, 5, 6};
  for (int stride : {1, 2}) {
    auto conv = make_conv(in, 3, 3, stride, 1, rng);
    const Shape out = conv->output_shape();
    CHECK(out.height == (5 + 2 - 3) / stride + 1);
    const Matrix x = rng.normal_matrix(1, in.size());
    const Matrix y = conv->forward(x, {});
    auto params = conv->params();
    const Matrix& w = *params[0].value;
    const Matrix& b = *params[1].value;
    double worst = 0.0;
    for (int o = 0; o < 3; ++o) {
      for (int oy = 0; oy < out.height; ++oy) {
        for (int ox = 0; ox < out.width; ++ox) {
          double acc = b(o, 0);
          for (int c = 0; c < 2; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                acc += w(o, (c * 3 + ky) * 3 + kx) * pixel(x, in, c, oy * stride - 1 + ky, ox * stride - 1 + kx);
          worst = std::max(worst, std::abs(acc - y(0, (o * out.height + oy) * out.width + ox)));
        }
      }
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("transposed convolution matches a scatter loop") {
  Rng rng(3);
  const Shape in{3, 4, 4};
  auto tconv = make_transpose_conv(in, 2, 5, 2, 2, 1, rng);
  const Shape out = tconv->output_shape();
  CHECK(out == Shape{2, 8, 8});
  const Matrix x = rng.normal_matrix(1, in.size());
  const Matrix y = tconv->forward(x, {});
  auto params = tconv->params();
  const Matrix& w = *params[0].value;
  const Matrix& b = *params[1].value;
  Matrix expected(1, out.size());
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < out.spatial(); ++i) expected(0, o * out.spatial() + i) = b(o, 0);
  for (int c = 0; c < 3; ++c)
    for (int iy = 0; iy < 4; ++iy)
      for (int ix = 0; ix < 4; ++ix)
        for (int o = 0; o < 2; ++o)
          for (int ky = 0; ky < 5; ++ky)
            for (int kx = 0; kx < 5; ++kx) {
              const int yy = iy * 2 - 2 + ky, xx = ix * 2 - 2 + kx;
              if (yy < 0 || xx < 0 || yy >= 8 || xx >= 8) continue;
              expected(0, (o * 8 + yy) * 8 + xx) += x(0, (c * 4 + iy) * 4 + ix) * w(c, (o * 5 + ky) * 5 + kx);
            }
  CHECK((expected - y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(4);
  SUBCASE("dense") {
    auto l = make_dense(4, 3, rng);
    check_layer_gradients(*l, rng.normal_matrix(5, 4), rng);
  }
  SUBCASE("conv stride 1") {
    auto l = make_conv(Shape{2, 4, 4}, 3, 3, 1, 1, rng);
    check_layer_gradients(*l, rng.normal_matrix(2, 32), rng);
  }
  SUBCASE("conv stride 2") {
    auto l = make_conv(Shape{2, 5, 5}, 2, 5, 2, 2, rng);
    check_layer_gradients(*l, rng.normal_matrix(2, 50), rng);
  }
  SUBCASE("transposed conv") {
    auto l = make_transpose_conv(Shape{2, 3, 3}, 2, 5, 2, 2, 1, rng);
    check_layer_gradients(*l, rng.normal_matrix(2, 18), rng);
  }
  SUBCASE("batch norm over channels") {
    auto l = make_batch_norm(Shape{3, 2, 2});
    check_layer_gradients(*l, rng.normal_matrix(4, 12), rng);
  }
  SUBCASE("batch norm over features") {
    auto l = make_batch_norm(Shape{1, 1, 5});
    check_layer_gradients(*l, rng.normal_matrix(6, 5), rng);
  }
  SUBCASE("activations") {
    for (auto act : {Activation::Relu, Activation::LeakyRelu, Activation::Tanh}) {
      auto l = make_activation(Shape{1, 1, 7}, act);
      check_layer_gradients(*l, rng.normal_matrix(3, 7), rng);
    }
  }
  SUBCASE("pooling") {
    auto mean = make_global_mean_pool(Shape{3, 4, 4});
    check_layer_gradients(*mean, rng.normal_matrix(2, 48), rng);
    auto max = make_max_pool(Shape{2, 4, 4}, 2, 2);
    check_layer_gradients(*max, rng.normal_matrix(2, 32), rng);
  }
}

TEST_CASE("batch norm tracks running statistics") {
  Rng rng(5);
  auto bn = make_batch_norm(Shape{2, 1, 1});
  Matrix x(4, 2);
  x << 1, 10, 2, 20, 3, 30, 4, 40;
  const Matrix y = bn->forward(x, ForwardPass{true, nullptr});
  CHECK(std::abs(y.col(0).mean()) < 1e-12);
  auto buffers = bn->buffers();
  REQUIRE(buffers.size() == 2);
  CHECK((*buffers[0])(0, 0) == doctest::Approx(0.25));
  CHECK((*buffers[0])(0, 1) == doctest::Approx(2.5));
  // Evaluation mode uses the running statistics, so one row is enough.
  const Matrix single = bn->forward(x.topRows(1), ForwardPass{false, nullptr});
  CHECK(single.allFinite());
}

TEST_CASE("dropout scales kept units and is the identity in evaluation") {
  Rng rng(6);
  auto drop = make_dropout(Shape{1, 1, 1000}, 0.5);
  const Matrix x = Matrix::Ones(4, 1000);
  CHECK(drop->forward(x, {}) == x);
  const Matrix y = drop->forward(x, ForwardPass{true, &rng});
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK((y.data()[i] == 0.0 || y.data()[i] == 2.0));
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.05));
  const Matrix g = drop->backward(Matrix::Ones(4, 1000));
  CHECK(g == y);
  CHECK_THROWS_AS(drop->forward(x, ForwardPass{true, nullptr}), Error);
}

TEST_CASE("geometry errors are reported") {
  Rng rng(7);
  CHECK_THROWS_AS(make_conv(Shape{1, 2, 2}, 1, 5, 1, 0, rng), Error);
  CHECK_THROWS_AS(make_reshape(Shape{1, 1, 6}, Shape{1, 2, 2}), Error);
  auto dense = make_dense(3, 2, rng);
  CHECK_THROWS_AS(dense->forward(Matrix::Zero(1, 4), {}), Error);
  CHECK(parse_activation("lrelu") == Activation::LeakyRelu);
  CHECK_THROWS_AS(parse_activation("gelu"), Error);
}
