#include "llp/layers.hpp"

#include "llp/error.hpp"

#include <cmath>
#include <limits>

namespace llp {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

void fan_in_normal(Matrix& w, int fan_in, Rng& rng) {
  const double scale = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
}

int conv_out(int size, int kernel, int stride, int padding) {
  return (size + 2 * padding - kernel) / stride + 1;
}

// Unfolds one CHW image into a (C*k*k) x (out_h*out_w) patch matrix.
Matrix im2col(const double* image, Shape in, int kernel, int stride, int padding, int out_h, int out_w) {
  Matrix col = Matrix::Zero(in.channels * kernel * kernel, out_h * out_w);
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= in.width) continue;
            col(row, oy * out_w + ox) = image[(c * in.height + iy) * in.width + ix];
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatters patches back, accumulating overlaps.
void col2im(const Matrix& col, Shape in, int kernel, int stride, int padding, int out_h, int out_w,
            double* image) {
  for (int c = 0; c < in.channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= in.width) continue;
            image[(c * in.height + iy) * in.width + ix] += col(row, oy * out_w + ox);
          }
        }
      }
    }
  }
}

class Dense final : public Layer {
 public:
  Dense(int in, int out, Rng& rng) : weight_(in, out), bias_(Matrix::Zero(1, out)) {
    fan_in_normal(weight_, in, rng);
    weight_grad_ = Matrix::Zero(in, out);
    bias_grad_ = Matrix::Zero(1, out);
  }

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    if (x.cols() != weight_.rows()) {
      throw Error(ErrorKind::InvalidConfiguration,
                  "dense input width " + std::to_string(x.cols()) + ", expected " +
                      std::to_string(weight_.rows()));
    }
    input_ = x;
    Matrix y = x * weight_;
    y.rowwise() += bias_.row(0);
    return y;
  }

  Matrix backward(const Matrix& g) override {
    weight_grad_.noalias() += input_.transpose() * g;
    bias_grad_.row(0) += g.colwise().sum();
    return g * weight_.transpose();
  }

  std::vector<Param> params() override {
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
  }
  Shape output_shape() const override { return Shape{1, 1, static_cast<int>(weight_.cols())}; }
  std::string kind() const override { return "dense"; }

 private:
  Matrix weight_, bias_, weight_grad_, bias_grad_;
  Matrix input_;
};

class Conv final : public Layer {
 public:
  Conv(Shape in, int out_channels, int kernel, int stride, int padding, Rng& rng)
      : in_(in), kernel_(kernel), stride_(stride), padding_(padding) {
    out_ = Shape{out_channels, conv_out(in.height, kernel, stride, padding),
                 conv_out(in.width, kernel, stride, padding)};
    if (out_.height < 1 || out_.width < 1) {
      throw Error(ErrorKind::InvalidConfiguration, "convolution collapses input " + to_string(in));
    }
    const int fan_in = in.channels * kernel * kernel;
    weight_.resize(out_channels, fan_in);
    fan_in_normal(weight_, fan_in, rng);
    bias_ = Matrix::Zero(out_channels, 1);
    weight_grad_ = Matrix::Zero(out_channels, fan_in);
    bias_grad_ = Matrix::Zero(out_channels, 1);
  }

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    if (x.cols() != in_.size()) {
      throw Error(ErrorKind::InvalidConfiguration, "convolution expects input " + to_string(in_));
    }
    cols_.resize(static_cast<std::size_t>(x.rows()));
    Matrix y(x.rows(), out_.size());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      auto& col = cols_[static_cast<std::size_t>(n)];
      col = im2col(x.row(n).data(), in_, kernel_, stride_, padding_, out_.height, out_.width);
      MutMap out(y.row(n).data(), out_.channels, out_.spatial());
      out.noalias() = weight_ * col;
      out.colwise() += bias_.col(0);
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix dx = Matrix::Zero(g.rows(), in_.size());
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      ConstMap gout(g.row(n).data(), out_.channels, out_.spatial());
      const auto& col = cols_[static_cast<std::size_t>(n)];
      weight_grad_.noalias() += gout * col.transpose();
      bias_grad_.col(0) += gout.rowwise().sum();
      Matrix dcol = weight_.transpose() * gout;
      col2im(dcol, in_, kernel_, stride_, padding_, out_.height, out_.width, dx.row(n).data());
    }
    return dx;
  }

  std::vector<Param> params() override {
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
  }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "conv"; }

 private:
  Shape in_, out_;
  int kernel_, stride_, padding_;
  Matrix weight_, bias_, weight_grad_, bias_grad_;
  std::vector<Matrix> cols_;
};

class TransposeConv final : public Layer {
 public:
  TransposeConv(Shape in, int out_channels, int kernel, int stride, int padding, int output_padding,
                Rng& rng)
      : in_(in), kernel_(kernel), stride_(stride), padding_(padding) {
    out_ = Shape{out_channels, (in.height - 1) * stride - 2 * padding + kernel + output_padding,
                 (in.width - 1) * stride - 2 * padding + kernel + output_padding};
    if (out_.height < 1 || out_.width < 1 ||
        conv_out(out_.height, kernel, stride, padding) != in.height ||
        conv_out(out_.width, kernel, stride, padding) != in.width) {
      throw Error(ErrorKind::InvalidConfiguration,
                  "inconsistent transposed convolution geometry for input " + to_string(in));
    }
    const int fan_in = in.channels * kernel * kernel / (stride * stride);
    weight_.resize(in.channels, out_channels * kernel * kernel);
    fan_in_normal(weight_, std::max(fan_in, 1), rng);
    bias_ = Matrix::Zero(out_channels, 1);
    weight_grad_ = Matrix::Zero(weight_.rows(), weight_.cols());
    bias_grad_ = Matrix::Zero(out_channels, 1);
  }

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    if (x.cols() != in_.size()) {
      throw Error(ErrorKind::InvalidConfiguration,
                  "transposed convolution expects input " + to_string(in_));
    }
    input_ = x;
    Matrix y = Matrix::Zero(x.rows(), out_.size());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      ConstMap xin(x.row(n).data(), in_.channels, in_.spatial());
      Matrix col = weight_.transpose() * xin;
      col2im(col, out_, kernel_, stride_, padding_, in_.height, in_.width, y.row(n).data());
      MutMap out(y.row(n).data(), out_.channels, out_.spatial());
      out.colwise() += bias_.col(0);
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix dx(g.rows(), in_.size());
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      ConstMap gout(g.row(n).data(), out_.channels, out_.spatial());
      bias_grad_.col(0) += gout.rowwise().sum();
      Matrix gcol = im2col(g.row(n).data(), out_, kernel_, stride_, padding_, in_.height, in_.width);
      ConstMap xin(input_.row(n).data(), in_.channels, in_.spatial());
      weight_grad_.noalias() += xin * gcol.transpose();
      MutMap dxn(dx.row(n).data(), in_.channels, in_.spatial());
      dxn.noalias() = weight_ * gcol;
    }
    return dx;
  }

  std::vector<Param> params() override {
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
  }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "transpose_conv"; }

 private:
  Shape in_, out_;
  int kernel_, stride_, padding_;
  Matrix weight_, bias_, weight_grad_, bias_grad_;
  Matrix input_;
};

// Per-channel normalization; dense inputs are treated as channels of size 1.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(Shape in) : shape_(in) {
    channels_ = in.spatial() == 1 ? in.size() : in.channels;
    spatial_ = in.spatial() == 1 ? 1 : in.spatial();
    gamma_ = Matrix::Ones(1, channels_);
    beta_ = Matrix::Zero(1, channels_);
    gamma_grad_ = Matrix::Zero(1, channels_);
    beta_grad_ = Matrix::Zero(1, channels_);
    running_mean_ = Matrix::Zero(1, channels_);
    running_var_ = Matrix::Ones(1, channels_);
  }

  Matrix forward(const Matrix& x, const ForwardPass& pass) override {
    training_ = pass.training;
    const Eigen::Index batch = x.rows();
    Matrix mean(1, channels_), var(1, channels_);
    if (training_) {
      const double count = static_cast<double>(batch * spatial_);
      mean.setZero();
      var.setZero();
      for (Eigen::Index n = 0; n < batch; ++n) {
        ConstMap xn(x.row(n).data(), channels_, spatial_);
        mean.row(0) += xn.rowwise().sum().transpose();
      }
      mean /= count;
      for (Eigen::Index n = 0; n < batch; ++n) {
        ConstMap xn(x.row(n).data(), channels_, spatial_);
        var.row(0) += (xn.colwise() - mean.row(0).transpose()).array().square().rowwise().sum().matrix().transpose();
      }
      var /= count;
      running_mean_ = (1.0 - kMomentum) * running_mean_ + kMomentum * mean;
      running_var_ = (1.0 - kMomentum) * running_var_ + kMomentum * var;
    } else {
      mean = running_mean_;
      var = running_var_;
    }
    inv_std_ = (var.array() + kEps).rsqrt().matrix();
    normalized_.resize(batch, x.cols());
    Matrix y(batch, x.cols());
    for (Eigen::Index n = 0; n < batch; ++n) {
      ConstMap xn(x.row(n).data(), channels_, spatial_);
      MutMap hn(normalized_.row(n).data(), channels_, spatial_);
      MutMap yn(y.row(n).data(), channels_, spatial_);
      hn = ((xn.colwise() - mean.row(0).transpose()).array().colwise() * inv_std_.row(0).transpose().array()).matrix();
      yn = ((hn.array().colwise() * gamma_.row(0).transpose().array()).colwise() + beta_.row(0).transpose().array()).matrix();
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    const Eigen::Index batch = g.rows();
    Eigen::ArrayXd sum_g = Eigen::ArrayXd::Zero(channels_);
    Eigen::ArrayXd sum_gh = Eigen::ArrayXd::Zero(channels_);
    for (Eigen::Index n = 0; n < batch; ++n) {
      ConstMap gn(g.row(n).data(), channels_, spatial_);
      ConstMap hn(normalized_.row(n).data(), channels_, spatial_);
      sum_g += gn.rowwise().sum().array();
      sum_gh += (gn.array() * hn.array()).rowwise().sum();
    }
    gamma_grad_.row(0) += sum_gh.matrix().transpose();
    beta_grad_.row(0) += sum_g.matrix().transpose();

    const Eigen::ArrayXd gamma = gamma_.row(0).transpose().array();
    const Eigen::ArrayXd inv_std = inv_std_.row(0).transpose().array();
    Matrix dx(batch, g.cols());
    const double count = static_cast<double>(batch * spatial_);
    for (Eigen::Index n = 0; n < batch; ++n) {
      ConstMap gn(g.row(n).data(), channels_, spatial_);
      ConstMap hn(normalized_.row(n).data(), channels_, spatial_);
      MutMap dn(dx.row(n).data(), channels_, spatial_);
      if (training_) {
        auto centered = (gn.array().colwise() - sum_g / count) - (hn.array().colwise() * (sum_gh / count));
        dn = (centered.colwise() * (gamma * inv_std)).matrix();
      } else {
        dn = (gn.array().colwise() * (gamma * inv_std)).matrix();
      }
    }
    return dx;
  }

  std::vector<Param> params() override {
    return {{"gamma", &gamma_, &gamma_grad_}, {"beta", &beta_, &beta_grad_}};
  }
  std::vector<Matrix*> buffers() override { return {&running_mean_, &running_var_}; }
  Shape output_shape() const override { return shape_; }
  std::string kind() const override { return "batch_norm"; }

 private:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;
  Shape shape_;
  Eigen::Index channels_ = 0, spatial_ = 0;
  Matrix gamma_, beta_, gamma_grad_, beta_grad_, running_mean_, running_var_;
  Matrix inv_std_, normalized_;
  bool training_ = false;
};

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(Shape in, Activation activation) : shape_(in), activation_(activation) {}

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    switch (activation_) {
      case Activation::None: output_ = x; break;
      case Activation::Relu: output_ = x.cwiseMax(0.0); break;
      case Activation::LeakyRelu: output_ = x.unaryExpr([](double v) { return v > 0.0 ? v : kSlope * v; }); break;
      case Activation::Tanh: output_ = x.array().tanh().matrix(); break;
    }
    return output_;
  }

  Matrix backward(const Matrix& g) override {
    switch (activation_) {
      case Activation::None: return g;
      case Activation::Relu:
        return g.binaryExpr(output_, [](double gv, double y) { return y > 0.0 ? gv : 0.0; });
      case Activation::LeakyRelu:
        return g.binaryExpr(output_, [](double gv, double y) { return y > 0.0 ? gv : kSlope * gv; });
      case Activation::Tanh:
        return g.binaryExpr(output_, [](double gv, double y) { return gv * (1.0 - y * y); });
    }
    return g;
  }

  Shape output_shape() const override { return shape_; }
  std::string kind() const override { return "activation"; }

 private:
  static constexpr double kSlope = 0.2;
  Shape shape_;
  Activation activation_;
  Matrix output_;
};

class Dropout final : public Layer {
 public:
  Dropout(Shape in, double rate) : shape_(in), rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw Error(ErrorKind::InvalidConfiguration, "dropout rate must lie in [0, 1)");
  }

  Matrix forward(const Matrix& x, const ForwardPass& pass) override {
    active_ = pass.training && rate_ > 0.0;
    if (!active_) return x;
    if (pass.rng == nullptr) throw Error(ErrorKind::InvalidConfiguration, "training dropout needs an RNG");
    mask_.resize(x.rows(), x.cols());
    const double keep = 1.0 - rate_;
    for (Eigen::Index i = 0; i < mask_.size(); ++i) {
      mask_.data()[i] = pass.rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
    return x.cwiseProduct(mask_);
  }

  Matrix backward(const Matrix& g) override { return active_ ? Matrix(g.cwiseProduct(mask_)) : g; }

  Shape output_shape() const override { return shape_; }
  std::string kind() const override { return "dropout"; }

 private:
  Shape shape_;
  double rate_;
  bool active_ = false;
  Matrix mask_;
};

class GlobalMeanPool final : public Layer {
 public:
  explicit GlobalMeanPool(Shape in) : in_(in) {}

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    Matrix y(x.rows(), in_.channels);
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      ConstMap xn(x.row(n).data(), in_.channels, in_.spatial());
      y.row(n) = xn.rowwise().mean().transpose();
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix dx(g.rows(), in_.size());
    const double scale = 1.0 / in_.spatial();
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      MutMap dn(dx.row(n).data(), in_.channels, in_.spatial());
      for (int c = 0; c < in_.channels; ++c) dn.row(c).setConstant(g(n, c) * scale);
    }
    return dx;
  }

  Shape output_shape() const override { return Shape{1, 1, in_.channels}; }
  std::string kind() const override { return "global_mean_pool"; }

 private:
  Shape in_;
};

class MaxPool final : public Layer {
 public:
  MaxPool(Shape in, int kernel, int stride) : in_(in), kernel_(kernel), stride_(stride) {
    out_ = Shape{in.channels, conv_out(in.height, kernel, stride, 0), conv_out(in.width, kernel, stride, 0)};
  }

  Matrix forward(const Matrix& x, const ForwardPass&) override {
    Matrix y(x.rows(), out_.size());
    argmax_.resize(static_cast<std::size_t>(x.rows() * out_.size()));
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      const double* img = x.row(n).data();
      for (int c = 0; c < in_.channels; ++c) {
        for (int oy = 0; oy < out_.height; ++oy) {
          for (int ox = 0; ox < out_.width; ++ox) {
            double best = -std::numeric_limits<double>::infinity();
            int best_idx = 0;
            for (int ky = 0; ky < kernel_; ++ky) {
              for (int kx = 0; kx < kernel_; ++kx) {
                const int idx = (c * in_.height + oy * stride_ + ky) * in_.width + ox * stride_ + kx;
                if (img[idx] > best) {
                  best = img[idx];
                  best_idx = idx;
                }
              }
            }
            const int o = (c * out_.height + oy) * out_.width + ox;
            y(n, o) = best;
            argmax_[static_cast<std::size_t>(n * out_.size() + o)] = best_idx;
          }
        }
      }
    }
    return y;
  }

  Matrix backward(const Matrix& g) override {
    Matrix dx = Matrix::Zero(g.rows(), in_.size());
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
      for (int o = 0; o < out_.size(); ++o) {
        dx(n, argmax_[static_cast<std::size_t>(n * out_.size() + o)]) += g(n, o);
      }
    }
    return dx;
  }

  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "max_pool"; }

 private:
  Shape in_, out_;
  int kernel_, stride_;
  std::vector<int> argmax_;
};

class Reshape final : public Layer {
 public:
  Reshape(Shape in, Shape out) : out_(out) {
    if (in.size() != out.size()) {
      throw Error(ErrorKind::InvalidConfiguration, "cannot reshape " + to_string(in) + " to " + to_string(out));
    }
  }
  Matrix forward(const Matrix& x, const ForwardPass&) override { return x; }
  Matrix backward(const Matrix& g) override { return g; }
  Shape output_shape() const override { return out_; }
  std::string kind() const override { return "reshape"; }

 private:
  Shape out_;
};

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "none" || name.empty()) return Activation::None;
  if (name == "relu") return Activation::Relu;
  if (name == "lrelu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorKind::InvalidConfiguration, "unknown activation " + name);
}

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "lrelu";
    case Activation::Tanh: return "tanh";
  }
  return "none";
}

LayerPtr make_dense(int in, int out, Rng& rng) { return std::make_unique<Dense>(in, out, rng); }
LayerPtr make_conv(Shape in, int out_channels, int kernel, int stride, int padding, Rng& rng) {
  return std::make_unique<Conv>(in, out_channels, kernel, stride, padding, rng);
}
LayerPtr make_transpose_conv(Shape in, int out_channels, int kernel, int stride, int padding,
                             int output_padding, Rng& rng) {
  return std::make_unique<TransposeConv>(in, out_channels, kernel, stride, padding, output_padding, rng);
}
LayerPtr make_batch_norm(Shape in) { return std::make_unique<BatchNorm>(in); }
LayerPtr make_activation(Shape in, Activation activation) {
  return std::make_unique<ActivationLayer>(in, activation);
}
LayerPtr make_dropout(Shape in, double rate) { return std::make_unique<Dropout>(in, rate); }
LayerPtr make_global_mean_pool(Shape in) { return std::make_unique<GlobalMeanPool>(in); }
LayerPtr make_max_pool(Shape in, int kernel, int stride) { return std::make_unique<MaxPool>(in, kernel, stride); }
LayerPtr make_reshape(Shape in, Shape out) { return std::make_unique<Reshape>(in, out); }

}  // namespace llp
