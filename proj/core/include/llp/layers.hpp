#pragma once

#include "llp/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace llp {

/// Trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Matrix* value = nullptr;
  Matrix* grad = nullptr;
};

struct ForwardPass {
  bool training = false;
  Rng* rng = nullptr;  ///< required when training with dropout
};

enum class Activation { None, Relu, LeakyRelu, Tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation activation);

/// A differentiable stage. forward() caches whatever backward() needs, so
/// backward() always refers to the most recent forward() call. Gradients are
/// accumulated into the parameter grads; callers zero them between steps.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Matrix forward(const Matrix& x, const ForwardPass& pass) = 0;
  virtual Matrix backward(const Matrix& grad_out) = 0;

  virtual std::vector<Param> params() { return {}; }
  /// Non-trainable state that still belongs in checkpoints (running statistics).
  virtual std::vector<Matrix*> buffers() { return {}; }

  virtual Shape output_shape() const = 0;
  virtual std::string kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

LayerPtr make_dense(int in, int out, Rng& rng);
LayerPtr make_conv(Shape in, int out_channels, int kernel, int stride, int padding, Rng& rng);
/// Transposed convolution; output side is (in-1)*stride - 2*padding + kernel + output_padding.
LayerPtr make_transpose_conv(Shape in, int out_channels, int kernel, int stride, int padding,
                             int output_padding, Rng& rng);
LayerPtr make_batch_norm(Shape in);
LayerPtr make_activation(Shape in, Activation activation);
LayerPtr make_dropout(Shape in, double rate);
LayerPtr make_global_mean_pool(Shape in);
LayerPtr make_max_pool(Shape in, int kernel, int stride);
/// Pure reinterpretation of the flat feature row with a new shape.
LayerPtr make_reshape(Shape in, Shape out);

}  // namespace llp
