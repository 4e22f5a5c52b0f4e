#pragma once

#include "llp/layers.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace llp {

/// One row of an architecture table. A row expands to its operation, an
/// optional batch normalization and its activation.
struct LayerSpec {
  std::string op;          ///< dense | conv | transpose_conv | dropout | global_mean_pool | max_pool | reshape
  int units = 0;           ///< dense width or output channels
  int kernel = 1;
  int stride = 1;
  int padding = -1;        ///< -1 means kernel/2
  int output_padding = 0;  ///< transpose_conv only
  bool batch_norm = false;
  double rate = 0.0;       ///< dropout only
  Activation activation = Activation::None;
  Shape shape;             ///< reshape target

  bool operator==(const LayerSpec&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  Shape input_shape;
  int noise_dim = 0;  ///< generators only; input_shape is then 1x1xnoise_dim
  std::vector<LayerSpec> layers;
  int feature_tap = -1;  ///< index into layers whose output is f(x)

  bool operator==(const ArchitectureSpec&) const = default;

  /// Walks the layer list; throws InvalidConfiguration on a bad tap index or
  /// inconsistent geometry. Returns the output shape.
  Shape validate() const;
};

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& json);
ArchitectureSpec load_architecture(const std::string& path);

/// Built-in discriminators: "blobs", "mnist", "cifar10" (also used for SVHN and
/// CIFAR-100), and supervised references "mnist-baseline", "cifar10-baseline".
/// The final dense width is set to `num_classes`.
ArchitectureSpec builtin_discriminator(const std::string& name, int num_classes);
/// Built-in generators: "blobs", "mnist", "cifar10".
ArchitectureSpec builtin_generator(const std::string& name, int noise_dim = 0);

/// Sequential network built from an ArchitectureSpec.
class Network {
 public:
  Network(ArchitectureSpec spec, std::uint64_t seed);

  Matrix forward(const Matrix& x, const ForwardPass& pass);
  /// Output of the feature-tap layer from the most recent forward().
  const Matrix& tap_output() const { return tap_output_; }

  Matrix backward(const Matrix& grad_out);
  /// Backpropagates a gradient that enters at the feature tap.
  Matrix backward_from_tap(const Matrix& grad_tap);

  std::vector<Param> params();
  std::vector<Matrix*> buffers();
  void zero_grad();

  std::vector<double> flat_parameters();
  void set_flat_parameters(const std::vector<double>& values);
  std::vector<double> flat_buffers();
  void set_flat_buffers(const std::vector<double>& values);
  std::size_t num_parameters();

  const ArchitectureSpec& spec() const { return spec_; }
  Shape input_shape() const { return spec_.input_shape; }
  Shape output_shape() const { return output_shape_; }

 private:
  Matrix backward_range(std::size_t end, Matrix grad);

  ArchitectureSpec spec_;
  std::vector<LayerPtr> layers_;
  std::vector<std::size_t> spec_end_;  // one past the last primitive of each spec row
  std::size_t tap_end_ = 0;
  Shape output_shape_;
  Matrix tap_output_;
};

struct DiscriminatorOutput {
  RowVector probs;     ///< length K+1; last entry is the fake class
  RowVector features;  ///< f(x)
  RowVector logits;    ///< length K, before the fixed zero is appended
};

struct DiscriminatorBatch {
  Matrix probs;
  Matrix features;
  Matrix logits;

  Eigen::Index size() const { return logits.rows(); }
  DiscriminatorOutput at(Eigen::Index i) const { return {probs.row(i), features.row(i), logits.row(i)}; }
};

struct NoiseBatch {
  Matrix samples;
  int dimension = 0;

  Eigen::Index size() const { return samples.rows(); }
  void validate() const;
};

NoiseBatch sample_noise(Eigen::Index count, int dimension, Rng& rng);

/// Softmax over the logits with a constant zero appended; last entry is P_D(K+1|x).
RowVector overparam_softmax(const RowVector& logits);
Matrix overparam_softmax(const Matrix& logits);
/// Gradient w.r.t. the K logits given a gradient w.r.t. the K+1 probabilities.
Matrix overparam_softmax_backward(const Matrix& probs, const Matrix& grad_probs);

/// Plain K-way softmax per row.
Matrix softmax_rows(const Matrix& logits);
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs);

/// (K+1)-way classifier with a feature tap.
class Discriminator {
 public:
  Discriminator(const ArchitectureSpec& spec, int num_classes, std::uint64_t seed);

  DiscriminatorBatch forward(const Matrix& images, const ForwardPass& pass);
  /// Backpropagates through the network; returns the gradient w.r.t. the input batch.
  Matrix backward_logits(const Matrix& grad_logits) { return net_.backward(grad_logits); }
  Matrix backward_probs(const DiscriminatorBatch& out, const Matrix& grad_probs);
  Matrix backward_features(const Matrix& grad_features) { return net_.backward_from_tap(grad_features); }

  int num_classes() const { return num_classes_; }
  Network& network() { return net_; }
  const Network& network() const { return net_; }

 private:
  Network net_;
  int num_classes_;
};

/// Maps noise to images in [-1, 1].
class Generator {
 public:
  Generator(const ArchitectureSpec& spec, std::uint64_t seed);

  Matrix forward(const NoiseBatch& noise, const ForwardPass& pass);
  Matrix backward(const Matrix& grad_images) { return net_.backward(grad_images); }

  int noise_dim() const { return net_.spec().noise_dim; }
  Shape image_shape() const { return net_.output_shape(); }
  Network& network() { return net_; }
  const Network& network() const { return net_; }

 private:
  Network net_;
};

Discriminator build_discriminator(const ArchitectureSpec& spec, int num_classes, std::uint64_t seed);
Generator build_generator(const ArchitectureSpec& spec, std::uint64_t seed);

/// Runs the discriminator over `images` and returns one output per row.
DiscriminatorBatch discriminator_forward(Discriminator& model, const Matrix& images,
                                         const ForwardPass& pass = {});

}  // namespace llp
