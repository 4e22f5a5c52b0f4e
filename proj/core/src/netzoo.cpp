#include "llp/netzoo.hpp"

#include "llp/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace llp {

using nlohmann::json;

namespace {

int resolved_padding(const LayerSpec& layer) { return layer.padding >= 0 ? layer.padding : layer.kernel / 2; }

LayerSpec dense(int units, Activation act, bool bn = false) {
  LayerSpec l;
  l.op = "dense";
  l.units = units;
  l.activation = act;
  l.batch_norm = bn;
  return l;
}

LayerSpec conv(int kernel, int channels, int stride, Activation act, bool bn = false) {
  LayerSpec l;
  l.op = "conv";
  l.kernel = kernel;
  l.units = channels;
  l.stride = stride;
  l.activation = act;
  l.batch_norm = bn;
  return l;
}

LayerSpec transpose_conv(int kernel, int channels, Activation act, bool bn) {
  LayerSpec l;
  l.op = "transpose_conv";
  l.kernel = kernel;
  l.units = channels;
  l.stride = 2;
  l.padding = kernel / 2;
  l.output_padding = 1;
  l.activation = act;
  l.batch_norm = bn;
  return l;
}

LayerSpec simple(const std::string& op, double rate = 0.0) {
  LayerSpec l;
  l.op = op;
  l.rate = rate;
  return l;
}

LayerSpec pool_bn(const std::string& op) {
  LayerSpec l = simple(op);
  l.kernel = 2;
  l.stride = 2;
  l.batch_norm = true;
  return l;
}

LayerSpec reshape(Shape target) {
  LayerSpec l = simple("reshape");
  l.shape = target;
  return l;
}

// Appends the primitives of one spec row; returns the new running shape.
Shape expand(const LayerSpec& layer, Shape in, Rng& rng, std::vector<LayerPtr>* out) {
  auto push = [&](LayerPtr p) {
    const Shape s = p->output_shape();
    if (out) out->push_back(std::move(p));
    return s;
  };
  Shape shape = in;
  if (layer.op == "dense") {
    if (layer.units < 1) throw Error(ErrorKind::InvalidConfiguration, "dense width must be positive");
    shape = push(make_dense(in.size(), layer.units, rng));
  } else if (layer.op == "conv") {
    if (layer.units < 1 || layer.kernel < 1 || layer.stride < 1) {
      throw Error(ErrorKind::InvalidConfiguration, "bad convolution parameters");
    }
    shape = push(make_conv(in, layer.units, layer.kernel, layer.stride, resolved_padding(layer), rng));
  } else if (layer.op == "transpose_conv") {
    if (layer.units < 1 || layer.kernel < 1 || layer.stride < 1) {
      throw Error(ErrorKind::InvalidConfiguration, "bad transposed convolution parameters");
    }
    shape = push(make_transpose_conv(in, layer.units, layer.kernel, layer.stride, resolved_padding(layer),
                                     layer.output_padding, rng));
  } else if (layer.op == "dropout") {
    shape = push(make_dropout(in, layer.rate));
  } else if (layer.op == "global_mean_pool") {
    shape = push(make_global_mean_pool(in));
  } else if (layer.op == "max_pool") {
    shape = push(make_max_pool(in, layer.kernel, layer.stride));
  } else if (layer.op == "reshape") {
    shape = push(make_reshape(in, layer.shape));
  } else {
    throw Error(ErrorKind::InvalidConfiguration, "unknown layer op \"" + layer.op + "\"");
  }
  if (layer.batch_norm) shape = push(make_batch_norm(shape));
  if (layer.activation != Activation::None) shape = push(make_activation(shape, layer.activation));
  return shape;
}

std::vector<double> flatten(const std::vector<Matrix*>& mats) {
  std::vector<double> out;
  for (auto* m : mats) out.insert(out.end(), m->data(), m->data() + m->size());
  return out;
}

void unflatten(const std::vector<Matrix*>& mats, const std::vector<double>& values) {
  std::size_t total = 0;
  for (auto* m : mats) total += static_cast<std::size_t>(m->size());
  if (total != values.size()) {
    throw Error(ErrorKind::Integrity, "expected " + std::to_string(total) + " values, got " +
                                          std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (auto* m : mats) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), m->size(), m->data());
    offset += static_cast<std::size_t>(m->size());
  }
}

}  // namespace

Shape ArchitectureSpec::validate() const {
  if (input_shape.size() < 1) throw Error(ErrorKind::InvalidConfiguration, "input shape is empty");
  if (layers.empty()) throw Error(ErrorKind::InvalidConfiguration, "architecture has no layers");
  if (feature_tap < 0 || feature_tap >= static_cast<int>(layers.size())) {
    throw Error(ErrorKind::InvalidConfiguration,
                "feature tap " + std::to_string(feature_tap) + " does not address a layer");
  }
  if (noise_dim > 0 && input_shape != Shape{1, 1, noise_dim}) {
    throw Error(ErrorKind::InvalidConfiguration, "generator input must be 1x1xnoise_dim");
  }
  Rng scratch(0);
  Shape shape = input_shape;
  for (const auto& layer : layers) {
    // Geometry only: dense/conv weights are not materialized here.
    if (layer.op == "dense") {
      shape = Shape{1, 1, layer.units};
      if (layer.units < 1) throw Error(ErrorKind::InvalidConfiguration, "dense width must be positive");
    } else if (layer.op == "conv" || layer.op == "transpose_conv") {
      std::vector<LayerPtr> probe;
      LayerSpec single = layer;
      single.units = 1;
      shape = expand(single, shape, scratch, &probe);
      shape.channels = layer.units;
    } else {
      shape = expand(layer, shape, scratch, nullptr);
    }
  }
  return shape;
}

json to_json(const ArchitectureSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json row = {{"op", l.op}};
    if (l.units) row["units"] = l.units;
    if (l.op == "conv" || l.op == "transpose_conv" || l.op == "max_pool") {
      row["kernel"] = l.kernel;
      row["stride"] = l.stride;
      row["padding"] = l.padding;
    }
    if (l.output_padding) row["output_padding"] = l.output_padding;
    if (l.batch_norm) row["batch_norm"] = true;
    if (l.op == "dropout") row["rate"] = l.rate;
    if (l.activation != Activation::None) row["activation"] = to_string(l.activation);
    if (l.op == "reshape") row["shape"] = {l.shape.channels, l.shape.height, l.shape.width};
    layers.push_back(row);
  }
  return {{"name", spec.name},
          {"input_shape", {spec.input_shape.channels, spec.input_shape.height, spec.input_shape.width}},
          {"noise_dim", spec.noise_dim},
          {"feature_tap", spec.feature_tap},
          {"layers", layers}};
}

ArchitectureSpec architecture_from_json(const json& j) {
  try {
    ArchitectureSpec spec;
    spec.name = j.value("name", std::string{});
    auto shape = j.at("input_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw Error(ErrorKind::InvalidConfiguration, "input_shape must be [C, H, W]");
    spec.input_shape = Shape{shape[0], shape[1], shape[2]};
    spec.noise_dim = j.value("noise_dim", 0);
    spec.feature_tap = j.value("feature_tap", -1);
    for (const auto& row : j.at("layers")) {
      LayerSpec l;
      l.op = row.at("op").get<std::string>();
      l.units = row.value("units", 0);
      l.kernel = row.value("kernel", 1);
      l.stride = row.value("stride", 1);
      l.padding = row.value("padding", -1);
      l.output_padding = row.value("output_padding", 0);
      l.batch_norm = row.value("batch_norm", false);
      l.rate = row.value("rate", 0.0);
      l.activation = parse_activation(row.value("activation", std::string("none")));
      if (row.contains("shape")) {
        auto s = row.at("shape").get<std::vector<int>>();
        if (s.size() != 3) throw Error(ErrorKind::InvalidConfiguration, "reshape target must be [C, H, W]");
        l.shape = Shape{s[0], s[1], s[2]};
      }
      spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfiguration, std::string("architecture JSON: ") + e.what());
  }
}

ArchitectureSpec load_architecture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidConfiguration, "cannot read architecture " + path);
  try {
    return architecture_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(0, path + ": " + e.what());
  }
}

ArchitectureSpec builtin_discriminator(const std::string& name, int num_classes) {
  constexpr auto relu = Activation::Relu;
  constexpr auto lrelu = Activation::LeakyRelu;
  ArchitectureSpec spec;
  spec.name = name;
  if (name == "blobs") {
    spec.input_shape = Shape{1, 1, 2};
    spec.layers = {dense(64, relu), dense(64, relu), dense(num_classes, Activation::None)};
    spec.feature_tap = 1;
  } else if (name == "mnist") {
    spec.input_shape = Shape{1, 28, 28};
    spec.layers = {conv(5, 32, 2, relu), conv(3, 64, 2, relu), conv(1, 32, 1, relu), dense(1024, relu),
                   dense(num_classes, Activation::None)};
    spec.feature_tap = 3;
  } else if (name == "cifar10") {
    spec.input_shape = Shape{3, 32, 32};
    spec.layers = {simple("dropout", 0.2), conv(3, 64, 1, relu),    conv(3, 64, 1, relu),
                   conv(3, 64, 2, relu),    simple("dropout", 0.5), conv(3, 128, 1, relu),
                   conv(3, 128, 1, relu),   conv(3, 128, 2, relu),  simple("dropout", 0.5),
                   conv(3, 256, 1, relu),   conv(1, 128, 1, relu),  conv(1, 64, 1, relu),
                   simple("global_mean_pool"), dense(num_classes, Activation::None)};
    spec.feature_tap = 12;
  } else if (name == "mnist-baseline") {
    spec.input_shape = Shape{1, 28, 28};
    spec.layers = {conv(5, 32, 1, relu),       pool_bn("max_pool"),       conv(3, 64, 1, relu, true),
                   conv(3, 64, 1, relu, true), pool_bn("max_pool"),       conv(3, 128, 1, relu, true),
                   conv(1, 10, 1, relu, true), simple("global_mean_pool"), dense(num_classes, Activation::None, true)};
    spec.layers[7].batch_norm = true;
    spec.feature_tap = 7;
  } else if (name == "cifar10-baseline") {
    spec.input_shape = Shape{3, 32, 32};
    spec.layers = {conv(3, 96, 1, lrelu, true),  conv(3, 96, 1, lrelu, true),  conv(3, 96, 1, lrelu, true),
                   pool_bn("max_pool"),          conv(3, 192, 1, lrelu, true), conv(3, 192, 1, lrelu, true),
                   conv(3, 192, 1, lrelu, true), pool_bn("max_pool"),          conv(3, 192, 1, lrelu, true),
                   conv(1, 192, 1, lrelu, true), conv(1, 10, 1, lrelu, true),  simple("global_mean_pool"),
                   dense(num_classes, Activation::None)};
    spec.layers[11].batch_norm = true;
    spec.feature_tap = 11;
  } else {
    throw Error(ErrorKind::InvalidConfiguration, "unknown discriminator architecture " + name);
  }
  return spec;
}

ArchitectureSpec builtin_generator(const std::string& name, int noise_dim) {
  constexpr auto relu = Activation::Relu;
  ArchitectureSpec spec;
  spec.name = name + "-generator";
  if (name == "blobs") {
    spec.noise_dim = noise_dim > 0 ? noise_dim : 8;
    spec.layers = {dense(64, relu, true), dense(64, relu, true), dense(2, Activation::Tanh),
                   reshape(Shape{1, 1, 2})};
  } else if (name == "mnist") {
    spec.noise_dim = noise_dim > 0 ? noise_dim : 100;
    spec.layers = {dense(500, relu, true), dense(500, relu, true), dense(784, Activation::Tanh, true),
                   reshape(Shape{1, 28, 28})};
  } else if (name == "cifar10") {
    spec.noise_dim = noise_dim > 0 ? noise_dim : 100;
    spec.layers = {dense(4 * 4 * 512, relu, true), reshape(Shape{512, 4, 4}),
                   transpose_conv(5, 256, relu, true), transpose_conv(5, 128, relu, true),
                   transpose_conv(5, 3, Activation::Tanh, false)};
  } else {
    throw Error(ErrorKind::InvalidConfiguration, "unknown generator architecture " + name);
  }
  spec.input_shape = Shape{1, 1, spec.noise_dim};
  spec.feature_tap = static_cast<int>(spec.layers.size()) - 1;
  return spec;
}

Network::Network(ArchitectureSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  Shape shape = spec_.input_shape;
  for (const auto& layer : spec_.layers) {
    shape = expand(layer, shape, rng, &layers_);
    spec_end_.push_back(layers_.size());
  }
  output_shape_ = shape;
  tap_end_ = spec_end_[static_cast<std::size_t>(spec_.feature_tap)];
}

Matrix Network::forward(const Matrix& x, const ForwardPass& pass) {
  if (x.cols() != spec_.input_shape.size()) {
    throw Error(ErrorKind::InvalidConfiguration,
                spec_.name + " expects inputs of shape " + to_string(spec_.input_shape) + " (" +
                    std::to_string(spec_.input_shape.size()) + " values), got " + std::to_string(x.cols()));
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, pass);
    if (i + 1 == tap_end_) tap_output_ = h;
  }
  return h;
}

Matrix Network::backward_range(std::size_t end, Matrix grad) {
  for (std::size_t i = end; i-- > 0;) grad = layers_[i]->backward(grad);
  return grad;
}

Matrix Network::backward(const Matrix& grad_out) { return backward_range(layers_.size(), grad_out); }

Matrix Network::backward_from_tap(const Matrix& grad_tap) { return backward_range(tap_end_, grad_tap); }

std::vector<Param> Network::params() {
  std::vector<Param> out;
  for (auto& layer : layers_) {
    for (auto& p : layer->params()) out.push_back(p);
  }
  return out;
}

std::vector<Matrix*> Network::buffers() {
  std::vector<Matrix*> out;
  for (auto& layer : layers_) {
    for (auto* b : layer->buffers()) out.push_back(b);
  }
  return out;
}

void Network::zero_grad() {
  for (auto& p : params()) p.grad->setZero();
}

std::vector<double> Network::flat_parameters() {
  std::vector<Matrix*> mats;
  for (auto& p : params()) mats.push_back(p.value);
  return flatten(mats);
}

void Network::set_flat_parameters(const std::vector<double>& values) {
  std::vector<Matrix*> mats;
  for (auto& p : params()) mats.push_back(p.value);
  unflatten(mats, values);
}

std::vector<double> Network::flat_buffers() { return flatten(buffers()); }

void Network::set_flat_buffers(const std::vector<double>& values) { unflatten(buffers(), values); }

std::size_t Network::num_parameters() {
  std::size_t n = 0;
  for (auto& p : params()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

void NoiseBatch::validate() const {
  if (samples.cols() != dimension) throw Error(ErrorKind::InvalidConfiguration, "noise dimension mismatch");
  if (!samples.allFinite()) throw Error(ErrorKind::NumericDomain, "noise batch has non-finite entries");
}

NoiseBatch sample_noise(Eigen::Index count, int dimension, Rng& rng) {
  return NoiseBatch{rng.normal_matrix(count, dimension), dimension};
}

RowVector overparam_softmax(const RowVector& logits) {
  Matrix m = logits;
  return overparam_softmax(m).row(0);
}

Matrix overparam_softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw Error(ErrorKind::NumericDomain, "non-finite logits");
  const Eigen::Index k = logits.cols();
  Matrix probs(logits.rows(), k + 1);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = std::max(logits.row(i).maxCoeff(), 0.0);
    probs.row(i).head(k) = (logits.row(i).array() - shift).exp().matrix();
    probs(i, k) = std::exp(-shift);
    probs.row(i) /= probs.row(i).sum();
  }
  return probs;
}

Matrix overparam_softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  const Eigen::Index k = probs.cols() - 1;
  Matrix out(probs.rows(), k);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double inner = probs.row(i).dot(grad_probs.row(i));
    out.row(i) = (probs.row(i).head(k).array() * (grad_probs.row(i).head(k).array() - inner)).matrix();
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  if (!logits.allFinite()) throw Error(ErrorKind::NumericDomain, "non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.row(i) = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs) {
  Matrix out(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double inner = probs.row(i).dot(grad_probs.row(i));
    out.row(i) = (probs.row(i).array() * (grad_probs.row(i).array() - inner)).matrix();
  }
  return out;
}

Discriminator::Discriminator(const ArchitectureSpec& spec, int num_classes, std::uint64_t seed)
    : net_(spec, seed), num_classes_(num_classes) {
  if (num_classes < 2) throw Error(ErrorKind::InvalidConfiguration, "K must be at least 2");
  if (net_.output_shape().size() != num_classes) {
    throw Error(ErrorKind::InvalidConfiguration,
                "discriminator " + spec.name + " outputs " + std::to_string(net_.output_shape().size()) +
                    " logits, expected K = " + std::to_string(num_classes));
  }
}

DiscriminatorBatch Discriminator::forward(const Matrix& images, const ForwardPass& pass) {
  DiscriminatorBatch out;
  out.logits = net_.forward(images, pass);
  out.probs = overparam_softmax(out.logits);
  out.features = net_.tap_output();
  return out;
}

Matrix Discriminator::backward_probs(const DiscriminatorBatch& out, const Matrix& grad_probs) {
  return net_.backward(overparam_softmax_backward(out.probs, grad_probs));
}

Generator::Generator(const ArchitectureSpec& spec, std::uint64_t seed) : net_(spec, seed) {
  if (spec.noise_dim < 1) throw Error(ErrorKind::InvalidConfiguration, "generator needs a noise dimension");
  const LayerSpec* last = nullptr;
  for (const auto& l : spec.layers) {
    if (l.op != "reshape") last = &l;
  }
  if (last == nullptr || last->activation != Activation::Tanh) {
    throw Error(ErrorKind::InvalidConfiguration, "generator output must end in tanh to stay within [-1, 1]");
  }
}

Matrix Generator::forward(const NoiseBatch& noise, const ForwardPass& pass) {
  if (noise.dimension != noise_dim() || noise.samples.cols() != noise_dim()) {
    throw Error(ErrorKind::InvalidConfiguration,
                "generator expects " + std::to_string(noise_dim()) + "-dim noise, got " +
                    std::to_string(noise.samples.cols()));
  }
  noise.validate();
  return net_.forward(noise.samples, pass);
}

Discriminator build_discriminator(const ArchitectureSpec& spec, int num_classes, std::uint64_t seed) {
  return Discriminator(spec, num_classes, seed);
}

Generator build_generator(const ArchitectureSpec& spec, std::uint64_t seed) { return Generator(spec, seed); }

DiscriminatorBatch discriminator_forward(Discriminator& model, const Matrix& images, const ForwardPass& pass) {
  return model.forward(images, pass);
}

}  // namespace llp
