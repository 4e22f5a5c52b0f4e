#include "llp/trainer.hpp"

#include "llp/checkpoint.hpp"
#include "llp/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace llp {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kTrainerFormat = "llp-trainer";

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_number(const std::string& field) {
  if (field.empty()) return kNaN;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(0, "bad number in trace: " + field);
  }
  return v;
}

std::vector<std::size_t> epoch_order(std::size_t bags, std::uint64_t seed, long epoch) {
  std::vector<std::size_t> order(bags);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 engine(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), engine);
  return order;
}

json row_to_json(const MetricRow& row) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"step", row.step},          {"epoch", row.epoch},     {"l_real", num(row.l_real)},
          {"l_fake", num(row.l_fake)}, {"lb_sup", num(row.lb_sup)}, {"fm", num(row.fm)},
          {"dllp", num(row.dllp)},     {"entropy", num(row.entropy)}, {"test_error", num(row.test_error)}};
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "llp-gan") return Algorithm::LlpGan;
  if (name == "dllp") return Algorithm::Dllp;
  throw Error(ErrorKind::InvalidConfiguration, "unknown algorithm " + name + " (expected llp-gan or dllp)");
}

std::string to_string(Algorithm algo) { return algo == Algorithm::LlpGan ? "llp-gan" : "dllp"; }

void TrainConfig::validate() const {
  if (iterations < 1) throw Error(ErrorKind::InvalidConfiguration, "iterations must be at least 1");
  if (bags_per_step < 1) throw Error(ErrorKind::InvalidConfiguration, "bags per step must be at least 1");
  if (fake_batch < 0) throw Error(ErrorKind::InvalidConfiguration, "fake batch size must be non-negative");
  if (!(lambda_sup >= 0.0) || !(lambda_ent >= 0.0)) {
    throw Error(ErrorKind::InvalidConfiguration, "lambda weights must be non-negative");
  }
  if (!(optimizer.learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfiguration, "step size must be positive");
  if (checkpoint_every < 0) throw Error(ErrorKind::InvalidConfiguration, "checkpoint cadence must be non-negative");
}

json to_json(const TrainConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"lambda_sup", c.lambda_sup},
          {"lambda_ent", c.lambda_ent},
          {"iterations", c.iterations},
          {"bags_per_step", c.bags_per_step},
          {"fake_batch", c.fake_batch},
          {"literal_noise", c.literal_noise},
          {"learning_rate", c.optimizer.learning_rate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"epsilon", c.optimizer.epsilon},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir.string()}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.algorithm = parse_algorithm(j.value("algorithm", std::string("llp-gan")));
  c.lambda_sup = j.value("lambda_sup", c.lambda_sup);
  c.lambda_ent = j.value("lambda_ent", c.lambda_ent);
  c.iterations = j.value("iterations", c.iterations);
  c.bags_per_step = j.value("bags_per_step", c.bags_per_step);
  c.fake_batch = j.value("fake_batch", c.fake_batch);
  c.literal_noise = j.value("literal_noise", c.literal_noise);
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.checkpoint_dir = j.value("checkpoint_dir", std::string{});
  c.validate();
  return c;
}

std::string trace_to_csv(const std::vector<MetricRow>& trace, bool with_wallclock) {
  std::ostringstream out;
  out << kTraceHeader << '\n';
  for (const auto& r : trace) {
    out << r.step << ',' << r.epoch << ',' << format_number(r.l_real) << ',' << format_number(r.l_fake) << ','
        << format_number(r.lb_sup) << ',' << format_number(r.fm) << ',' << format_number(r.dllp) << ','
        << format_number(r.entropy) << ',' << format_number(r.test_error) << ','
        << (with_wallclock ? format_number(r.wallclock_s) : std::string{}) << '\n';
  }
  return out.str();
}

std::vector<MetricRow> trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 1;
  if (!std::getline(in, line) || line != kTraceHeader) throw ParseError(1, "missing trace header");
  std::vector<MetricRow> out;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream cells(line);
    while (std::getline(cells, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 10) throw ParseError(number, "expected 10 trace columns");
    MetricRow r;
    r.step = static_cast<long>(parse_number(fields[0]));
    r.epoch = static_cast<long>(parse_number(fields[1]));
    r.l_real = parse_number(fields[2]);
    r.l_fake = parse_number(fields[3]);
    r.lb_sup = parse_number(fields[4]);
    r.fm = parse_number(fields[5]);
    r.dllp = parse_number(fields[6]);
    r.entropy = parse_number(fields[7]);
    r.test_error = parse_number(fields[8]);
    r.wallclock_s = parse_number(fields[9]);
    out.push_back(r);
  }
  return out;
}

std::vector<int> predict_classes(Discriminator& model, const Matrix& features, Eigen::Index chunk) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index start = 0; start < features.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, features.rows() - start);
    const auto batch = model.forward(features.middleRows(start, n), ForwardPass{false, nullptr});
    const Matrix posterior = normalize_posterior(batch.probs);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < posterior.cols(); ++k) {
        if (posterior(i, k) > posterior(i, best)) best = k;
      }
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

Trainer::Trainer(TrainConfig config, BagDataset bags, FeatureTable features, Discriminator discriminator,
                 std::optional<Generator> generator, Evaluator evaluator)
    : config_(std::move(config)),
      bags_(std::move(bags)),
      features_(std::move(features)),
      discriminator_(std::move(discriminator)),
      generator_(std::move(generator)),
      evaluator_(std::move(evaluator)),
      d_optimizer_(config_.optimizer),
      g_optimizer_(config_.optimizer),
      rng_(config_.seed) {
  config_.validate();
  if (bags_.bags.empty()) throw Error(ErrorKind::InvalidConfiguration, "no bags to train on");
  if (bags_.num_classes != discriminator_.num_classes()) {
    throw Error(ErrorKind::InvalidConfiguration, "bag K differs from discriminator K");
  }
  if (features_.shape != discriminator_.network().input_shape()) {
    throw Error(ErrorKind::InvalidConfiguration, "features of shape " + to_string(features_.shape) +
                                                     " do not match discriminator input " +
                                                     to_string(discriminator_.network().input_shape()));
  }
  for (const auto& bag : bags_.bags) {
    for (auto idx : bag.instance_indices) {
      if (idx >= features_.size()) throw Error(ErrorKind::InvalidConfiguration, "bag index outside the features");
    }
  }
  if (config_.algorithm == Algorithm::LlpGan) {
    if (!generator_) throw Error(ErrorKind::InvalidConfiguration, "LLP-GAN needs a generator");
    if (generator_->image_shape() != features_.shape) {
      throw Error(ErrorKind::InvalidConfiguration, "generator output shape differs from the data shape");
    }
  }
}

long Trainer::steps_per_epoch() const {
  const auto n = static_cast<long>(bags_.bags.size());
  return (n + config_.bags_per_step - 1) / config_.bags_per_step;
}

long Trainer::fake_count() const {
  if (config_.literal_noise) return static_cast<long>(features_.size());
  if (config_.fake_batch > 0) return config_.fake_batch;
  return static_cast<long>(config_.bags_per_step) * bags_.bag_size;
}

Trainer::StepBatch Trainer::gather(long step) const {
  const long spe = steps_per_epoch();
  const auto order = epoch_order(bags_.bags.size(), config_.seed, step / spe);
  const auto first = static_cast<std::size_t>((step % spe) * config_.bags_per_step);
  const auto last = std::min(order.size(), first + static_cast<std::size_t>(config_.bags_per_step));
  StepBatch batch;
  std::size_t rows = 0;
  for (std::size_t b = first; b < last; ++b) rows += bags_.bags[order[b]].size();
  batch.real.resize(static_cast<Eigen::Index>(rows), features_.features.cols());
  Eigen::Index r = 0;
  for (std::size_t b = first; b < last; ++b) {
    const auto& bag = bags_.bags[order[b]];
    for (auto idx : bag.instance_indices) batch.real.row(r++) = features_.features.row(static_cast<Eigen::Index>(idx));
    batch.bag_sizes.push_back(bag.size());
    batch.priors.push_back(bag.proportions);
  }
  return batch;
}

MetricRow Trainer::gan_step(const StepBatch& batch) {
  auto& gen = *generator_;
  const ForwardPass train{true, &rng_};
  const Eigen::Index real_rows = batch.real.rows();
  const NoiseBatch noise = sample_noise(fake_count(), gen.noise_dim(), rng_);
  state_.last_fake_count = noise.size();

  // Discriminator ascent on L_real + L_fake + lambda_sup * LB.
  const Matrix fakes = gen.forward(noise, train);
  Matrix joint(real_rows + fakes.rows(), batch.real.cols());
  joint << batch.real, fakes;
  discriminator_.network().zero_grad();
  const auto out = discriminator_.forward(joint, train);
  AdversarialBatch adversarial{out.logits.topRows(real_rows), batch.bag_sizes, batch.priors,
                               out.logits.bottomRows(fakes.rows())};
  MetricRow row;
  const LossValue value = llp_gan_disc_loss(adversarial, config_.lambda_sup);
  row.l_real = value.component("l_real");
  row.l_fake = value.component("l_fake");
  row.lb_sup = value.component("lb_sup");
  const Matrix real_probs = out.probs.topRows(real_rows);
  row.dllp = -exact_proportion_term(real_probs, batch.bag_sizes, batch.priors);
  row.entropy = instance_entropy(normalize_posterior(real_probs));
  check_finite(row);

  const auto grad = llp_gan_disc_loss_grad(adversarial, config_.lambda_sup);
  Matrix descent(joint.rows(), grad.real_logits.cols());
  descent << -grad.real_logits, -grad.fake_logits;
  discriminator_.backward_logits(descent);
  d_optimizer_.step(discriminator_.network().params());
  ++state_.d_updates;

  // Generator descent on feature matching against the updated discriminator.
  gen.network().zero_grad();
  const Matrix regenerated = gen.forward(noise, train);
  const RowVector real_mean = discriminator_.forward(batch.real, train).features.colwise().mean();
  const auto fake_out = discriminator_.forward(regenerated, train);
  row.fm = feature_matching_loss(real_mean, fake_out.features.colwise().mean());
  check_finite(row);
  const Matrix image_grad = discriminator_.backward_features(feature_matching_grad(real_mean, fake_out.features));
  gen.backward(image_grad);
  g_optimizer_.step(gen.network().params());
  ++state_.g_updates;
  return row;
}

MetricRow Trainer::dllp_step(const StepBatch& batch) {
  discriminator_.network().zero_grad();
  const auto out = discriminator_.forward(batch.real, ForwardPass{true, &rng_});
  BagBatch bag_batch{softmax_rows(out.logits), batch.bag_sizes, batch.priors};
  const LossValue value = dllp_total(bag_batch, config_.lambda_ent);
  MetricRow row;
  row.l_real = row.l_fake = row.lb_sup = row.fm = kNaN;
  row.dllp = value.value;
  row.entropy = config_.lambda_ent > 0.0 ? value.component("e_in") : instance_entropy(bag_batch.posteriors);
  check_finite(row);
  const Matrix grad = dllp_total_grad(bag_batch, config_.lambda_ent);
  discriminator_.backward_logits(softmax_rows_backward(bag_batch.posteriors, grad));
  d_optimizer_.step(discriminator_.network().params());
  ++state_.d_updates;
  return row;
}

void Trainer::check_finite(const MetricRow& row) const {
  const bool gan = config_.algorithm == Algorithm::LlpGan;
  const bool ok = std::isfinite(row.dllp) && std::isfinite(row.entropy) &&
                  (!gan || (std::isfinite(row.l_real) && std::isfinite(row.l_fake) && std::isfinite(row.lb_sup) &&
                            !std::isgreater(std::abs(row.fm), std::numeric_limits<double>::max())));
  if (ok) return;
  json snapshot = row_to_json(row);
  snapshot["step"] = state_.step + 1;
  snapshot["d_updates"] = state_.d_updates;
  snapshot["g_updates"] = state_.g_updates;
  throw DivergenceError("non-finite loss at step " + std::to_string(state_.step + 1), snapshot.dump());
}

void Trainer::run(long steps) {
  const long spe = steps_per_epoch();
  const long end = std::min(config_.iterations, state_.step + std::max(steps, 0L));
  while (state_.step < end) {
    const auto started = std::chrono::steady_clock::now();
    const StepBatch batch = gather(state_.step);
    MetricRow row;
    try {
      row = config_.algorithm == Algorithm::LlpGan ? gan_step(batch) : dllp_step(batch);
    } catch (const DivergenceError&) {
      throw;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NumericDomain) throw;
      json snapshot = {{"step", state_.step + 1}, {"d_updates", state_.d_updates}, {"g_updates", state_.g_updates},
                       {"reason", e.what()}};
      throw DivergenceError("non-finite activations at step " + std::to_string(state_.step + 1), snapshot.dump());
    }
    row.step = state_.step + 1;
    row.epoch = state_.step / spe + 1;
    elapsed_s_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    row.wallclock_s = elapsed_s_;
    row.test_error = kNaN;
    if (row.step % spe == 0 && evaluator_) row.test_error = evaluator_(discriminator_);
    state_.trace.push_back(row);
    ++state_.step;
    if (config_.checkpoint_every > 0 && state_.step % config_.checkpoint_every == 0 &&
        !config_.checkpoint_dir.empty()) {
      std::filesystem::create_directories(config_.checkpoint_dir);
      save_checkpoint(config_.checkpoint_dir / ("step_" + std::to_string(state_.step) + ".ckpt"));
    }
  }
}

void Trainer::save_checkpoint(const std::filesystem::path& path) {
  json payload = {
      {"config", to_json(config_)},
      {"bags", {{"source", bags_.source}, {"seed", bags_.seed}, {"bag_size", bags_.bag_size}, {"n", bags_.size()}}},
      {"discriminator", {{"num_classes", discriminator_.num_classes()}, {"state", network_state(discriminator_.network())}}},
      {"generator", generator_ ? network_state(generator_->network()) : json(nullptr)},
      {"optimizer_d", d_optimizer_.state()},
      {"optimizer_g", g_optimizer_.state()},
      {"rng", rng_.state()},
      {"elapsed_s", elapsed_s_},
      {"state",
       {{"step", state_.step},
        {"d_updates", state_.d_updates},
        {"g_updates", state_.g_updates},
        {"last_fake_count", state_.last_fake_count},
        {"trace", trace_to_csv(state_.trace)}}}};
  write_container(path, kTrainerFormat, payload);
}

Trainer Trainer::restore(const std::filesystem::path& path, BagDataset bags, FeatureTable features,
                         Evaluator evaluator) {
  const json payload = read_container(path, kTrainerFormat);
  try {
    const auto& meta = payload.at("bags");
    if (meta.at("source").get<std::string>() != bags.source || meta.at("seed").get<std::uint64_t>() != bags.seed ||
        meta.at("n").get<std::size_t>() != bags.size()) {
      throw Error(ErrorKind::InvalidConfiguration, "checkpoint was trained on different bags");
    }
    TrainConfig config = train_config_from_json(payload.at("config"));
    const auto& d = payload.at("discriminator");
    Discriminator disc(architecture_from_json(d.at("state").at("spec")), d.at("num_classes").get<int>(), 0);
    load_network_state(disc.network(), d.at("state"));
    std::optional<Generator> gen;
    if (!payload.at("generator").is_null()) {
      gen.emplace(architecture_from_json(payload.at("generator").at("spec")), 0);
      load_network_state(gen->network(), payload.at("generator"));
    }
    Trainer trainer(config, std::move(bags), std::move(features), std::move(disc), std::move(gen),
                    std::move(evaluator));
    trainer.d_optimizer_.restore(payload.at("optimizer_d"), trainer.discriminator_.network().params());
    if (trainer.generator_) {
      trainer.g_optimizer_.restore(payload.at("optimizer_g"), trainer.generator_->network().params());
    }
    trainer.rng_.restore(payload.at("rng").get<std::string>());
    trainer.elapsed_s_ = payload.at("elapsed_s").get<double>();
    const auto& s = payload.at("state");
    trainer.state_.step = s.at("step").get<long>();
    trainer.state_.d_updates = s.at("d_updates").get<long>();
    trainer.state_.g_updates = s.at("g_updates").get<long>();
    trainer.state_.last_fake_count = s.at("last_fake_count").get<long>();
    trainer.state_.trace = trace_from_csv(s.at("trace").get<std::string>());
    if (trainer.state_.step > config.iterations) throw Error(ErrorKind::Integrity, "step counter exceeds L");
    return trainer;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Integrity, std::string("malformed trainer checkpoint: ") + e.what());
  }
}

TrainState train_llp_gan(const BagDataset& bags, const FeatureTable& features, Discriminator discriminator,
                         Generator generator, TrainConfig config, Evaluator evaluator) {
  config.algorithm = Algorithm::LlpGan;
  Trainer trainer(std::move(config), bags, features, std::move(discriminator), std::move(generator),
                  std::move(evaluator));
  trainer.run_to_end();
  return trainer.state();
}

TrainState train_dllp(const BagDataset& bags, const FeatureTable& features, Discriminator discriminator,
                      TrainConfig config, Evaluator evaluator) {
  config.algorithm = Algorithm::Dllp;
  Trainer trainer(std::move(config), bags, features, std::move(discriminator), std::nullopt, std::move(evaluator));
  trainer.run_to_end();
  return trainer.state();
}

void checkpoint_save(Trainer& trainer, const std::filesystem::path& path) { trainer.save_checkpoint(path); }

Trainer checkpoint_restore(const std::filesystem::path& path, BagDataset bags, FeatureTable features,
                           Evaluator evaluator) {
  return Trainer::restore(path, std::move(bags), std::move(features), std::move(evaluator));
}

}  // namespace llp
