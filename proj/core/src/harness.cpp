#include "llp/harness.hpp"

#include "llp/datasets.hpp"
#include "llp/error.hpp"
#include "llp/plot.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace llp {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kGeneratorSeedOffset = 0x5851F42D4C957F2Dull;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct PreparedRun {
  BagDataset bags;
  Discriminator discriminator;
  std::optional<Generator> generator;
  TrainConfig train;
};

PreparedRun prepare(const ExperimentConfig& config, const LabeledDataset& train, std::uint64_t seed,
                    double lambda_sup, double lambda_ent) {
  BagDataset bags = partition_into_bags(train, config.bag_size, seed);
  const std::string arch = default_architecture(config.dataset);
  Discriminator disc = build_discriminator(builtin_discriminator(arch, train.num_classes), train.num_classes, seed);
  std::optional<Generator> gen;
  if (config.algorithm == Algorithm::LlpGan) {
    gen.emplace(build_generator(builtin_generator(arch), seed ^ kGeneratorSeedOffset));
  }
  TrainConfig tc;
  tc.algorithm = config.algorithm;
  tc.lambda_sup = lambda_sup;
  tc.lambda_ent = lambda_ent;
  tc.bags_per_step = config.bags_per_step;
  tc.literal_noise = config.literal_noise;
  tc.optimizer.learning_rate = config.learning_rate;
  tc.seed = seed;
  const long bags_count = static_cast<long>(bags.size());
  const long spe = (bags_count + config.bags_per_step - 1) / config.bags_per_step;
  tc.iterations = config.iterations.value_or(config.epochs * spe);
  return {std::move(bags), std::move(disc), std::move(gen), tc};
}

// Bags consumed by the first `steps` iterations.
double bags_seen(long steps, long bags_count, long per_step) {
  const long spe = (bags_count + per_step - 1) / per_step;
  const long full = steps / spe;
  const long rem = steps % spe;
  return static_cast<double>(full * bags_count + std::min(rem * per_step, bags_count));
}

SeedRun run_seed(const ExperimentConfig& config, const DatasetSplits& splits, std::uint64_t seed,
                 double lambda_sup, double lambda_ent) {
  PreparedRun prepared = prepare(config, splits.train, seed, lambda_sup, lambda_ent);
  const long bags_count = static_cast<long>(prepared.bags.size());
  const Matrix& test_features = splits.test.features;
  const std::vector<int>& test_labels = splits.test.labels;
  Evaluator evaluator = [&test_features, &test_labels](Discriminator& d) {
    return error_rate(predict_classes(d, test_features), test_labels);
  };
  Trainer trainer(prepared.train, std::move(prepared.bags), strip_labels(splits.train),
                  std::move(prepared.discriminator), std::move(prepared.generator), evaluator);
  SeedRun run;
  run.seed = seed;
  try {
    trainer.run_to_end();
  } catch (const DivergenceError& e) {
    run.aborted = true;
    run.abort_reason = e.what();
  }
  run.trace = trainer.state().trace;
  for (const auto& row : run.trace) {
    if (!std::isnan(row.test_error)) run.curve.push_back(row.test_error);
  }
  // A run that stops between epoch boundaries is scored once more at its end.
  if (!run.aborted && !run.trace.empty() && std::isnan(run.trace.back().test_error)) {
    run.curve.push_back(evaluator(trainer.discriminator()));
  }
  run.final_error = run.curve.empty() ? kNaN : run.curve.back();
  if (!run.trace.empty()) {
    run.per_bag_seconds = run.trace.back().wallclock_s /
                          bags_seen(trainer.state().step, bags_count, prepared.train.bags_per_step);
  }
  return run;
}

std::string value_tag(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::InvalidConfiguration, "cannot write " + path.string());
  out << text;
}

void write_outputs(const ExperimentConfig& config, const ExperimentReport& report) {
  if (config.out_dir.empty()) return;
  std::filesystem::create_directories(config.out_dir);
  write_text(config.out_dir / "report.json", to_json(report).dump(2) + "\n");
  std::vector<PlotSeries> series;
  for (const auto& group : report.groups) {
    for (const auto& run : group.runs) {
      std::string name = "curves_" + std::to_string(run.seed);
      if (!report.sweep_param.empty()) {
        const double v = report.sweep_param == "lambda_ent" ? group.lambda_ent : group.lambda_sup;
        name += "_" + report.sweep_param + "_" + value_tag(v);
      }
      write_text(config.out_dir / (name + ".csv"), trace_to_csv(run.trace));
      PlotSeries s{name, {}, run.curve};
      for (std::size_t e = 0; e < run.curve.size(); ++e) s.x.push_back(static_cast<double>(e + 1));
      series.push_back(std::move(s));
    }
  }
  if (config.plots) write_line_plot(config.out_dir / "curves.png", series);
}

ExperimentReport run_groups(const ExperimentConfig& config, const std::string& param,
                            const std::vector<std::pair<double, double>>& lambdas) {
  config.validate();
  const DatasetSplits splits = resolve_dataset(config.dataset);
  ExperimentReport report;
  report.dataset = config.dataset;
  report.algorithm = config.algorithm;
  report.bag_size = config.bag_size;
  report.seeds = config.seeds;
  report.sweep_param = param;
  std::optional<std::string> failure;
  for (const auto& [sup, ent] : lambdas) {
    RunGroup group;
    group.lambda_sup = sup;
    group.lambda_ent = ent;
    for (auto seed : config.seeds) {
      group.runs.push_back(run_seed(config, splits, seed, sup, ent));
      report.epochs = std::max<long>(report.epochs, static_cast<long>(group.runs.back().curve.size()));
      if (group.runs.back().aborted) {
        report.partial = true;
        failure = group.runs.back().abort_reason;
        break;
      }
    }
    aggregate(group);
    report.groups.push_back(std::move(group));
    if (failure) break;
  }
  write_outputs(config, report);
  if (failure) throw DivergenceError(*failure + " (partial report written)", to_json(report, false).dump());
  return report;
}

}  // namespace

double error_rate(const std::vector<int>& predictions, const std::vector<int>& truth) {
  if (predictions.size() != truth.size()) {
    throw Error(ErrorKind::InvalidConfiguration, "prediction and truth lengths differ");
  }
  if (truth.empty()) throw Error(ErrorKind::InvalidConfiguration, "cannot score an empty prediction set");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predictions[i] != truth[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(truth.size());
}

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw Error(ErrorKind::InvalidConfiguration, "experiment needs a dataset");
  if (bag_size < 1) throw Error(ErrorKind::InvalidConfiguration, "bag size must be positive");
  if (epochs < 1 && !iterations) throw Error(ErrorKind::InvalidConfiguration, "epochs must be positive");
  if (iterations && *iterations < 1) throw Error(ErrorKind::InvalidConfiguration, "iterations must be positive");
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfiguration, "experiment needs at least one seed");
  if (bags_per_step < 1) throw Error(ErrorKind::InvalidConfiguration, "bags per step must be positive");
  if (!(lambda_sup >= 0.0) || !(lambda_ent >= 0.0)) {
    throw Error(ErrorKind::InvalidConfiguration, "lambda weights must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfiguration, "learning rate must be positive");
}

json to_json(const ExperimentConfig& c) {
  json j = {{"dataset", c.dataset},       {"algo", to_string(c.algorithm)}, {"bag_size", c.bag_size},
            {"lambda_sup", c.lambda_sup}, {"lambda_ent", c.lambda_ent},     {"epochs", c.epochs},
            {"seeds", c.seeds},           {"out_dir", c.out_dir.string()},  {"plots", c.plots},
            {"bags_per_step", c.bags_per_step}, {"literal_noise", c.literal_noise},
            {"learning_rate", c.learning_rate}};
  if (c.iterations) j["iterations"] = *c.iterations;
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfiguration, "experiment config must be a JSON object");
  ExperimentConfig c;
  try {
    c.dataset = j.at("dataset").get<std::string>();
    c.algorithm = parse_algorithm(j.value("algo", std::string("llp-gan")));
    c.bag_size = j.value("bag_size", c.bag_size);
    c.lambda_sup = j.value("lambda_sup", c.lambda_sup);
    c.lambda_ent = j.value("lambda_ent", c.lambda_ent);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.out_dir = j.value("out_dir", std::string{});
    c.plots = j.value("plots", c.plots);
    if (j.contains("iterations")) c.iterations = j.at("iterations").get<long>();
    c.bags_per_step = j.value("bags_per_step", c.bags_per_step);
    c.literal_noise = j.value("literal_noise", c.literal_noise);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfiguration, std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Resolution, "cannot open config " + path.string());
  try {
    return experiment_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(0, "config " + path.string() + ": " + e.what());
  }
}

void ExperimentReport::validate() const {
  for (const auto& g : groups) {
    if (!(g.std_error >= 0.0) && !std::isnan(g.std_error)) {
      throw Error(ErrorKind::Validation, "negative deviation");
    }
    for (const auto& r : g.runs) {
      for (double e : r.curve) {
        if (!(e >= 0.0 && e <= 100.0)) throw Error(ErrorKind::Validation, "error rate outside [0, 100]");
      }
      if (!r.aborted && static_cast<long>(r.curve.size()) != epochs) {
        throw Error(ErrorKind::Validation, "curve length differs from the epoch count");
      }
    }
  }
}

void aggregate(RunGroup& group) {
  std::vector<double> finals;
  for (const auto& r : group.runs) {
    if (!r.aborted && std::isfinite(r.final_error)) finals.push_back(r.final_error);
  }
  if (finals.empty()) {
    group.mean_error = group.std_error = kNaN;
    return;
  }
  double mean = 0.0;
  for (double v : finals) mean += v;
  mean /= static_cast<double>(finals.size());
  double ss = 0.0;
  for (double v : finals) ss += (v - mean) * (v - mean);
  group.mean_error = mean;
  group.std_error = finals.size() > 1 ? std::sqrt(ss / static_cast<double>(finals.size() - 1)) : 0.0;
}

json to_json(const ExperimentReport& report, bool with_wallclock) {
  json groups = json::array();
  for (const auto& g : report.groups) {
    json runs = json::array();
    for (const auto& r : g.runs) {
      json curve = json::array();
      for (double v : r.curve) curve.push_back(num(v));
      json run = {{"seed", r.seed}, {"curve", curve}, {"final_error", num(r.final_error)}, {"aborted", r.aborted}};
      if (r.aborted) run["abort_reason"] = r.abort_reason;
      if (with_wallclock) run["per_bag_seconds"] = r.per_bag_seconds;
      runs.push_back(std::move(run));
    }
    groups.push_back({{"lambda_sup", g.lambda_sup},
                      {"lambda_ent", g.lambda_ent},
                      {"runs", runs},
                      {"mean_error", num(g.mean_error)},
                      {"std_error", num(g.std_error)}});
  }
  json j = {{"dataset", report.dataset},
            {"algorithm", to_string(report.algorithm)},
            {"bag_size", report.bag_size},
            {"epochs", report.epochs},
            {"seeds", report.seeds},
            {"deviation", "sample standard deviation of final test error over seeds"},
            {"groups", groups},
            {"partial", report.partial}};
  if (!report.sweep_param.empty()) j["sweep_param"] = report.sweep_param;
  return j;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  return run_groups(config, "", {{config.lambda_sup, config.lambda_ent}});
}

ExperimentReport run_sweep(const ExperimentConfig& config, const std::string& param,
                           const std::vector<double>& values) {
  if (param != "lambda_sup" && param != "lambda_ent") {
    throw Error(ErrorKind::InvalidConfiguration, "cannot sweep " + param + " (expected lambda_sup or lambda_ent)");
  }
  if (values.empty()) throw Error(ErrorKind::InvalidConfiguration, "sweep needs at least one value");
  std::vector<std::pair<double, double>> lambdas;
  for (double v : values) {
    lambdas.emplace_back(param == "lambda_sup" ? v : config.lambda_sup, param == "lambda_ent" ? v : config.lambda_ent);
  }
  return run_groups(config, param, lambdas);
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::InvalidConfiguration, "fit needs two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorKind::InvalidConfiguration, "fit needs distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return fit;
}

TimingReport timing_profile(const ExperimentConfig& config, const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 3) throw Error(ErrorKind::InvalidConfiguration, "timing needs at least three sample sizes");
  config.validate();
  constexpr int kWarmup = 5;
  constexpr int kTimed = 20;
  const bool blobs = config.dataset.rfind("blobs", 0) == 0 && config.dataset.find(':') == std::string::npos;
  std::optional<DatasetSplits> shared;
  if (!blobs) shared = resolve_dataset(config.dataset);

  TimingReport report;
  for (auto m : sizes) {
    LabeledDataset train;
    if (blobs) {
      train = resolve_dataset("blobs-" + std::to_string(m)).train;
    } else {
      if (m > shared->train.size()) {
        throw Error(ErrorKind::InvalidConfiguration, "sample size " + std::to_string(m) + " exceeds the dataset");
      }
      train = shared->train;
      train.features.conservativeResize(static_cast<Eigen::Index>(m), Eigen::NoChange);
      train.labels.resize(m);
    }
    ExperimentConfig timed = config;
    timed.literal_noise = true;
    PreparedRun prepared = prepare(timed, train, config.seeds.front(), config.lambda_sup, config.lambda_ent);
    prepared.train.iterations = kWarmup + kTimed;
    const long bags_count = static_cast<long>(prepared.bags.size());
    const long per_step = prepared.train.bags_per_step;
    Trainer trainer(prepared.train, std::move(prepared.bags), strip_labels(train), std::move(prepared.discriminator),
                    std::move(prepared.generator));
    trainer.run(kWarmup);
    std::vector<double> per_bag;
    for (int i = 0; i < kTimed; ++i) {
      const long step = trainer.state().step;
      const long spe = trainer.steps_per_epoch();
      const long in_step = std::min(per_step, bags_count - (step % spe) * per_step);
      const auto start = std::chrono::steady_clock::now();
      trainer.run(1);
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      per_bag.push_back(dt / static_cast<double>(in_step));
    }
    std::nth_element(per_bag.begin(), per_bag.begin() + kTimed / 2, per_bag.end());
    double median = per_bag[kTimed / 2];
    std::nth_element(per_bag.begin(), per_bag.begin() + kTimed / 2 - 1, per_bag.begin() + kTimed / 2);
    median = 0.5 * (median + per_bag[kTimed / 2 - 1]);
    report.rows.push_back({m, std::log(static_cast<double>(m)), median});
  }
  std::vector<double> xs, ys;
  for (const auto& r : report.rows) xs.push_back(r.log_sample_size), ys.push_back(r.per_bag_seconds);
  const LinearFit fit = fit_line(xs, ys);
  report.slope = fit.slope;
  report.intercept = fit.intercept;
  report.r_squared = fit.r_squared;
  return report;
}

json to_json(const TimingReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"m", r.sample_size}, {"ln_m", r.log_sample_size}, {"per_bag_seconds", r.per_bag_seconds}});
  }
  return {{"rows", rows},
          {"fit", {{"slope", report.slope}, {"intercept", report.intercept}, {"r_squared", report.r_squared}}}};
}

std::vector<EntropyPoint> entropy_trace_report(const std::string& trace_csv) {
  std::istringstream in(trace_csv);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::InvalidConfiguration, "empty trace");
  auto split = [](const std::string& text) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream cells(text);
    while (std::getline(cells, field, ',')) out.push_back(field);
    if (!text.empty() && text.back() == ',') out.emplace_back();
    return out;
  };
  const auto header = split(line);
  const auto epoch_col = std::find(header.begin(), header.end(), "epoch") - header.begin();
  const auto entropy_col = std::find(header.begin(), header.end(), "entropy") - header.begin();
  if (epoch_col == static_cast<long>(header.size()) || entropy_col == static_cast<long>(header.size())) {
    throw Error(ErrorKind::InvalidConfiguration, "trace lacks an epoch or entropy column");
  }
  std::vector<EntropyPoint> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size()) throw Error(ErrorKind::InvalidConfiguration, "ragged trace row");
    if (fields[static_cast<std::size_t>(entropy_col)].empty()) continue;
    const long epoch = std::stol(fields[static_cast<std::size_t>(epoch_col)]);
    const double h = std::stod(fields[static_cast<std::size_t>(entropy_col)]);
    if (curve.empty() || curve.back().epoch != epoch) curve.push_back({epoch, 0.0});
    curve.back().entropy_sum += h;
  }
  return curve;
}

std::vector<EntropyPoint> entropy_trace_report(const TrainState& state) {
  return entropy_trace_report(trace_to_csv(state.trace, false));
}

void write_entropy_curve(const std::filesystem::path& path, const std::vector<EntropyPoint>& curve) {
  std::ostringstream out;
  out << "epoch,entropy_sum\n";
  out.precision(17);
  for (const auto& p : curve) out << p.epoch << ',' << p.entropy_sum << '\n';
  write_text(path, out.str());
}

}  // namespace llp
