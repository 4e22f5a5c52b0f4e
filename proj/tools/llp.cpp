#include "llp/bagset.hpp"
#include "llp/datasets.hpp"
#include "llp/error.hpp"
#include "llp/harness.hpp"
#include "llp/oracle.hpp"
#include "llp/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using llp::Error;
using nlohmann::json;

constexpr std::uint64_t kGeneratorSeedOffset = 0x5851F42D4C957F2Dull;

struct BagArgs {
  std::string dataset = "blobs";
  int bag_size = 16;
  std::uint64_t seed = 0;
  std::string out;
  std::vector<int> binary;
};

struct TrainArgs {
  std::string algo = "llp-gan";
  std::string manifest;
  double lambda_sup = 1.0;
  double lambda_ent = 0.0;
  long epochs = 10;
  long iterations = 0;
  int bags_per_step = 4;
  std::uint64_t seed = 0;
  std::string out;
  long checkpoint_every = 0;
  std::string resume;
};

struct OracleArgs {
  std::string world;
  std::string check = "all";
  std::uint64_t seed = 0;
};

struct HarnessArgs {
  std::string config;
  std::string param = "lambda_sup";
  std::vector<double> values;
  std::vector<std::size_t> sizes;
};

int cmd_bag(const BagArgs& a) {
  std::string name = a.dataset;
  if (!a.binary.empty()) {
    if (a.binary.size() != 2) throw Error(llp::ErrorKind::InvalidConfiguration, "--binary takes two classes");
    name += ":" + std::to_string(a.binary[0]) + "," + std::to_string(a.binary[1]);
  }
  const auto splits = llp::resolve_dataset(name);
  const auto bags = llp::partition_into_bags(splits.train, a.bag_size, a.seed);
  llp::persist_manifest(bags, a.out);
  llp::persist_label_sidecar(bags, splits.train, a.out + ".labels");
  std::cout << "wrote " << bags.size() << " bags of " << a.bag_size << " from " << name << " to " << a.out << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  auto bags = llp::load_manifest(a.manifest);
  const auto splits = llp::resolve_dataset(bags.source);
  const auto& test = splits.test;
  llp::Evaluator evaluator = [&test](llp::Discriminator& d) {
    return llp::error_rate(llp::predict_classes(d, test.features), test.labels);
  };
  std::filesystem::create_directories(a.out);
  const std::filesystem::path out(a.out);

  auto make_trainer = [&]() {
    if (!a.resume.empty()) return llp::Trainer::restore(a.resume, bags, llp::strip_labels(splits.train), evaluator);
    llp::TrainConfig tc;
    tc.algorithm = llp::parse_algorithm(a.algo);
    tc.lambda_sup = a.lambda_sup;
    tc.lambda_ent = a.lambda_ent;
    tc.bags_per_step = a.bags_per_step;
    tc.seed = a.seed;
    const long spe = (static_cast<long>(bags.size()) + a.bags_per_step - 1) / a.bags_per_step;
    tc.iterations = a.iterations > 0 ? a.iterations : a.epochs * spe;
    tc.checkpoint_every = a.checkpoint_every;
    if (a.checkpoint_every > 0) tc.checkpoint_dir = out / "checkpoints";
    const std::string arch = llp::default_architecture(bags.source);
    auto disc = llp::build_discriminator(llp::builtin_discriminator(arch, bags.num_classes), bags.num_classes, a.seed);
    std::optional<llp::Generator> gen;
    if (tc.algorithm == llp::Algorithm::LlpGan) {
      gen.emplace(llp::build_generator(llp::builtin_generator(arch), a.seed ^ kGeneratorSeedOffset));
    }
    return llp::Trainer(tc, bags, llp::strip_labels(splits.train), std::move(disc), std::move(gen), evaluator);
  };
  llp::Trainer trainer = make_trainer();
  int status = 0;
  try {
    trainer.run_to_end();
  } catch (const llp::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n" << e.snapshot() << "\n";
    status = 3;
  }
  {
    std::ofstream trace(out / "trace.csv");
    trace << llp::trace_to_csv(trainer.state().trace);
  }
  trainer.save_checkpoint(out / "final.ckpt");
  if (trainer.config().algorithm == llp::Algorithm::Dllp) {
    llp::write_entropy_curve(out / "entropy.csv", llp::entropy_trace_report(trainer.state()));
  }
  const auto& trace = trainer.state().trace;
  for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
    if (!std::isnan(it->test_error)) {
      std::printf("step %ld epoch %ld test error %.2f%%\n", it->step, it->epoch, it->test_error);
      break;
    }
  }
  return status;
}

int cmd_oracle(const OracleArgs& a) {
  const auto world = llp::oracle::load_world(a.world);
  llp::oracle::SolverOptions options;
  options.seed = a.seed;
  const auto results = llp::oracle::run_checks(world, a.check, options);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-8s %s  metric=%.3e  tol=%.1e  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.metric,
                r.tolerance, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

void print_report(const llp::ExperimentReport& report) {
  for (const auto& g : report.groups) {
    std::printf("lambda_sup=%g lambda_ent=%g  mean error %.2f%%  std %.2f  (%zu seeds)\n", g.lambda_sup,
                g.lambda_ent, g.mean_error, g.std_error, g.runs.size());
  }
}

int cmd_run(const HarnessArgs& a) {
  print_report(llp::run_experiment(llp::load_experiment_config(a.config)));
  return 0;
}

int cmd_sweep(const HarnessArgs& a) {
  print_report(llp::run_sweep(llp::load_experiment_config(a.config), a.param, a.values));
  return 0;
}

int cmd_timing(const HarnessArgs& a) {
  const auto config = llp::load_experiment_config(a.config);
  const auto report = llp::timing_profile(config, a.sizes);
  std::printf("%10s %10s %16s\n", "m", "ln m", "s/bag");
  for (const auto& r : report.rows) {
    std::printf("%10zu %10.4f %16.6e\n", r.sample_size, r.log_sample_size, r.per_bag_seconds);
  }
  std::printf("fit: time = %.4e + %.4e ln m, R^2 = %.4f\n", report.intercept, report.slope, report.r_squared);
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream(config.out_dir / "timing.json") << llp::to_json(report).dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning from label proportions with LLP-GAN and DLLP"};
  app.require_subcommand(1);

  BagArgs bag;
  auto* bag_cmd = app.add_subcommand("bag", "Partition a dataset into bags and write a manifest");
  bag_cmd->add_option("--dataset", bag.dataset, "blobs, blobs-<n>, mnist, mnist-<n> or cifar10");
  bag_cmd->add_option("--bag-size", bag.bag_size)->check(CLI::PositiveNumber);
  bag_cmd->add_option("--seed", bag.seed);
  bag_cmd->add_option("--out", bag.out, "manifest path")->required();
  bag_cmd->add_option("--binary", bag.binary, "keep two classes, e.g. 3,8")->delimiter(',')->expected(2);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train on a bag manifest");
  train_cmd->add_option("--algo", train.algo)->check(CLI::IsMember({"llp-gan", "dllp"}));
  train_cmd->add_option("--manifest", train.manifest)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--lambda-sup", train.lambda_sup);
  train_cmd->add_option("--lambda-ent", train.lambda_ent);
  train_cmd->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber);
  train_cmd->add_option("--iterations", train.iterations, "overrides --epochs");
  train_cmd->add_option("--bags-per-step", train.bags_per_step)->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed);
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every);
  train_cmd->add_option("--resume", train.resume, "continue from a trainer checkpoint")->check(CLI::ExistingFile);

  OracleArgs oracle;
  auto* oracle_cmd = app.add_subcommand("oracle", "Check the equilibrium results on a tabular world");
  oracle_cmd->add_option("--world", oracle.world)->required()->check(CLI::ExistingFile);
  oracle_cmd->add_option("--check", oracle.check)
      ->check(CLI::IsMember({"thm1", "pgfree", "lemma1", "thm2", "value", "all"}));
  oracle_cmd->add_option("--seed", oracle.seed, "solver restart seed");

  HarnessArgs harness;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment config over its seeds");
  run_cmd->add_option("--config", harness.config)->required()->check(CLI::ExistingFile);
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment once per parameter value");
  sweep_cmd->add_option("--config", harness.config)->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--param", harness.param)->check(CLI::IsMember({"lambda_sup", "lambda_ent"}));
  sweep_cmd->add_option("--values", harness.values)->required()->delimiter(',');
  auto* timing_cmd = app.add_subcommand("timing", "Per-bag step time against training-set size");
  timing_cmd->add_option("--config", harness.config)->required()->check(CLI::ExistingFile);
  timing_cmd->add_option("--sizes", harness.sizes)->required()->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bag_cmd) return cmd_bag(bag);
    if (*train_cmd) return cmd_train(train);
    if (*oracle_cmd) return cmd_oracle(oracle);
    if (*run_cmd) return cmd_run(harness);
    if (*sweep_cmd) return cmd_sweep(harness);
    if (*timing_cmd) return cmd_timing(harness);
  } catch (const llp::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n" << e.snapshot() << "\n";
    return 3;
  } catch (const llp::Error& e) {
    std::cerr << "error (" << llp::to_string(e.kind()) << "): " << e.what() << "\n";
    return 2;
  }
  return 0;
}
