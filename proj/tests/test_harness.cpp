#include "llp/error.hpp"
#include "llp/harness.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

using namespace llp;

namespace {

ExperimentConfig small_config(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.dataset = "blobs-400";
  c.algorithm = Algorithm::LlpGan;
  c.bag_size = 16;
  c.epochs = 2;
  c.seeds = {1, 2, 3};
  c.out_dir = out;
  c.plots = true;
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("error_rate examples") {
  CHECK(error_rate({0, 1, 2, 3}, {0, 1, 2, 3}) == 0.0);
  CHECK(error_rate({1, 0}, {0, 1}) == 100.0);
  CHECK(error_rate({0, 0, 1, 1}, {0, 1, 0, 1}) == 50.0);
  try {
    error_rate({0, 1}, {0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfiguration);
  }
  CHECK_THROWS_AS(error_rate({}, {}), Error);
}

TEST_CASE("experiment config parsing") {
  const auto j = nlohmann::json::parse(R"({"dataset":"blobs","algo":"dllp","bag_size":32,"lambda_sup":0.5,
    "lambda_ent":0.1,"epochs":3,"seeds":[4,5],"out_dir":"x","plots":true})");
  const auto c = experiment_config_from_json(j);
  CHECK(c.algorithm == Algorithm::Dllp);
  CHECK(c.bag_size == 32);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.plots);
  CHECK(experiment_config_from_json(to_json(c)).seeds == c.seeds);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"algo":"dllp"})")), Error);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"dataset":"blobs","seeds":[]})")), Error);
  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"dataset":"blobs","algo":"svm"})")), Error);
}

TEST_CASE("unknown datasets are a resolution error") {
  ExperimentConfig c;
  c.dataset = "svhn-extra";
  try {
    run_experiment(c);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Resolution);
  }
}

TEST_CASE("run_experiment writes a multi-seed report") {
  const auto dir = testing::scratch_dir("harness_run");
  const auto config = small_config(dir);
  const auto report = run_experiment(config);
  REQUIRE(report.groups.size() == 1);
  const auto& group = report.groups[0];
  CHECK(group.runs.size() == 3);
  CHECK(report.epochs == 2);
  CHECK_NOTHROW(report.validate());
  for (const auto& run : group.runs) {
    CHECK(run.curve.size() == 2);
    CHECK(run.per_bag_seconds > 0.0);
    CHECK(std::filesystem::exists(dir / ("curves_" + std::to_string(run.seed) + ".csv")));
  }
  CHECK(group.std_error >= 0.0);
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(j.at("groups").at(0).contains("std_error"));
  CHECK(j.at("groups").at(0).at("runs").size() == 3);
  const std::string png = read_file(dir / "curves.png");
  REQUIRE(png.size() > 8);
  CHECK(png.substr(1, 3) == "PNG");

  const auto again = run_experiment(config);
  CHECK(to_json(report, false) == to_json(again, false));
}

TEST_CASE("aggregate uses the sample deviation") {
  RunGroup g;
  for (double e : {1.0, 2.0, 3.0}) {
    SeedRun r;
    r.final_error = e;
    g.runs.push_back(r);
  }
  aggregate(g);
  CHECK(g.mean_error == doctest::Approx(2.0));
  CHECK(g.std_error == doctest::Approx(1.0));
  g.runs.resize(1);
  aggregate(g);
  CHECK(g.std_error == 0.0);
}

TEST_CASE("sweep gives one curve per value") {
  const auto dir = testing::scratch_dir("harness_sweep");
  auto config = small_config(dir);
  config.seeds = {1};
  config.epochs = 1;
  const auto report = run_sweep(config, "lambda_sup", {0.5, 2.0});
  REQUIRE(report.groups.size() == 2);
  CHECK(report.groups[0].lambda_sup == 0.5);
  CHECK(report.groups[1].lambda_sup == 2.0);
  CHECK(report.sweep_param == "lambda_sup");
  CHECK(std::filesystem::exists(dir / "curves_1_lambda_sup_0.5.csv"));
  CHECK(std::filesystem::exists(dir / "curves_1_lambda_sup_2.csv"));
  CHECK_THROWS_AS(run_sweep(config, "bag_size", {1.0}), Error);
}

TEST_CASE("timing profile grows with the sample size") {
  ExperimentConfig config;
  config.dataset = "blobs";
  CHECK_THROWS_AS(timing_profile(config, {1000, 4000}), Error);
  const auto report = timing_profile(config, {1000, 4000, 16000});
  REQUIRE(report.rows.size() == 3);
  CHECK(report.rows[0].per_bag_seconds <= report.rows[1].per_bag_seconds);
  CHECK(report.rows[1].per_bag_seconds <= report.rows[2].per_bag_seconds);
  CHECK(report.rows[2].log_sample_size == doctest::Approx(std::log(16000.0)));
  CHECK(report.r_squared >= 0.0);
  CHECK(report.r_squared <= 1.0);
}

TEST_CASE("least-squares fit") {
  const auto fit = fit_line({0, 1, 2, 3}, {1, 3, 5, 7});
  CHECK(fit.slope == doctest::Approx(2.0));
  CHECK(fit.intercept == doctest::Approx(1.0));
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK_THROWS_AS(fit_line({1, 1}, {0, 1}), Error);
}

TEST_CASE("entropy trace from a dllp run") {
  const auto dir = testing::scratch_dir("harness_entropy");
  ExperimentConfig config;
  config.dataset = "blobs";
  config.algorithm = Algorithm::Dllp;
  config.epochs = 6;
  config.seeds = {2};
  const auto report = run_experiment(config);
  const auto& trace = report.groups[0].runs[0].trace;
  TrainState state;
  state.trace = trace;
  const auto curve = entropy_trace_report(state);
  REQUIRE(curve.size() == 6);
  for (const auto& p : curve) CHECK(p.entropy_sum >= 0.0);
  CHECK(curve.back().entropy_sum < curve.front().entropy_sum);
  write_entropy_curve(dir / "entropy.csv", curve);
  CHECK(read_file(dir / "entropy.csv").rfind("epoch,entropy_sum\n", 0) == 0);

  try {
    entropy_trace_report(std::string("step,epoch,dllp\n1,1,0.5\n"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfiguration);
  }
}
