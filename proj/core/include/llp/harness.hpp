#pragma once

#include "llp/bagset.hpp"
#include "llp/trainer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace llp {

/// Percentage of positions where the two label sequences disagree.
double error_rate(const std::vector<int>& predictions, const std::vector<int>& truth);

struct ExperimentConfig {
  std::string dataset = "blobs";
  Algorithm algorithm = Algorithm::LlpGan;
  int bag_size = 16;
  double lambda_sup = 1.0;
  double lambda_ent = 0.0;
  long epochs = 10;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out_dir;  ///< empty: nothing is written
  bool plots = false;
  std::optional<long> iterations;  ///< overrides epochs * steps-per-epoch
  int bags_per_step = 4;
  bool literal_noise = false;
  double learning_rate = 3e-4;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& json);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<double> curve;  ///< test error (%) at each epoch boundary
  double final_error = 0.0;
  double per_bag_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::vector<MetricRow> trace;
};

/// Runs sharing one (lambda_sup, lambda_ent) pair, aggregated over seeds.
struct RunGroup {
  double lambda_sup = 1.0;
  double lambda_ent = 0.0;
  std::vector<SeedRun> runs;
  double mean_error = 0.0;
  double std_error = 0.0;  ///< sample deviation (n - 1); 0 for a single finished seed
};

struct ExperimentReport {
  std::string dataset;
  Algorithm algorithm = Algorithm::LlpGan;
  int bag_size = 0;
  long epochs = 0;
  std::vector<std::uint64_t> seeds;
  std::string sweep_param;  ///< empty for a plain run
  std::vector<RunGroup> groups;
  bool partial = false;

  void validate() const;
};

/// Report as JSON; `with_wallclock = false` drops the timing fields so reruns
/// compare equal.
nlohmann::json to_json(const ExperimentReport& report, bool with_wallclock = true);

/// Mean and sample standard deviation of the final errors of finished runs.
void aggregate(RunGroup& group);

/// Trains one model per seed and writes report.json, curves_<seed>.csv and,
/// when enabled, curves.png under config.out_dir. A diverged run is recorded,
/// the partial report is written, and the divergence is rethrown.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// One group per value of `param` (lambda_sup or lambda_ent), all in one report.
ExperimentReport run_sweep(const ExperimentConfig& config, const std::string& param,
                           const std::vector<double>& values);

struct TimingRow {
  std::size_t sample_size = 0;
  double log_sample_size = 0.0;
  double per_bag_seconds = 0.0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Median per-bag step time for each training-set size, over 20 timed steps
/// after 5 warm-up steps. The generator draws one fake per training point, so
/// the step cost grows with the sample size. Fits time = a + b ln m.
TimingReport timing_profile(const ExperimentConfig& config, const std::vector<std::size_t>& sizes);
nlohmann::json to_json(const TimingReport& report);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct EntropyPoint {
  long epoch = 0;
  double entropy_sum = 0.0;
};

/// Sums the entropy column of a trace per epoch. Throws when the column is absent.
std::vector<EntropyPoint> entropy_trace_report(const std::string& trace_csv);
std::vector<EntropyPoint> entropy_trace_report(const TrainState& state);
void write_entropy_curve(const std::filesystem::path& path, const std::vector<EntropyPoint>& curve);

}  // namespace llp
