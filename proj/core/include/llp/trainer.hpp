#pragma once

#include "llp/bagset.hpp"
#include "llp/losses.hpp"
#include "llp/netzoo.hpp"
#include "llp/optimizer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace llp {

enum class Algorithm { LlpGan, Dllp };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm algo);

struct TrainConfig {
  Algorithm algorithm = Algorithm::LlpGan;
  double lambda_sup = 1.0;  ///< weight of the bag-level term in the discriminator objective
  double lambda_ent = 0.0;  ///< weight of the instance entropy term in the DLLP loss
  long iterations = 1000;
  int bags_per_step = 4;
  int fake_batch = 0;          ///< fake samples per step; 0 means bags_per_step * bag_size
  bool literal_noise = false;  ///< draw one fake per training instance every step
  AdamConfig optimizer;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& json);

/// One trace row. Quantities that do not apply to the algorithm are NaN, and
/// test_error is NaN except on the last step of an epoch.
struct MetricRow {
  long step = 0;
  long epoch = 0;
  double l_real = 0.0;
  double l_fake = 0.0;
  double lb_sup = 0.0;
  double fm = 0.0;
  double dllp = 0.0;
  double entropy = 0.0;
  double test_error = 0.0;
  double wallclock_s = 0.0;
};

inline constexpr const char* kTraceHeader =
    "step,epoch,l_real,l_fake,lb_sup,fm,dllp,entropy,test_error,wallclock_s";

/// CSV rendering of a trace; `with_wallclock = false` blanks the timing column
/// so two runs can be compared byte for byte.
std::string trace_to_csv(const std::vector<MetricRow>& trace, bool with_wallclock = true);
std::vector<MetricRow> trace_from_csv(const std::string& text);

struct TrainState {
  long step = 0;
  long d_updates = 0;
  long g_updates = 0;
  long last_fake_count = 0;
  std::vector<MetricRow> trace;
};

/// Scores the discriminator on held-out data; returns an error percentage.
/// Supplied by the caller so labels never reach the training loop.
using Evaluator = std::function<double(Discriminator&)>;

/// Argmax over normalized posteriors in evaluation mode; ties go to the lowest index.
std::vector<int> predict_classes(Discriminator& model, const Matrix& features, Eigen::Index chunk = 512);

/// Runs the alternating LLP-GAN loop or the DLLP loop over whole bags.
class Trainer {
 public:
  Trainer(TrainConfig config, BagDataset bags, FeatureTable features, Discriminator discriminator,
          std::optional<Generator> generator, Evaluator evaluator = {});

  /// Advances by at most `steps` iterations without passing config.iterations.
  void run(long steps);
  void run_to_end() { run(config_.iterations - state_.step); }

  long steps_per_epoch() const;
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  Discriminator& discriminator() { return discriminator_; }
  std::optional<Generator>& generator() { return generator_; }

  void save_checkpoint(const std::filesystem::path& path);
  /// Rebuilds a trainer from a checkpoint; the bags and features must be the
  /// ones the checkpoint was trained on.
  static Trainer restore(const std::filesystem::path& path, BagDataset bags, FeatureTable features,
                         Evaluator evaluator = {});

 private:
  struct StepBatch {
    Matrix real;
    std::vector<std::size_t> bag_sizes;
    std::vector<ProportionVector> priors;
  };

  StepBatch gather(long step) const;
  MetricRow gan_step(const StepBatch& batch);
  MetricRow dllp_step(const StepBatch& batch);
  void check_finite(const MetricRow& row) const;
  long fake_count() const;

  TrainConfig config_;
  BagDataset bags_;
  FeatureTable features_;
  Discriminator discriminator_;
  std::optional<Generator> generator_;
  Evaluator evaluator_;
  Adam d_optimizer_;
  Adam g_optimizer_;
  Rng rng_;
  TrainState state_;
  double elapsed_s_ = 0.0;
};

/// Builds the default models for `features` and trains LLP-GAN to the end.
TrainState train_llp_gan(const BagDataset& bags, const FeatureTable& features, Discriminator discriminator,
                         Generator generator, TrainConfig config, Evaluator evaluator = {});
TrainState train_dllp(const BagDataset& bags, const FeatureTable& features, Discriminator discriminator,
                      TrainConfig config, Evaluator evaluator = {});

void checkpoint_save(Trainer& trainer, const std::filesystem::path& path);
Trainer checkpoint_restore(const std::filesystem::path& path, BagDataset bags, FeatureTable features,
                           Evaluator evaluator = {});

}  // namespace llp
