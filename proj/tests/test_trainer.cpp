#include "llp/checkpoint.hpp"
#include "llp/datasets.hpp"
#include "llp/error.hpp"
#include "llp/harness.hpp"
#include "llp/trainer.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

using namespace llp;

namespace {

struct Fixture {
  DatasetSplits splits = resolve_dataset("blobs-400");
  BagDataset bags = partition_into_bags(splits.train, 16, 3);
  FeatureTable features = strip_labels(splits.train);

  Evaluator evaluator() const {
    return [this](Discriminator& d) { return error_rate(predict_classes(d, splits.test.features), splits.test.labels); };
  }

  Trainer make(TrainConfig config, std::uint64_t seed = 1) const {
    Discriminator d(builtin_discriminator("blobs", 4), 4, seed);
    std::optional<Generator> g;
    if (config.algorithm == Algorithm::LlpGan) g.emplace(builtin_generator("blobs"), seed + 1);
    return Trainer(config, bags, features, std::move(d), std::move(g), evaluator());
  }
};

TrainConfig config(Algorithm algo, long iterations) {
  TrainConfig c;
  c.algorithm = algo;
  c.iterations = iterations;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.lambda_sup = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.bags_per_step = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_algorithm("dllp") == Algorithm::Dllp);
  CHECK_THROWS_AS(parse_algorithm("gan"), Error);
  c = TrainConfig{};
  c.lambda_ent = 0.25;
  c.literal_noise = true;
  const auto back = train_config_from_json(to_json(c));
  CHECK(back.lambda_ent == 0.25);
  CHECK(back.literal_noise);
  CHECK(back.optimizer.learning_rate == 3e-4);
  CHECK(back.optimizer.beta1 == 0.5);
  CHECK(back.optimizer.beta2 == 0.999);
}

TEST_CASE("epochs, partial steps and evaluation points") {
  Fixture f;
  REQUIRE(f.bags.size() == 25);
  auto trainer = f.make(config(Algorithm::Dllp, 15));
  CHECK(trainer.steps_per_epoch() == 7);
  trainer.run_to_end();
  const auto& trace = trainer.state().trace;
  REQUIRE(trace.size() == 15);
  for (const auto& row : trace) {
    CHECK(row.epoch == (row.step - 1) / 7 + 1);
    CHECK(std::isnan(row.test_error) == (row.step % 7 != 0));
    CHECK(std::isnan(row.l_real));
    CHECK(std::isnan(row.fm));
    CHECK(row.entropy >= 0.0);
  }
  CHECK(trainer.state().d_updates == 15);
  CHECK(trainer.state().g_updates == 0);
  trainer.run(10);
  CHECK(trainer.state().step == 15);
}

TEST_CASE("llp-gan alternates updates and sizes the fake batch") {
  Fixture f;
  auto trainer = f.make(config(Algorithm::LlpGan, 8));
  trainer.run_to_end();
  CHECK(trainer.state().d_updates == 8);
  CHECK(trainer.state().g_updates == 8);
  // Step 8 is the first of epoch 2, a full step of 4 bags.
  CHECK(trainer.state().last_fake_count == 64);
  for (const auto& row : trainer.state().trace) {
    CHECK(std::isfinite(row.l_real));
    CHECK(std::isfinite(row.fm));
    CHECK(row.fm >= 0.0);
    CHECK(row.l_real <= 0.0);
    CHECK(row.l_fake <= 0.0);
    CHECK(row.lb_sup <= -row.dllp + 1e-12);
  }

  auto literal = config(Algorithm::LlpGan, 2);
  literal.literal_noise = true;
  auto t2 = f.make(literal);
  t2.run_to_end();
  CHECK(t2.state().last_fake_count == 400);
  literal.literal_noise = false;
  literal.fake_batch = 10;
  auto t3 = f.make(literal);
  t3.run_to_end();
  CHECK(t3.state().last_fake_count == 10);
}

TEST_CASE("training is reproducible") {
  Fixture f;
  for (auto algo : {Algorithm::LlpGan, Algorithm::Dllp}) {
    auto a = f.make(config(algo, 20));
    auto b = f.make(config(algo, 20));
    a.run_to_end();
    b.run_to_end();
    CHECK(trace_to_csv(a.state().trace, false) == trace_to_csv(b.state().trace, false));
    CHECK(a.discriminator().network().flat_parameters() == b.discriminator().network().flat_parameters());
  }
  auto c = f.make(config(Algorithm::Dllp, 20), 2);
  auto d = f.make(config(Algorithm::Dllp, 20));
  c.run_to_end();
  d.run_to_end();
  CHECK(trace_to_csv(c.state().trace, false) != trace_to_csv(d.state().trace, false));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run") {
  Fixture f;
  const auto dir = testing::scratch_dir("trainer_ckpt");
  for (auto algo : {Algorithm::LlpGan, Algorithm::Dllp}) {
    auto full = f.make(config(algo, 20));
    full.run_to_end();

    auto first = f.make(config(algo, 20));
    first.run(9);
    first.save_checkpoint(dir / "mid.ckpt");
    auto resumed = Trainer::restore(dir / "mid.ckpt", f.bags, f.features, f.evaluator());
    CHECK(resumed.state().step == 9);
    resumed.run_to_end();
    CHECK(trace_to_csv(resumed.state().trace, false) == trace_to_csv(full.state().trace, false));
    CHECK(resumed.discriminator().network().flat_parameters() == full.discriminator().network().flat_parameters());
  }

  // Wrong bags and damaged files are refused.
  BagDataset other = partition_into_bags(f.splits.train, 16, 4);
  CHECK_THROWS_AS(Trainer::restore(dir / "mid.ckpt", other, f.features), Error);
  std::ifstream in(dir / "mid.ckpt");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  text.replace(text.find("\"d_updates\":9"), 13, "\"d_updates\":8");
  std::ofstream(dir / "bad.ckpt") << text;
  try {
    Trainer::restore(dir / "bad.ckpt", f.bags, f.features);
    FAIL("expected an integrity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Integrity);
  }
}

TEST_CASE("periodic checkpoints land in the configured directory") {
  Fixture f;
  const auto dir = testing::scratch_dir("trainer_periodic");
  auto c = config(Algorithm::Dllp, 6);
  c.checkpoint_every = 3;
  c.checkpoint_dir = dir;
  auto t = f.make(c);
  t.run_to_end();
  CHECK(std::filesystem::exists(dir / "step_3.ckpt"));
  CHECK(std::filesystem::exists(dir / "step_6.ckpt"));
}

TEST_CASE("non-finite inputs abort with a divergence snapshot") {
  Fixture f;
  f.features.features.setConstant(std::nan(""));
  for (auto algo : {Algorithm::LlpGan, Algorithm::Dllp}) {
    auto t = f.make(config(algo, 3));
    try {
      t.run_to_end();
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.kind() == ErrorKind::Diverged);
      const auto snapshot = nlohmann::json::parse(e.snapshot());
      CHECK(snapshot.at("step") == 1);
    }
  }
}

TEST_CASE("trainer construction checks its inputs") {
  Fixture f;
  auto four = [] { return Discriminator(builtin_discriminator("blobs", 4), 4, 1); };
  CHECK_THROWS_AS(Trainer(config(Algorithm::LlpGan, 5), f.bags, f.features, four(), std::nullopt), Error);
  CHECK_THROWS_AS(Trainer(config(Algorithm::Dllp, 5), f.bags, f.features,
                          Discriminator(builtin_discriminator("blobs", 3), 3, 1), std::nullopt),
                  Error);
  FeatureTable small = f.features;
  small.features.conservativeResize(100, Eigen::NoChange);
  CHECK_THROWS_AS(Trainer(config(Algorithm::Dllp, 5), f.bags, small, four(), std::nullopt), Error);
}

TEST_CASE("trace CSV layout and round trip") {
  Fixture f;
  auto t = f.make(config(Algorithm::LlpGan, 7));
  t.run_to_end();
  const std::string csv = trace_to_csv(t.state().trace);
  CHECK(csv.substr(0, csv.find('\n')) == "step,epoch,l_real,l_fake,lb_sup,fm,dllp,entropy,test_error,wallclock_s");
  const auto back = trace_from_csv(csv);
  REQUIRE(back.size() == 7);
  CHECK(trace_to_csv(back) == csv);
  CHECK_THROWS_AS(trace_from_csv("step,epoch\n1,1\n"), Error);
}

TEST_CASE("predictions break ties toward the lowest class") {
  Discriminator d(builtin_discriminator("blobs", 4), 4, 1);
  auto params = d.network().flat_parameters();
  std::fill(params.begin(), params.end(), 0.0);
  d.network().set_flat_parameters(params);
  const auto predicted = predict_classes(d, Matrix::Random(10, 2));
  for (int p : predicted) CHECK(p == 0);
}

TEST_CASE("free training functions run to the configured length") {
  Fixture f;
  const auto state = train_dllp(f.bags, f.features, Discriminator(builtin_discriminator("blobs", 4), 4, 1),
                                config(Algorithm::LlpGan, 7));
  CHECK(state.step == 7);
  CHECK(state.g_updates == 0);
  const auto gan = train_llp_gan(f.bags, f.features, Discriminator(builtin_discriminator("blobs", 4), 4, 1),
                                 Generator(builtin_generator("blobs"), 2), config(Algorithm::Dllp, 3));
  CHECK(gan.g_updates == 3);
}

TEST_CASE("dllp lowers its loss on blobs") {
  Fixture f;
  auto t = f.make(config(Algorithm::Dllp, 140));
  t.run_to_end();
  const auto& trace = t.state().trace;
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 7; ++i) early += trace[static_cast<std::size_t>(i)].dllp, late += trace[trace.size() - 1 - static_cast<std::size_t>(i)].dllp;
  CHECK(late < early);
  CHECK(trace.back().test_error < 20.0);
}

TEST_CASE("two-class blobs reach low training error with llp-gan") {
  const auto splits = resolve_dataset("blobs-1280:0,2");
  const auto bags = partition_into_bags(splits.train, 16, 7);
  CHECK(bags.size() >= 38);
  CHECK(bags.size() <= 42);
  auto c = config(Algorithm::LlpGan, 500);
  Trainer t(c, bags, strip_labels(splits.train), Discriminator(builtin_discriminator("blobs", 2), 2, 3),
            Generator(builtin_generator("blobs"), 4));
  t.run_to_end();
  CHECK(t.state().g_updates == 500);
  const double err = error_rate(predict_classes(t.discriminator(), splits.train.features), splits.train.labels);
  CHECK(err < 10.0);
}

TEST_CASE("discriminator objective rises early in a blobs run") {
  const auto splits = resolve_dataset("blobs");
  const auto bags = partition_into_bags(splits.train, 16, 2);
  auto c = config(Algorithm::LlpGan, 100);
  Trainer t(c, bags, strip_labels(splits.train), Discriminator(builtin_discriminator("blobs", 4), 4, 5),
            Generator(builtin_generator("blobs"), 6));
  t.run_to_end();
  // The bag term is a sum over bags, so the short last step of an epoch is left out.
  std::vector<double> objective;
  for (const auto& row : t.state().trace) {
    if (row.step % t.steps_per_epoch() == 0) continue;
    objective.push_back(row.l_real + row.l_fake + c.lambda_sup * row.lb_sup);
  }
  // Window means of 19 steps; allow a little noise between neighbours.
  std::vector<double> windows;
  for (std::size_t w = 0; w + 19 <= objective.size(); w += 19) {
    double sum = 0.0;
    for (std::size_t i = w; i < w + 19; ++i) sum += objective[i];
    windows.push_back(sum / 19.0);
  }
  REQUIRE(windows.size() == 5);
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] >= windows[i - 1] - 0.05);
  CHECK(windows.back() > windows.front());
}
