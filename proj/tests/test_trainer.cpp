#include "disp/trainer.hpp"

#include <cmath>
#include <doctest.h>
#include <filesystem>
#include <fstream>

#include "disp/errors.hpp"
#include "disp/rng.hpp"

using namespace disp;

namespace {

// Tiny synthetic corpus: class = which quadrant carries the bright blob.
RawMnistSet quadrant_raw(std::size_t count, std::uint64_t seed) {
  RawMnistSet raw;
  raw.count = count;
  raw.rows = 8;
  raw.cols = 8;
  raw.images.assign(count * 64, 0);
  raw.labels.resize(count);
  CounterRng rng(seed, 2);
  for (std::size_t i = 0; i < count; ++i) {
    int cls = static_cast<int>(rng.index(i, 4));
    raw.labels[i] = static_cast<std::uint8_t>(cls);
    std::size_t oy = (cls / 2) * 4, ox = (cls % 2) * 4;
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        raw.images[i * 64 + (oy + y + 1) * 8 + (ox + x + 1)] =
            static_cast<std::uint8_t>(150 + rng.index(1000 + i * 9 + y * 3 + x, 100));
  }
  return raw;
}

BiasedDataset tiny_dataset(std::size_t count = 240, double rho = 0.5) {
  BiasConfig cfg;
  cfg.rho = rho;
  cfg.seed = 31;
  cfg.fractions = {0.7, 0.15, 0.15};
  return build_biased_dataset(quadrant_raw(count, 7), cfg, Palette::standard());
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.encoder = {{4, 3, 2, 1}, {8, 3, 2, 1}};
  cfg.num_targets = 4;
  cfg.in_channels = 3;
  cfg.in_height = 8;
  cfg.in_width = 8;
  return cfg;
}

OptimizerConfig tiny_opt(std::size_t epochs = 3) {
  OptimizerConfig opt;
  opt.learning_rate = 0.05;
  opt.batch_size = 16;
  opt.epochs = epochs;
  return opt;
}

bool logs_equal(const MetricsLog& a, const MetricsLog& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    if (x.epoch != y.epoch || x.loss != y.loss || x.r_mem != y.r_mem ||
        x.r_batch != y.r_batch || x.r_total != y.r_total || x.acc_train != y.acc_train ||
        x.loss_val != y.loss_val || x.acc_test_unbiased != y.acc_test_unbiased || x.lr != y.lr)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("sgd_step: vanilla, fixed point, pure decay") {
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;

  Tensor theta = Tensor::from_values({1}, {1.0}, true);
  std::vector<double> u;
  sgd_step(theta, std::vector<double>{0.5}, u, cfg);
  CHECK(theta.values()[0] == doctest::Approx(0.95));

  Tensor fixed = Tensor::from_values({1}, {2.5}, true);
  std::vector<double> u2;
  cfg.momentum = 0.7;
  sgd_step(fixed, std::vector<double>{0.0}, u2, cfg);
  CHECK(fixed.values()[0] == 2.5);

  cfg.momentum = 0.0;
  cfg.weight_decay = 0.1;
  Tensor decay = Tensor::from_values({1}, {1.0}, true);
  std::vector<double> u3;
  sgd_step(decay, std::vector<double>{0.0}, u3, cfg);
  CHECK(decay.values()[0] == doctest::Approx(0.99));

  std::vector<double> u4;
  Tensor t = Tensor::from_values({1}, {1.0}, true);
  CHECK_THROWS_AS(
      sgd_step(t, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}, u4, cfg),
      NumericError);
}

TEST_CASE("optimizer config validation") {
  OptimizerConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = OptimizerConfig{};
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("training is deterministic: same seed, same metrics, bitwise") {
  auto data = tiny_dataset();
  auto r1 = train(tiny_model(), data, tiny_opt(), DispWeights::single_gamma(0.1), 0.1, 5);
  auto r2 = train(tiny_model(), data, tiny_opt(), DispWeights::single_gamma(0.1), 0.1, 5);
  CHECK(logs_equal(r1.log, r2.log));

  auto r3 = train(tiny_model(), data, tiny_opt(), DispWeights::single_gamma(0.1), 0.1, 6);
  CHECK_FALSE(logs_equal(r1.log, r3.log));
}

TEST_CASE("gamma = 0 trajectory equals a run with the regularizer disabled") {
  auto data = tiny_dataset();
  TrainOptions measured;
  measured.measure_disp = true;
  TrainOptions disabled;
  disabled.measure_disp = false;

  auto with_measure =
      train(tiny_model(), data, tiny_opt(), DispWeights::single_gamma(0.0), 0.1, 3, measured);
  auto without =
      train(tiny_model(), data, tiny_opt(), DispWeights::single_gamma(0.0), 0.1, 3, disabled);

  REQUIRE(with_measure.log.rows.size() == without.log.rows.size());
  for (std::size_t i = 0; i < with_measure.log.rows.size(); ++i) {
    CHECK(with_measure.log.rows[i].loss == without.log.rows[i].loss);
    CHECK(with_measure.log.rows[i].loss_val == without.log.rows[i].loss_val);
    CHECK(with_measure.log.rows[i].acc_train == without.log.rows[i].acc_train);
    // R is measured in one run and skipped in the other.
    CHECK(without.log.rows[i].r_total == 0.0);
    CHECK(with_measure.log.rows[i].r_total > 0.0);
  }
}

TEST_CASE("best checkpoint follows the minimum validation loss") {
  auto data = tiny_dataset();
  auto result = train(tiny_model(), data, tiny_opt(5), DispWeights::single_gamma(0.05), 0.1, 9);
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  for (const auto& row : result.log.rows)
    if (row.loss_val < best) {
      best = row.loss_val;
      best_epoch = row.epoch;
    }
  CHECK(result.best_epoch == best_epoch);

  auto val_view = data.split_view(SplitTag::validation);
  CHECK(dataset_loss(result.best_state, val_view, 16) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("checkpoint save -> load -> continue reproduces the run bitwise") {
  auto data = tiny_dataset();
  auto full = train(tiny_model(), data, tiny_opt(4), DispWeights::single_gamma(0.1), 0.1, 3);

  auto dir = std::filesystem::temp_directory_path() / "disp_resume";
  std::filesystem::remove_all(dir);
  TrainOptions first;
  first.checkpoint_dir = dir;
  first.stop_after_epochs = 2;
  first.run_id = "resume-test";
  auto half = train(tiny_model(), data, tiny_opt(4), DispWeights::single_gamma(0.1), 0.1, 3,
                    first);
  CHECK(half.log.rows.size() == 2);

  TrainOptions second;
  second.checkpoint_dir = dir;
  second.resume = true;
  second.run_id = "resume-test";
  auto resumed = train(tiny_model(), data, tiny_opt(4), DispWeights::single_gamma(0.1), 0.1, 3,
                       second);
  CHECK(logs_equal(resumed.log, full.log));

  // Final parameters identical bitwise.
  for (const auto& [name, t] : full.state.params) {
    auto other = resumed.state.params.at(name).values();
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.values()[i] == other[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics CSV round-trips bitwise") {
  MetricsLog log;
  log.rows.push_back({1, 0.123456789123456789, 0.1, 0.2, 0.3, 0.5, 0.4, 0.6, 0.1});
  log.rows.push_back({2, 1.0 / 3.0, 0.0, 0.0, 0.0, 1.0, 2e-17, 0.99, 0.01});
  auto path = std::filesystem::temp_directory_path() / "disp_metrics.csv";
  log.save_csv(path);
  auto back = MetricsLog::load_csv(path);
  CHECK(logs_equal(log, back));

  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "epoch,L,r_mem,r_batch,R,acc_train,loss_val,acc_test_unbiased,lr");
  std::filesystem::remove(path);
}

TEST_CASE("export_features: unit rows, right count, csv round-trip") {
  auto data = tiny_dataset(160);
  auto model = init_model(tiny_model(), 3);
  auto features = export_features(model, data, {SplitTag::train, SplitTag::test}, "ckpt-xyz");

  std::size_t expect =
      data.split_view(SplitTag::train).size() + data.split_view(SplitTag::test).size();
  CHECK(features.rows.size() == expect);
  for (const auto& row : features.rows) {
    double sq = 0.0;
    for (double v : row.v_hat) sq += v * v;
    CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-9);
  }

  auto path = std::filesystem::temp_directory_path() / "disp_features.csv";
  save_features_csv(features, path);
  auto back = load_features_csv(path);
  CHECK(back.n_gamma == features.n_gamma);
  CHECK(back.checkpoint_id == "ckpt-xyz");
  REQUIRE(back.rows.size() == features.rows.size());
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    CHECK(back.rows[i].target == features.rows[i].target);
    CHECK(back.rows[i].priv == features.rows[i].priv);
    CHECK(back.rows[i].split == features.rows[i].split);
    for (std::size_t j = 0; j < back.n_gamma; ++j)
      CHECK(std::fabs(back.rows[i].v_hat[j] - features.rows[i].v_hat[j]) < 1e-6);
    double sq = 0.0;
    for (double v : back.rows[i].v_hat) sq += v * v;
    CHECK(std::fabs(std::sqrt(sq) - 1.0) < 1e-6);
  }
  std::filesystem::remove(path);
}

TEST_CASE("malformed feature CSV reports the line") {
  auto path = std::filesystem::temp_directory_path() / "disp_bad_features.csv";
  {
    std::ofstream os(path);
    os << "# DISPFEAT1 n_gamma=2 checkpoint=x\nv0,v1,t,p,split\n0.5,0.5,0,1,train\n"
       << "oops,0.1,2,3,test\n";
  }
  CHECK_THROWS_WITH_AS(load_features_csv(path), doctest::Contains("line 4"), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("prediction counts land in the right cells") {
  auto data = tiny_dataset(120);
  auto model = init_model(tiny_model(), 3);
  auto test_view = data.split_view(SplitTag::test);
  auto counts = prediction_counts(model, test_view, 16);
  CHECK(counts.total() == test_view.size());
}
