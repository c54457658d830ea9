#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <string>

#include "disp/errors.hpp"
#include "disp/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

disp::ExperimentConfig load_config(const std::string& path, std::uint64_t seed,
                                   std::size_t repeats, bool seed_given) {
  disp::ExperimentConfig config = disp::ExperimentConfig::from_file(path);
  if (seed_given || repeats > 1) {
    config.seeds.clear();
    for (std::size_t i = 0; i < std::max<std::size_t>(repeats, 1); ++i)
      config.seeds.push_back(seed + i);
  } else if (repeats > config.seeds.size()) {
    std::uint64_t next = config.seeds.back() + 1;
    while (config.seeds.size() < repeats) config.seeds.push_back(next++);
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DisP laboratory: biased-MNIST training with the disentangling "
               "regularizer, leakage attacks and the closed-form analysis"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", features_path;
  std::uint64_t seed = 1;
  std::size_t repeats = 1, stop_after = 0;
  bool resume = false;

  app.add_option("--config", config_path, "Experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "Base seed (overrides config seeds)");
  app.add_option("--out", out_dir, "Artifact root; everything lands under <out>/<hash>/");
  app.add_option("--repeats", repeats, "Seeded repeats (seed, seed+1, ...)");

  auto* cmd_dataset = app.add_subcommand("dataset", "Build the biased dataset");
  auto* cmd_train = app.add_subcommand("train", "Train the seeded runs and export features");
  cmd_train->add_flag("--resume", resume, "Continue interrupted runs from latest.ckpt");
  cmd_train->add_option("--stop-after", stop_after,
                        "Stop each run after N completed epochs (session control)");
  auto* cmd_attack = app.add_subcommand("attack", "Run the leakage attacks on a feature export");
  cmd_attack->add_option("--features", features_path,
                         "Feature CSV (default: the trained experiment's export)");
  auto* cmd_analyze = app.add_subcommand("analyze", "Emit MI curve grids and the ablation table");
  auto* cmd_report = app.add_subcommand("report", "Assemble the run report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (config_path.empty()) throw disp::ConfigError("--config is required");
    disp::ExperimentConfig config =
        load_config(config_path, seed, repeats, seed_opt->count() > 0);

    if (cmd_dataset->parsed()) {
      auto dir = disp::cmd_dataset(config, out_dir);
      std::printf("dataset: %s\n", dir.string().c_str());
    } else if (cmd_train->parsed()) {
      auto summary = disp::cmd_train(config, out_dir, resume, stop_after);
      for (const auto& run : summary.runs)
        std::printf("run seed=%llu best_epoch=%zu acc_test=%.4f R=%.4f b_hat=%.3f\n",
                    static_cast<unsigned long long>(run.seed), run.best_epoch,
                    run.test_accuracy, run.final_r, run.b_hat);
      std::printf("median seed=%llu features=%s\n",
                  static_cast<unsigned long long>(summary.median_seed),
                  summary.features_csv.c_str());
    } else if (cmd_attack->parsed()) {
      std::filesystem::path features = features_path;
      if (features.empty())
        features = std::filesystem::path(out_dir) / config.hash() / "features.csv";
      auto report = disp::cmd_attack(config, features,
                                     std::filesystem::path(out_dir) / config.hash() / "attack");
      std::printf("unsupervised leakage=%.4f private-majority=%.4f clusters=%zu noise=%.3f\n",
                  report.unsupervised.leakage_accuracy,
                  report.unsupervised.private_majority_fraction,
                  report.unsupervised.cluster_count, report.unsupervised.noise_fraction);
      for (const auto& [name, probe] : report.probes)
        std::printf("probe %s train=%.4f test=%.4f\n", name.c_str(), probe.train_accuracy,
                    probe.test_accuracy);
    } else if (cmd_analyze->parsed()) {
      disp::cmd_analyze(config, out_dir);
      std::printf("analysis: %s\n",
                  (std::filesystem::path(out_dir) / config.hash() / "analysis").string().c_str());
    } else if (cmd_report->parsed()) {
      auto path = disp::cmd_report(config, out_dir);
      std::printf("report: %s\n", path.string().c_str());
    }
  } catch (const disp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const disp::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const disp::Error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return kExitOk;
}
