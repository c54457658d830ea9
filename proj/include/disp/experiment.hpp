#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "disp/attacks.hpp"
#include "disp/dataset.hpp"
#include "disp/model.hpp"
#include "disp/regularizer.hpp"
#include "disp/trainer.hpp"

namespace disp {

/// One fully specified experiment: dataset construction, model, optimizer,
/// DisP weights, attack recipe and seeds. The canonical JSON form hashes to
/// the run identity; artifacts live under <out>/<hash>/.
struct ExperimentConfig {
  std::string name;
  std::string mnist_dir;
  BiasConfig bias;
  ModelConfig model = ModelConfig::reference();
  OptimizerConfig optimizer;
  DispWeights weights;
  double beta = 0.1;
  ProbeConfig probe;
  double dbscan_eps = 0.0;        // 0 = choose from the k-distance curve
  std::size_t dbscan_min_pts = 0;  // 0 = max(10, 2d)
  std::vector<std::string> ablation_runs;  // experiment dirs for `analyze`
  std::vector<std::uint64_t> seeds = {1};

  /// Parse + schema-validate (unknown keys rejected).
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  std::string canonical_json() const;
  /// FNV-1a 64 of the canonical form, 16 hex digits.
  std::string hash() const;
  void validate() const;
};

struct RunSummaryEntry {
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double test_accuracy = 0.0;  // best checkpoint, unbiased test split
  double final_r_mem = 0.0;
  double final_r_batch = 0.0;
  double final_r = 0.0;        // last-epoch measured R
  double b_hat = 0.0;          // ML estimate over the validation split
  std::string run_dir;
};

struct TrainSummary {
  std::string config_hash;
  std::string experiment_dir;
  double rho = 0.0;
  double gamma_mem = 0.0;
  double gamma_batch = 0.0;
  std::vector<RunSummaryEntry> runs;
  std::uint64_t median_seed = 0;  // median test accuracy; attacked run
  std::string features_csv;

  const RunSummaryEntry& median_run() const;
  double median_test_accuracy() const;
  double median_final_r() const;
};

/// `dataset`: build + persist the biased dataset; returns the dataset dir.
std::filesystem::path cmd_dataset(const ExperimentConfig& config,
                                  const std::filesystem::path& out);

/// `train`: one seeded run per seed (resumable), summary with the
/// median-accuracy run selected and its features exported for the attacks.
TrainSummary cmd_train(const ExperimentConfig& config, const std::filesystem::path& out,
                       bool resume = false, std::size_t stop_after_epochs = 0);

TrainSummary load_train_summary(const std::filesystem::path& experiment_dir);

/// `attack`: unsupervised PCA+DBSCAN leakage plus both probe layouts on a
/// feature export; writes leakage_report.json and Fig.-7-style scatter data.
LeakageReport cmd_attack(const ExperimentConfig& config,
                         const std::filesystem::path& features_csv,
                         const std::filesystem::path& out_dir);

LeakageReport load_leakage_report(const std::filesystem::path& path);

/// `analyze`: closed-form I(P,T) and I(Z,P) curve grids, plus the ablation
/// table when run dirs are configured.
void cmd_analyze(const ExperimentConfig& config, const std::filesystem::path& out);

/// `report`: assemble the run report (config hash, training summary, leakage,
/// information-theoretic quantities, artifact paths); every referenced
/// artifact must exist.
std::filesystem::path cmd_report(const ExperimentConfig& config,
                                 const std::filesystem::path& out);

}  // namespace disp
