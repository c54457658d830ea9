#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "disp/dataset.hpp"
#include "disp/infotheory.hpp"
#include "disp/model.hpp"
#include "disp/regularizer.hpp"

namespace disp {

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 1e-4;
  std::size_t batch_size = 100;
  std::size_t epochs = 50;

  // Plateau schedule; off for the desk-scale recipe, available for the
  // full-scale one (decay x10 on stalled validation, stop below 1e-3).
  bool plateau_enabled = false;
  std::size_t plateau_patience = 10;
  double plateau_decay = 0.1;
  double stop_lr_threshold = 1e-3;

  void validate() const;
};

/// theta-update of one parameter: g' = g + wd*theta; u <- momentum*u + g';
/// theta <- theta - lr*u. Rejects non-finite gradients.
void sgd_step(Tensor& param, std::span<const double> grad, std::vector<double>& velocity,
              const OptimizerConfig& cfg);

struct MetricsRow {
  std::size_t epoch = 0;    // 1-based
  double loss = 0.0;        // sample-weighted mean training cross-entropy
  double r_mem = 0.0;       // measured, unweighted
  double r_batch = 0.0;
  double r_total = 0.0;     // r_mem + r_batch as measured
  double acc_train = 0.0;
  double loss_val = 0.0;
  double acc_test_unbiased = 0.0;
  double lr = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  void save_csv(const std::filesystem::path& path) const;
  static MetricsLog load_csv(const std::filesystem::path& path);
};

struct TrainOptions {
  /// When set, latest.ckpt (full resume state) and best.ckpt (lowest
  /// validation loss) are maintained here.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop this session after N completed epochs (0 = run to cfg.epochs).
  /// Session control only; not part of the experiment identity.
  std::size_t stop_after_epochs = 0;
  bool resume = false;
  /// Measure r_mem/r_batch even when both gammas are zero (Table-style
  /// reporting). Turning this off skips the measurement entirely.
  bool measure_disp = true;
  std::string run_id;  // recorded in checkpoints and feature exports
};

struct TrainResult {
  ModelState state;        // after the last completed epoch
  ModelState best_state;   // at the lowest validation loss
  std::size_t best_epoch = 0;
  MemoryBank bank;
  MetricsLog log;
  bool stopped_early = false;  // plateau schedule hit the lr floor
};

/// Minimize J = eta*CE + gamma_mem*R_mem + gamma_batch*R_batch with SGD.
/// Per minibatch: forward, loss, group means, memory update, DisP terms,
/// backward, step. Checkpoints at every epoch; the best state follows the
/// validation loss. Deterministic for a fixed (seed, config, dataset).
TrainResult train(const ModelConfig& model_cfg, const BiasedDataset& data,
                  const OptimizerConfig& opt, const DispWeights& weights, double beta,
                  std::uint64_t seed, const TrainOptions& options = {});

struct FeatureRow {
  std::vector<double> v_hat;
  int target = 0;
  int priv = 0;
  SplitTag split = SplitTag::train;
};

struct FeatureExport {
  std::size_t n_gamma = 0;
  std::string checkpoint_id;
  std::vector<FeatureRow> rows;
};

/// Bottleneck features in dataset order for the given splits (the worst-case
/// attacker sees train and test together).
FeatureExport export_features(const ModelState& state, const BiasedDataset& data,
                              const std::vector<SplitTag>& splits,
                              const std::string& checkpoint_id);

void save_features_csv(const FeatureExport& features, const std::filesystem::path& path);
FeatureExport load_features_csv(const std::filesystem::path& path);

// Evaluation helpers (no gradient recording).
double dataset_loss(const ModelState& state, const std::vector<const SampleRecord*>& view,
                    std::size_t batch_size);
double dataset_accuracy(const ModelState& state, const std::vector<const SampleRecord*>& view,
                        std::size_t batch_size);
/// (t, p, z) counts of model predictions over a split, for estimating b.
EmpiricalCounts prediction_counts(const ModelState& state,
                                  const std::vector<const SampleRecord*>& view,
                                  std::size_t batch_size);

/// Model + memory bank + optimizer state snapshot (DISPCKPT1 container).
void save_training_checkpoint(const std::filesystem::path& path, const ModelState& state,
                              const MemoryBank& bank,
                              const std::map<std::string, std::vector<double>>& velocity,
                              const MetricsLog& log, std::size_t completed_epochs,
                              double best_val_loss, std::size_t best_epoch, double current_lr,
                              std::size_t epochs_since_improvement, const std::string& run_id);

struct LoadedCheckpoint {
  ModelState state;
  MemoryBank bank;
  std::map<std::string, std::vector<double>> velocity;
  MetricsLog log;
  std::size_t completed_epochs = 0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  double current_lr = 0.0;
  std::size_t epochs_since_improvement = 0;
  std::string run_id;
};

LoadedCheckpoint load_training_checkpoint(const std::filesystem::path& path);

}  // namespace disp
