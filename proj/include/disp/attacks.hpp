#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disp/tensor.hpp"

namespace disp {

/// Principal directions of a row-major [rows, dim] sample, ordered by
/// non-increasing eigenvalue, with the minimal dimension retaining at least
/// 95% of the energy.
struct PcaModel {
  std::size_t input_dim = 0;
  std::size_t retained = 0;               // d
  std::vector<double> mean;               // [input_dim]
  std::vector<double> directions;         // [input_dim, input_dim], rows orthonormal
  std::vector<double> eigenvalues;        // non-increasing
  double retained_energy = 0.0;

  /// Project rows onto the first `dims` directions (0 = retained).
  std::vector<double> project(const std::vector<double>& rows, std::size_t count,
                              std::size_t dims = 0) const;
  /// Back-projection onto the original space.
  std::vector<double> reconstruct(const std::vector<double>& projected, std::size_t count,
                                  std::size_t dims = 0) const;
};

PcaModel pca_fit(const std::vector<double>& rows, std::size_t count, std::size_t dim,
                 double energy = 0.95);

struct ClusterAssignment {
  std::vector<int> cluster;  // -1 = noise
  double eps = 0.0;
  std::size_t min_pts = 0;
  std::size_t cluster_count = 0;
};

/// Density-reachability clustering, deterministic given input order
/// (core-point expansion in index order). Neighborhoods are closed balls and
/// include the query point.
ClusterAssignment dbscan(const std::vector<double>& rows, std::size_t count, std::size_t dim,
                         double eps, std::size_t min_pts);

/// minPts = max(10, 2 dim); eps at the maximum-curvature point of the sorted
/// minPts-nearest-neighbor distance curve, falling back to the median
/// k-distance when the knee is degenerate.
std::pair<double, std::size_t> choose_dbscan_params(const std::vector<double>& rows,
                                                    std::size_t count, std::size_t dim);

struct UnsupervisedLeakage {
  double leakage_accuracy = 0.0;          // cluster-majority vote vs private label
  double private_majority_fraction = 0.0;  // clusters with > 50% one private class
  std::size_t cluster_count = 0;
  double noise_fraction = 0.0;
  bool degenerate = false;  // no clusters found; accuracy is the majority baseline
};

/// Each cluster votes its majority private class; noise rows count against
/// the attacker via the global majority class.
UnsupervisedLeakage unsupervised_leakage(const ClusterAssignment& assignment,
                                         const std::vector<int>& private_labels);

struct ProbeConfig {
  std::vector<std::size_t> hidden = {300};  // {300} or {600, 300}
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 100;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;

  void validate() const;
  std::string layout_name() const;  // "1H" / "2H"
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// The worst-case supervised attack: an MLP trained on labeled features with
/// the fixed recipe (no validation, no tuning), reporting final train/test
/// accuracy. High train with chance-level test is the memorization signature.
ProbeResult supervised_probe(const std::vector<double>& train_rows,
                             const std::vector<int>& train_labels,
                             const std::vector<double>& test_rows,
                             const std::vector<int>& test_labels, std::size_t dim,
                             const ProbeConfig& cfg);

struct LeakageReport {
  UnsupervisedLeakage unsupervised;
  std::size_t pca_retained = 0;
  double dbscan_eps = 0.0;
  std::size_t dbscan_min_pts = 0;
  std::vector<std::pair<std::string, ProbeResult>> probes;  // layout name -> result
};

}  // namespace disp
