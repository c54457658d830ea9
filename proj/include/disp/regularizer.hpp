#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "disp/tensor.hpp"

namespace disp {

/// (target, private) cell identifying one feature group within a batch.
struct GroupKey {
  int target = 0;
  int priv = 0;
  auto operator<=>(const GroupKey&) const = default;
};

struct BatchLabels {
  std::vector<int> target;  // T(v_i)
  std::vector<int> priv;    // P(v_i)
};

/// Running average V_{t,p} of per-group mean features across minibatches.
/// Rows are exponential averages of unit vectors, so they are not unit-norm
/// themselves. A row stays exactly zero until its group is first seen; the
/// first sighting writes the group mean directly.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t num_targets, std::size_t num_private, std::size_t width,
             double beta = 0.1);

  std::size_t num_targets() const { return num_targets_; }
  std::size_t num_private() const { return num_private_; }
  std::size_t width() const { return width_; }
  double beta() const { return beta_; }
  std::uint64_t step_count() const { return step_count_; }

  bool initialized(int t, int p) const;
  /// Row V_{t,p}; all zeros when uninitialized.
  const double* row(int t, int p) const;

  /// Eq.-5 update from the current batch group means: first sighting writes
  /// F, later ones blend V <- (1-beta) V + beta F. Increments the minibatch
  /// counter. Sequential by contract; the result is order dependent.
  void update(const std::map<GroupKey, std::vector<double>>& means);

  const std::vector<double>& raw() const { return values_; }
  const std::vector<std::uint8_t>& raw_mask() const { return mask_; }
  void restore(std::vector<double> values, std::vector<std::uint8_t> mask,
               std::uint64_t step_count);

 private:
  std::size_t num_targets_ = 0, num_private_ = 0, width_ = 0;
  double beta_ = 0.1;
  std::uint64_t step_count_ = 0;
  std::vector<double> values_;       // [C * P, width]
  std::vector<std::uint8_t> mask_;   // [C * P]
};

/// Weights of the composed objective: J = eta * L + gamma_mem * R_mem +
/// gamma_batch * R_batch. The paper's single gamma maps to
/// gamma_mem = gamma_batch = gamma.
struct DispWeights {
  double gamma_mem = 0.0;
  double gamma_batch = 0.0;
  double eta = 1.0;

  static DispWeights single_gamma(double gamma, double eta = 1.0) {
    return {gamma, gamma, eta};
  }
};

/// Per-(t,p) mean of the unit-norm rows of v_hat; empty groups are absent.
std::map<GroupKey, std::vector<double>> group_means(const Tensor& v_hat,
                                                    const BatchLabels& labels);

/// Memory-based disentangling term: mean absolute correlation between each
/// sample and the stored averages of other targets within its own private
/// class, normalized by M * (C - 1). The bank is a constant for gradients.
Tensor r_mem(const Tensor& v_hat, const BatchLabels& labels, const MemoryBank& bank);

/// In-batch disentangling term: for each sample, the mean absolute
/// correlation against batch mates sharing its private class with a different
/// target; samples without such mates contribute zero. Gradients flow through
/// both sides of every pair.
Tensor r_batch(const Tensor& v_hat, const BatchLabels& labels, std::size_t num_targets);

/// R_perp = gamma_mem * r_mem + gamma_batch * r_batch.
Tensor disp_total(const Tensor& r_mem_term, const Tensor& r_batch_term, const DispWeights& w);

/// J = eta * L + R_perp.
Tensor objective(const Tensor& loss, const Tensor& r_perp, const DispWeights& w);

}  // namespace disp
