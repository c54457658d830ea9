#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace disp {

/// All quantities use base-10 logs, so ten uniform classes carry exactly one
/// digit of information, and 0 log 0 = 0 throughout.

/// Leakage model of a trained classifier: rho is the dataset correlation
/// level, b in [0,1] the tendency to learn the target rather than the
/// private feature (low b = classifies via the private feature).
struct LeakageModelParams {
  double rho = 0.1;
  double b = 0.5;
  static constexpr std::size_t kClasses = 10;

  void validate() const;
};

/// Joint probability table over (t, p, z) in {0..9}^3.
struct DiscreteJoint {
  std::array<double, 1000> table{};

  double& at(std::size_t t, std::size_t p, std::size_t z) {
    return table[t * 100 + p * 10 + z];
  }
  double at(std::size_t t, std::size_t p, std::size_t z) const {
    return table[t * 100 + p * 10 + z];
  }
  double total() const;
};

/// Integer counts over (t, p, z) from a model evaluated on a labeled split.
struct EmpiricalCounts {
  std::array<std::uint64_t, 1000> table{};

  std::uint64_t& at(std::size_t t, std::size_t p, std::size_t z) {
    return table[t * 100 + p * 10 + z];
  }
  std::uint64_t total() const;
};

/// H(P|T) of the biased construction: own color with probability rho, the
/// other nine uniform. Continuous limits at rho = 0 (log10 9) and rho = 1 (0).
double conditional_entropy_p_given_t(double rho);

/// I(P,T) = H(P) - H(P|T) = 1 - H(P|T).
double mutual_info_pt(double rho);

/// The three-term joint: agreement mass rho on t=p=z, errors on aligned
/// samples weighted (1-b), correct answers on conflicting samples weighted b.
DiscreteJoint joint_tpz(const LeakageModelParams& params);

/// I(Z,P) from the numerically marginalized joint.
double mutual_info_pz(const LeakageModelParams& params);

/// The paper prints a closed-form marginal P(p,z) that does not match the
/// marginalization of its joint; this reports the largest per-cell gap so the
/// discrepancy is visible rather than silently resolved.
double printed_marginal_pz_gap(const LeakageModelParams& params);

/// Maximum-likelihood b under joint_tpz(rho, .), golden-section search to
/// 1e-4; cells the model assigns zero mass but that hold counts contribute a
/// 1e-9 floor probability (model misfit tolerated).
double estimate_b(const EmpiricalCounts& counts, double rho);

/// Multinomial draws from the model, for estimator self-consistency checks.
EmpiricalCounts sample_counts(const LeakageModelParams& params, std::uint64_t n,
                              std::uint64_t seed);

}  // namespace disp
