#include "disp/infotheory.hpp"

#include <algorithm>
#include <cmath>

#include "disp/errors.hpp"
#include "disp/rng.hpp"

namespace disp {

namespace {

constexpr std::size_t kC = LeakageModelParams::kClasses;

double xlog10(double x) { return x > 0.0 ? x * std::log10(x) : 0.0; }

}  // namespace

void LeakageModelParams::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("leakage model: rho must be in [0,1]");
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("leakage model: b must be in [0,1]");
}

double DiscreteJoint::total() const {
  double s = 0.0;
  for (double v : table) s += v;
  return s;
}

std::uint64_t EmpiricalCounts::total() const {
  std::uint64_t s = 0;
  for (auto v : table) s += v;
  return s;
}

double conditional_entropy_p_given_t(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw ConfigError("conditional entropy: rho must be in [0,1]");
  // rho log10[(1-rho)/(9 rho)] + log10[9/(1-rho)], which equals the direct
  // -sum p log10 p of the conditional row; both endpoint limits are finite.
  if (rho == 0.0) return std::log10(9.0);
  if (rho == 1.0) return 0.0;
  return -xlog10(rho) - (1.0 - rho) * std::log10((1.0 - rho) / 9.0);
}

double mutual_info_pt(double rho) { return 1.0 - conditional_entropy_p_given_t(rho); }

DiscreteJoint joint_tpz(const LeakageModelParams& params) {
  params.validate();
  const double rho = params.rho, b = params.b;
  DiscreteJoint joint;
  for (std::size_t t = 0; t < kC; ++t)
    for (std::size_t p = 0; p < kC; ++p)
      for (std::size_t z = 0; z < kC; ++z) {
        double v = 0.0;
        if (t == p && p == z) v += rho;
        if (t != z && t == p) v += (1.0 - b) * (1.0 - rho) / 9.0;
        if (t != p && t == z) v += b * (1.0 - rho) / 9.0;
        joint.at(t, p, z) = v / 10.0;
      }
  return joint;
}

double mutual_info_pz(const LeakageModelParams& params) {
  DiscreteJoint joint = joint_tpz(params);
  std::array<std::array<double, kC>, kC> pz{};
  std::array<double, kC> p_marg{}, z_marg{};
  for (std::size_t t = 0; t < kC; ++t)
    for (std::size_t p = 0; p < kC; ++p)
      for (std::size_t z = 0; z < kC; ++z) pz[p][z] += joint.at(t, p, z);
  for (std::size_t p = 0; p < kC; ++p)
    for (std::size_t z = 0; z < kC; ++z) {
      p_marg[p] += pz[p][z];
      z_marg[z] += pz[p][z];
    }
  double mi = 0.0;
  for (std::size_t p = 0; p < kC; ++p)
    for (std::size_t z = 0; z < kC; ++z)
      if (pz[p][z] > 0.0) mi += pz[p][z] * std::log10(pz[p][z] / (p_marg[p] * z_marg[z]));
  return mi;
}

double printed_marginal_pz_gap(const LeakageModelParams& params) {
  DiscreteJoint joint = joint_tpz(params);
  const double rho = params.rho, b = params.b;
  double gap = 0.0;
  for (std::size_t p = 0; p < kC; ++p)
    for (std::size_t z = 0; z < kC; ++z) {
      double marginal = 0.0;
      for (std::size_t t = 0; t < kC; ++t) marginal += joint.at(t, p, z);
      // As printed: diagonal rho + b(1-rho), off-diagonal (1-b)(1-rho)/9,
      // all scaled by 1/10.
      double printed = (p == z) ? (rho + b * (1.0 - rho)) / 10.0
                                : (1.0 - b) * (1.0 - rho) / 90.0;
      gap = std::max(gap, std::fabs(printed - marginal));
    }
  return gap;
}

double estimate_b(const EmpiricalCounts& counts, double rho) {
  if (counts.total() == 0) throw NumericError("estimate_b: empty counts");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("estimate_b: rho must be in [0,1]");

  auto log_likelihood = [&](double b) {
    DiscreteJoint joint = joint_tpz({rho, b});
    double ll = 0.0;
    for (std::size_t cell = 0; cell < joint.table.size(); ++cell) {
      if (counts.table[cell] == 0) continue;
      double p = std::max(joint.table[cell], 1e-9);
      ll += static_cast<double>(counts.table[cell]) * std::log(p);
    }
    return ll;
  };

  // Golden-section search on [0,1] to 1e-4.
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0, hi = 1.0;
  double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
  double f1 = log_likelihood(x1), f2 = log_likelihood(x2);
  while (hi - lo > 1e-4) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = log_likelihood(x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = log_likelihood(x1);
    }
  }
  double mid = 0.5 * (lo + hi);
  // The endpoints can strictly dominate the interior.
  double best = mid, best_ll = log_likelihood(mid);
  for (double cand : {0.0, 1.0})
    if (log_likelihood(cand) > best_ll) {
      best = cand;
      best_ll = log_likelihood(cand);
    }
  return best;
}

EmpiricalCounts sample_counts(const LeakageModelParams& params, std::uint64_t n,
                              std::uint64_t seed) {
  DiscreteJoint joint = joint_tpz(params);
  std::array<double, 1000> cdf{};
  double acc = 0.0;
  for (std::size_t i = 0; i < joint.table.size(); ++i) {
    acc += joint.table[i];
    cdf[i] = acc;
  }
  CounterRng rng(seed, 0x434E5453);  // stream "CNTS"
  EmpiricalCounts counts;
  for (std::uint64_t i = 0; i < n; ++i) {
    double u = rng.uniform(i) * acc;
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    counts.table[static_cast<std::size_t>(it - cdf.begin())]++;
  }
  return counts;
}

}  // namespace disp
