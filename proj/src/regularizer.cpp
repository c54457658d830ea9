#include "disp/regularizer.hpp"

#include "disp/errors.hpp"

namespace disp {

MemoryBank::MemoryBank(std::size_t num_targets, std::size_t num_private, std::size_t width,
                       double beta)
    : num_targets_(num_targets),
      num_private_(num_private),
      width_(width),
      beta_(beta),
      values_(num_targets * num_private * width, 0.0),
      mask_(num_targets * num_private, 0) {
  if (beta <= 0.0 || beta > 1.0) throw ConfigError("memory bank: beta must be in (0, 1]");
}

bool MemoryBank::initialized(int t, int p) const {
  return mask_[static_cast<std::size_t>(t) * num_private_ + static_cast<std::size_t>(p)] != 0;
}

const double* MemoryBank::row(int t, int p) const {
  return values_.data() +
         (static_cast<std::size_t>(t) * num_private_ + static_cast<std::size_t>(p)) * width_;
}

void MemoryBank::update(const std::map<GroupKey, std::vector<double>>& means) {
  for (const auto& [key, mean] : means) {
    if (key.target < 0 || static_cast<std::size_t>(key.target) >= num_targets_ ||
        key.priv < 0 || static_cast<std::size_t>(key.priv) >= num_private_)
      throw NumericError("memory bank: group key out of range");
    if (mean.size() != width_) throw NumericError("memory bank: mean width mismatch");
    std::size_t cell = static_cast<std::size_t>(key.target) * num_private_ +
                       static_cast<std::size_t>(key.priv);
    double* v = values_.data() + cell * width_;
    if (!mask_[cell]) {
      for (std::size_t i = 0; i < width_; ++i) v[i] = mean[i];
      mask_[cell] = 1;
    } else {
      for (std::size_t i = 0; i < width_; ++i) v[i] = (1.0 - beta_) * v[i] + beta_ * mean[i];
    }
  }
  ++step_count_;
}

void MemoryBank::restore(std::vector<double> values, std::vector<std::uint8_t> mask,
                         std::uint64_t step_count) {
  if (values.size() != values_.size() || mask.size() != mask_.size())
    throw DataError("memory bank: restore size mismatch");
  values_ = std::move(values);
  mask_ = std::move(mask);
  step_count_ = step_count;
}

std::map<GroupKey, std::vector<double>> group_means(const Tensor& v_hat,
                                                    const BatchLabels& labels) {
  if (v_hat.shape().size() != 2) throw NumericError("group_means: v_hat must be [M, N]");
  std::size_t m = v_hat.dim(0), n = v_hat.dim(1);
  if (labels.target.size() != m || labels.priv.size() != m)
    throw NumericError("group_means: label count does not match batch size");

  std::map<GroupKey, std::pair<std::vector<double>, std::size_t>> acc;
  auto vv = v_hat.values();
  for (std::size_t i = 0; i < m; ++i) {
    auto& [sum, count] = acc[{labels.target[i], labels.priv[i]}];
    if (sum.empty()) sum.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) sum[j] += vv[i * n + j];
    ++count;
  }
  std::map<GroupKey, std::vector<double>> out;
  for (auto& [key, entry] : acc) {
    auto& [sum, count] = entry;
    for (double& x : sum) x /= static_cast<double>(count);
    out[key] = std::move(sum);
  }
  return out;
}

Tensor r_mem(const Tensor& v_hat, const BatchLabels& labels, const MemoryBank& bank) {
  std::size_t m = v_hat.dim(0), n = v_hat.dim(1);
  std::size_t c = bank.num_targets(), p = bank.num_private();
  if (c < 2) throw NumericError("r_mem: needs at least two target classes");
  if (n != bank.width()) throw NumericError("r_mem: feature width does not match bank");

  // Correlations against every bank row at once: |v_hat . V^T|, then a mask
  // keeps only (t, p_i) cells with t != t_i. Uninitialized rows are zero and
  // contribute nothing. The bank enters as a constant tensor.
  std::vector<double> vt(n * c * p);
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t q = 0; q < p; ++q) {
      const double* row = bank.row(static_cast<int>(t), static_cast<int>(q));
      for (std::size_t j = 0; j < n; ++j) vt[j * c * p + t * p + q] = row[j];
    }
  Tensor bank_t = Tensor::from_values({n, c * p}, std::move(vt), false);

  std::vector<double> mask(m * c * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    auto ti = static_cast<std::size_t>(labels.target[i]);
    auto pi = static_cast<std::size_t>(labels.priv[i]);
    for (std::size_t t = 0; t < c; ++t)
      if (t != ti) mask[i * c * p + t * p + pi] = 1.0;
  }
  Tensor mask_t = Tensor::from_values({m, c * p}, std::move(mask), false);

  Tensor corr = abs(matmul(v_hat, bank_t));
  double norm = 1.0 / (static_cast<double>(m) * static_cast<double>(c - 1));
  return scale(sum(mul(corr, mask_t)), norm);
}

Tensor r_batch(const Tensor& v_hat, const BatchLabels& labels, std::size_t num_targets) {
  std::size_t m = v_hat.dim(0);
  if (num_targets < 2) throw NumericError("r_batch: needs at least two target classes");
  if (labels.target.size() != m || labels.priv.size() != m)
    throw NumericError("r_batch: label count does not match batch size");

  // Pair weights: w[i][j] = 1/(M n_i) when j shares i's private class with a
  // different target, where n_i is the number of such mates; zero rows (no
  // mates) drop out. Self pairs are excluded by the target condition.
  std::vector<double> weights(m * m, 0.0);
  bool any = false;
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t n_i = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (labels.priv[j] == labels.priv[i] && labels.target[j] != labels.target[i]) ++n_i;
    if (n_i == 0) continue;
    double w = 1.0 / (static_cast<double>(m) * static_cast<double>(n_i));
    for (std::size_t j = 0; j < m; ++j)
      if (labels.priv[j] == labels.priv[i] && labels.target[j] != labels.target[i]) {
        weights[i * m + j] = w;
        any = true;
      }
  }
  // No cross-target pair in the whole batch: the term is identically zero
  // with zero gradient everywhere.
  if (!any) return Tensor::scalar(0.0);
  Tensor weights_t = Tensor::from_values({m, m}, std::move(weights), false);
  Tensor gram = matmul(v_hat, transpose(v_hat));
  return sum(mul(abs(gram), weights_t));
}

Tensor disp_total(const Tensor& r_mem_term, const Tensor& r_batch_term, const DispWeights& w) {
  return add(scale(r_mem_term, w.gamma_mem), scale(r_batch_term, w.gamma_batch));
}

Tensor objective(const Tensor& loss, const Tensor& r_perp, const DispWeights& w) {
  return add(scale(loss, w.eta), r_perp);
}

}  // namespace disp
