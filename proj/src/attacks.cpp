#include "disp/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

#include "disp/errors.hpp"
#include "disp/rng.hpp"
#include "disp/trainer.hpp"
#include "parallel.hpp"

namespace disp {

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Exact for the
// sizes we care about (N_Gamma <= 64) and dependency-free.
void jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

  const double tol = 1e-10;
  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (std::sqrt(off) < tol) break;

    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a[p * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        double app = a[p * n + p], aqq = a[q * n + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = eigvecs[k * n + p], vkq = eigvecs[k * n + q];
          eigvecs[k * n + p] = c * vkp - s * vkq;
          eigvecs[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

double sq_distance(const double* a, const double* b, std::size_t dim) {
  double d = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    double diff = a[k] - b[k];
    d += diff * diff;
  }
  return d;
}

}  // namespace

PcaModel pca_fit(const std::vector<double>& rows, std::size_t count, std::size_t dim,
                 double energy) {
  if (count < 2) throw NumericError("pca: needs at least two rows");
  if (rows.size() != count * dim) throw NumericError("pca: row buffer size mismatch");

  PcaModel model;
  model.input_dim = dim;
  model.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < dim; ++j) model.mean[j] += rows[i * dim + j];
  for (double& m : model.mean) m /= static_cast<double>(count);

  // Sample covariance.
  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < dim; ++j) {
      double dj = rows[i * dim + j] - model.mean[j];
      for (std::size_t k = j; k < dim; ++k)
        cov[j * dim + k] += dj * (rows[i * dim + k] - model.mean[k]);
    }
  for (std::size_t j = 0; j < dim; ++j)
    for (std::size_t k = j; k < dim; ++k) {
      cov[j * dim + k] /= static_cast<double>(count - 1);
      cov[k * dim + j] = cov[j * dim + k];
    }

  std::vector<double> eigvals, eigvecs;
  jacobi_eigen(cov, dim, eigvals, eigvecs);

  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

  double total = 0.0;
  model.eigenvalues.resize(dim);
  model.directions.resize(dim * dim);
  for (std::size_t r = 0; r < dim; ++r) {
    model.eigenvalues[r] = std::max(eigvals[order[r]], 0.0);
    total += model.eigenvalues[r];
    for (std::size_t j = 0; j < dim; ++j)
      model.directions[r * dim + j] = eigvecs[j * dim + order[r]];
  }
  if (total <= 0.0) throw NumericError("pca: zero-variance data, no direction retains energy");

  double acc = 0.0;
  model.retained = dim;
  for (std::size_t r = 0; r < dim; ++r) {
    acc += model.eigenvalues[r];
    if (acc / total >= energy) {
      model.retained = r + 1;
      model.retained_energy = acc / total;
      break;
    }
  }
  return model;
}

std::vector<double> PcaModel::project(const std::vector<double>& rows, std::size_t count,
                                      std::size_t dims) const {
  if (dims == 0) dims = retained;
  std::vector<double> out(count * dims);
  detail::parallel_blocks(count, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t r = 0; r < dims; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < input_dim; ++j)
          acc += (rows[i * input_dim + j] - mean[j]) * directions[r * input_dim + j];
        out[i * dims + r] = acc;
      }
  });
  return out;
}

std::vector<double> PcaModel::reconstruct(const std::vector<double>& projected,
                                          std::size_t count, std::size_t dims) const {
  if (dims == 0) dims = retained;
  std::vector<double> out(count * input_dim);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t j = 0; j < input_dim; ++j) {
      double acc = mean[j];
      for (std::size_t r = 0; r < dims; ++r)
        acc += projected[i * dims + r] * directions[r * input_dim + j];
      out[i * input_dim + j] = acc;
    }
  return out;
}

ClusterAssignment dbscan(const std::vector<double>& rows, std::size_t count, std::size_t dim,
                         double eps, std::size_t min_pts) {
  if (!(eps >= 0.0)) throw NumericError("dbscan: eps must be non-negative");
  if (min_pts < 2) throw NumericError("dbscan: minPts must be at least 2");

  ClusterAssignment out;
  out.eps = eps;
  out.min_pts = min_pts;
  out.cluster.assign(count, -1);
  const double eps_sq = eps * eps;

  auto query = [&](std::size_t i, std::vector<std::size_t>& neighbors) {
    neighbors.clear();
    std::vector<std::uint8_t> hit(count, 0);
    detail::parallel_blocks(count, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t j = lo; j < hi; ++j)
        hit[j] = sq_distance(rows.data() + i * dim, rows.data() + j * dim, dim) <= eps_sq;
    });
    for (std::size_t j = 0; j < count; ++j)
      if (hit[j]) neighbors.push_back(j);
  };

  std::vector<std::uint8_t> visited(count, 0);
  std::vector<std::size_t> neighbors, expansion;
  int next_cluster = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (visited[i]) continue;
    visited[i] = 1;
    query(i, neighbors);
    if (neighbors.size() < min_pts) continue;  // stays noise unless claimed as border

    int cluster_id = next_cluster++;
    out.cluster[i] = cluster_id;
    std::deque<std::size_t> seeds(neighbors.begin(), neighbors.end());
    while (!seeds.empty()) {
      std::size_t j = seeds.front();
      seeds.pop_front();
      if (out.cluster[j] == -1) out.cluster[j] = cluster_id;  // border or chained core
      if (visited[j]) continue;
      visited[j] = 1;
      query(j, expansion);
      if (expansion.size() >= min_pts)
        seeds.insert(seeds.end(), expansion.begin(), expansion.end());
    }
  }
  out.cluster_count = static_cast<std::size_t>(next_cluster);
  return out;
}

std::pair<double, std::size_t> choose_dbscan_params(const std::vector<double>& rows,
                                                    std::size_t count, std::size_t dim) {
  std::size_t min_pts = std::max<std::size_t>(10, 2 * dim);
  if (count <= min_pts)
    throw NumericError("choose_dbscan_params: needs more rows than minPts");

  // Distance to the (minPts-1)-th nearest other point, so a ball of that
  // radius holds minPts points including the center.
  std::size_t k = min_pts - 1;
  std::vector<double> kdist(count);
  detail::parallel_blocks(count, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> dists;
    for (std::size_t i = lo; i < hi; ++i) {
      dists.clear();
      for (std::size_t j = 0; j < count; ++j)
        if (j != i)
          dists.push_back(sq_distance(rows.data() + i * dim, rows.data() + j * dim, dim));
      std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k - 1),
                       dists.end());
      kdist[i] = std::sqrt(dists[k - 1]);
    }
  });
  std::sort(kdist.begin(), kdist.end());

  double median = kdist[count / 2];
  double lo = kdist.front(), hi = kdist.back();
  double eps = 0.0;
  if (hi - lo > 1e-12) {
    // Knee: the point of maximum deviation from the chord between the curve's
    // endpoints (both axes normalized).
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < count; ++i) {
      double x = static_cast<double>(i) / static_cast<double>(count - 1);
      double y = (kdist[i] - lo) / (hi - lo);
      double deviation = std::fabs(y - x);
      if (deviation > best) {
        best = deviation;
        best_i = i;
      }
    }
    eps = kdist[best_i];
  }
  if (eps <= 0.0) eps = median;          // degenerate knee: flat or zero curve
  if (eps <= 0.0) eps = 1e-12;           // duplicate-heavy data: keep it positive
  return {eps, min_pts};
}

UnsupervisedLeakage unsupervised_leakage(const ClusterAssignment& assignment,
                                         const std::vector<int>& private_labels) {
  if (assignment.cluster.size() != private_labels.size())
    throw NumericError("unsupervised_leakage: assignment does not cover all rows");
  std::size_t n = private_labels.size();
  if (n == 0) throw NumericError("unsupervised_leakage: empty input");

  int max_label = *std::max_element(private_labels.begin(), private_labels.end());
  std::size_t classes = static_cast<std::size_t>(max_label) + 1;

  std::vector<std::size_t> global(classes, 0);
  for (int p : private_labels) global[static_cast<std::size_t>(p)]++;
  int global_majority = static_cast<int>(
      std::max_element(global.begin(), global.end()) - global.begin());

  std::vector<std::vector<std::size_t>> per_cluster(assignment.cluster_count,
                                                    std::vector<std::size_t>(classes, 0));
  std::size_t noise = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int c = assignment.cluster[i];
    if (c < 0)
      ++noise;
    else
      per_cluster[static_cast<std::size_t>(c)][static_cast<std::size_t>(private_labels[i])]++;
  }

  UnsupervisedLeakage out;
  out.cluster_count = assignment.cluster_count;
  out.noise_fraction = static_cast<double>(noise) / static_cast<double>(n);
  out.degenerate = assignment.cluster_count == 0;

  std::size_t correct = 0, private_majority = 0;
  std::vector<int> votes(assignment.cluster_count, global_majority);
  for (std::size_t c = 0; c < assignment.cluster_count; ++c) {
    const auto& hist = per_cluster[c];
    std::size_t size = std::accumulate(hist.begin(), hist.end(), std::size_t{0});
    auto it = std::max_element(hist.begin(), hist.end());
    votes[c] = static_cast<int>(it - hist.begin());
    if (size > 0 && 2 * *it > size) ++private_majority;
  }
  for (std::size_t i = 0; i < n; ++i) {
    int vote = assignment.cluster[i] < 0
                   ? global_majority
                   : votes[static_cast<std::size_t>(assignment.cluster[i])];
    correct += vote == private_labels[i];
  }
  out.leakage_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  out.private_majority_fraction =
      assignment.cluster_count == 0
          ? 0.0
          : static_cast<double>(private_majority) / static_cast<double>(assignment.cluster_count);
  return out;
}

void ProbeConfig::validate() const {
  bool one_h = hidden == std::vector<std::size_t>{300};
  bool two_h = hidden == std::vector<std::size_t>{600, 300};
  if (!one_h && !two_h)
    throw ConfigError("probe: hidden layout must be [300] (1H) or [600, 300] (2H)");
  if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 1)
    throw ConfigError("probe: invalid optimizer settings");
}

std::string ProbeConfig::layout_name() const { return hidden.size() == 1 ? "1H" : "2H"; }

ProbeResult supervised_probe(const std::vector<double>& train_rows,
                             const std::vector<int>& train_labels,
                             const std::vector<double>& test_rows,
                             const std::vector<int>& test_labels, std::size_t dim,
                             const ProbeConfig& cfg) {
  cfg.validate();
  std::size_t n_train = train_labels.size(), n_test = test_labels.size();
  if (train_rows.size() != n_train * dim || test_rows.size() != n_test * dim)
    throw NumericError("probe: row buffer size mismatch");
  if (n_train == 0) throw NumericError("probe: empty training set");

  int max_label = *std::max_element(train_labels.begin(), train_labels.end());
  if (!test_labels.empty())
    max_label = std::max(max_label, *std::max_element(test_labels.begin(), test_labels.end()));
  std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  if (std::all_of(train_labels.begin(), train_labels.end(),
                  [&](int l) { return l == train_labels[0]; }))
    throw NumericError("probe: training labels hold a single class");

  // Fan-in uniform init, seeded.
  std::vector<std::size_t> widths = cfg.hidden;
  widths.push_back(classes);
  std::vector<Tensor> weights, biases;
  std::size_t in_w = dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    CounterRng rng(mix_seed(cfg.seed, 0xBEEF00 + l), 0x50524F42);  // stream "PROB"
    double bound = 1.0 / std::sqrt(static_cast<double>(in_w));
    std::vector<double> w(in_w * widths[l]);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(i, -bound, bound);
    weights.push_back(Tensor::from_values({in_w, widths[l]}, std::move(w), true));
    biases.push_back(Tensor::zeros({widths[l]}, true));
    in_w = widths[l];
  }

  auto forward_rows = [&](const std::vector<double>& flat, std::size_t from, std::size_t count,
                          bool record) {
    std::vector<double> chunk(flat.begin() + static_cast<std::ptrdiff_t>(from * dim),
                              flat.begin() + static_cast<std::ptrdiff_t>((from + count) * dim));
    Tensor h = Tensor::from_values({count, dim}, std::move(chunk));
    for (std::size_t l = 0; l < widths.size(); ++l) {
      Tensor w = record ? weights[l] : weights[l].detached();
      Tensor b = record ? biases[l] : biases[l].detached();
      h = add(matmul(h, w), b);
      if (l + 1 < widths.size()) h = relu(h);
    }
    return h;
  };

  OptimizerConfig step;
  step.learning_rate = cfg.learning_rate;
  step.momentum = cfg.momentum;
  step.weight_decay = cfg.weight_decay;
  step.batch_size = std::max<std::size_t>(cfg.batch_size, 2);
  step.epochs = cfg.epochs;

  std::vector<std::vector<double>> velocity(2 * widths.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = shuffled_indices(n_train, cfg.seed, 0x50534846 + epoch);  // "PSHF"
    for (std::size_t from = 0; from < n_train; from += cfg.batch_size) {
      std::size_t count = std::min(cfg.batch_size, n_train - from);
      std::vector<double> flat(count * dim);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::size_t src = order[from + i];
        std::copy_n(train_rows.begin() + static_cast<std::ptrdiff_t>(src * dim), dim,
                    flat.begin() + static_cast<std::ptrdiff_t>(i * dim));
        labels[i] = train_labels[src];
      }
      Tensor h = Tensor::from_values({count, dim}, std::move(flat));
      for (std::size_t l = 0; l < widths.size(); ++l) {
        h = add(matmul(h, weights[l]), biases[l]);
        if (l + 1 < widths.size()) h = relu(h);
      }
      Tensor loss = softmax_cross_entropy(h, labels);
      backward(loss);
      for (std::size_t l = 0; l < widths.size(); ++l) {
        sgd_step(weights[l], weights[l].grad(), velocity[2 * l], step);
        sgd_step(biases[l], biases[l].grad(), velocity[2 * l + 1], step);
        weights[l].zero_grad();
        biases[l].zero_grad();
      }
    }
  }

  auto accuracy = [&](const std::vector<double>& flat, const std::vector<int>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t correct = 0;
    const std::size_t chunk = 512;
    for (std::size_t from = 0; from < labels.size(); from += chunk) {
      std::size_t count = std::min(chunk, labels.size() - from);
      Tensor logits = forward_rows(flat, from, count, false);
      for (std::size_t i = 0; i < count; ++i) {
        auto row = logits.values().subspan(i * classes, classes);
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (row[j] > row[best]) best = j;
        correct += best == static_cast<std::size_t>(labels[from + i]);
      }
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
  };

  return {accuracy(train_rows, train_labels), accuracy(test_rows, test_labels)};
}

}  // namespace disp
