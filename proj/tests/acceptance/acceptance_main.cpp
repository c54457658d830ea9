// Acceptance suite: runs every gate end to end and prints one line per
// criterion. Training artifacts are cached under the work directory keyed by
// config hash, so a re-run after an interruption picks up where it stopped
// (delete the work directory to start from scratch).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "disp/attacks.hpp"
#include "disp/dataset.hpp"
#include "disp/errors.hpp"
#include "disp/experiment.hpp"
#include "disp/infotheory.hpp"
#include "disp/model.hpp"
#include "disp/regularizer.hpp"
#include "disp/rng.hpp"
#include "disp/tensor.hpp"
#include "disp/trainer.hpp"
#include "synth_digits.hpp"

namespace fs = std::filesystem;
using namespace disp;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail, double seconds) {
  std::printf("[%s] %s: %s (%.1fs)\n", name.c_str(), pass ? "PASS" : "FAIL", detail.c_str(),
              seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* spec, ...) {
  char buf[1024];
  va_list args;
  va_start(args, spec);
  std::vsnprintf(buf, sizeof(buf), spec, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------------------
// Criterion 1: closed-form analysis

void criterion_closed_form() {
  Timer timer;
  bool pass = true;
  std::string detail;

  pass &= std::fabs(mutual_info_pt(0.1)) < 1e-9;
  pass &= std::fabs(mutual_info_pt(1.0) - 1.0) < 1e-9;

  // Independent oracle: direct entropy of the conditional table.
  double h = 0.0;
  for (int p = 0; p < 10; ++p) {
    double prob = (p == 0) ? 0.99 : 0.01 / 9.0;
    h -= prob * std::log10(prob);
  }
  double derived = 1.0 - h;
  pass &= std::fabs(mutual_info_pt(0.99) - derived) < 1e-3;
  pass &= std::fabs(mutual_info_pt(0.99) - 0.9661) < 1e-3;

  bool sums = true;
  for (double rho : {0.0, 0.25, 0.5, 0.75, 1.0})
    for (double b : {0.0, 0.25, 0.5, 0.75, 1.0})
      sums &= std::fabs(joint_tpz({rho, b}).total() - 1.0) < 1e-12;
  pass &= sums;

  report("criterion 1: closed-form analysis", pass,
         fmt("I(P,T): 0.1->%.2e, 1->%.6f, 0.99->%.6f (oracle %.6f); joint grid sums ok=%d",
             mutual_info_pt(0.1), mutual_info_pt(1.0), mutual_info_pt(0.99), derived,
             static_cast<int>(sums)),
         timer.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient correctness of the full objective

void criterion_gradient() {
  Timer timer;
  ModelConfig cfg;
  cfg.encoder = {{4, 3, 2, 1}, {8, 3, 2, 1}};  // N_Gamma = 8
  cfg.num_targets = 4;
  cfg.in_channels = 3;
  cfg.in_height = 8;
  cfg.in_width = 8;

  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelState state = init_model(cfg, seed + 100);
    CounterRng rng(seed, 55);
    std::vector<double> pixels(4 * 3 * 8 * 8);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = rng.uniform(i);
    Tensor batch = Tensor::from_values({4, 3, 8, 8}, std::move(pixels));
    BatchLabels labels;
    std::vector<int> targets;
    for (std::size_t i = 0; i < 4; ++i) {
      targets.push_back(static_cast<int>(rng.index(7000 + i, cfg.num_targets)));
      labels.target.push_back(targets.back());
      labels.priv.push_back(static_cast<int>(rng.index(8000 + i, 10)));
    }

    // Warm the memory bank, then hold it constant through the check.
    MemoryBank bank(cfg.num_targets, 10, 8, 0.5);
    {
      auto warm = forward(state, batch);
      BatchLabels warm_labels = labels;
      for (auto& t : warm_labels.target) t = (t + 1) % static_cast<int>(cfg.num_targets);
      bank.update(group_means(warm.v_hat, labels));
      bank.update(group_means(warm.v_hat, warm_labels));
    }

    DispWeights weights = DispWeights::single_gamma(0.1);
    for (const auto& [name, _] : state.params) {
      auto f = [&](const Tensor& x) {
        ModelState probe;
        probe.config = state.config;
        probe.seed = state.seed;
        for (const auto& [n2, t2] : state.params)
          probe.params[n2] = n2 == name ? x : t2.detached(false);
        auto out = forward(probe, batch);
        Tensor loss = softmax_cross_entropy(out.logits, targets);
        Tensor rm = r_mem(out.v_hat, labels, bank);
        Tensor rb = r_batch(out.v_hat, labels, cfg.num_targets);
        return objective(loss, disp_total(rm, rb, weights), weights);
      };
      worst = std::max(worst,
                       finite_difference_check(f, state.params.at(name).detached(), 1e-5));
    }
  }
  report("criterion 2: gradient correctness", worst < 1e-4,
         fmt("max relative error %.3e over 20 seeds, all parameters (tolerance 1e-4)", worst),
         timer.seconds());
}

// ---------------------------------------------------------------------------
// Shared training infrastructure for criteria 3-7

struct Lab {
  fs::path work;
  fs::path mnist_dir;
  // Desk-scale recipe shared by every run (criterion 4 scale).
  std::string dataset_json(double rho) const {
    return fmt(R"("dataset": {"mnist_dir": "%s", "rho": %g, "seed": 11,
      "downscale_factor": 2, "subset_size": 14000,
      "fractions": [0.7142857142857143, 0.14285714285714285, 0.14285714285714285]})",
               mnist_dir.string().c_str(), rho);
  }
  std::string config_text(double rho, double gamma_mem, double gamma_batch,
                          const std::string& seeds, const std::string& name) const {
    return fmt(R"({
      "name": "%s",
      %s,
      "optimizer": {"learning_rate": 0.1, "momentum": 0.0, "weight_decay": 1e-4,
                    "batch_size": 100, "epochs": 28},
      "disp": {"gamma_mem": %g, "gamma_batch": %g, "beta": 0.1},
      "seeds": [%s]
    })",
               name.c_str(), dataset_json(rho).c_str(), gamma_mem, gamma_batch, seeds.c_str());
  }

  TrainSummary run(const std::string& config_text) const {
    ExperimentConfig config = ExperimentConfig::from_json_text(config_text);
    auto exp_dir = work / "out" / config.hash();
    if (fs::exists(exp_dir / "summary.json")) return load_train_summary(exp_dir);
    if (!fs::exists(exp_dir / "dataset" / "manifest.json")) cmd_dataset(config, work / "out");
    return cmd_train(config, work / "out", /*resume=*/true);
  }
};

void ensure_corpus(Lab& lab) {
  lab.mnist_dir = lab.work / "mnist";
  auto images = lab.mnist_dir / "train-images-idx3-ubyte";
  if (fs::exists(images)) return;
  Timer timer;
  RawMnistSet set = disp_tools::synth_digit_corpus(60000, 28, 9);
  fs::create_directories(lab.mnist_dir);
  write_idx_images(images, set);
  write_idx_labels(lab.mnist_dir / "train-labels-idx1-ubyte", set);
  std::printf("[setup] synthetic corpus: 60000 images (%.1fs)\n", timer.seconds());
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------

int median_index(std::size_t n) { return static_cast<int>((n - 1) / 2); }

void criteria_training(Lab& lab) {
  // Criterion 4 runs: rho = 0.99, gamma in {0, 0.1}, 5 seeds each.
  Timer t4;
  TrainSummary base = lab.run(lab.config_text(0.99, 0.0, 0.0, "1,2,3,4,5", "rho099-g0"));
  TrainSummary disp_run = lab.run(lab.config_text(0.99, 0.1, 0.1, "1,2,3,4,5", "rho099-g01"));
  double t4_seconds = t4.seconds();

  double acc0 = base.median_test_accuracy(), acc1 = disp_run.median_test_accuracy();
  double r0 = base.median_final_r(), r1 = disp_run.median_final_r();
  bool pass4 = (acc1 >= acc0 + 0.02) && (r1 <= 0.5 * r0);
  report("criterion 4: Table-I direction", pass4,
         fmt("gamma=0: acc %.4f R %.4f | gamma=0.1: acc %.4f R %.4f "
             "(need acc +0.02 and R halved)",
             acc0, r0, acc1, r1),
         t4_seconds);

  // Supplementary Table-I row-1 analog: unbiased data, plain classifier.
  Timer t_base;
  TrainSummary unbiased = lab.run(lab.config_text(0.1, 0.0, 0.0, "1", "rho01-g0"));
  report("supplementary: unbiased baseline accuracy", unbiased.median_test_accuracy() > 0.95,
         fmt("rho=0.1, gamma=0 unbiased test accuracy %.4f (need > 0.95)",
             unbiased.median_test_accuracy()),
         t_base.seconds());

  // Criterion 5: ablation arms at the same scale.
  Timer t5;
  TrainSummary mem_only = lab.run(lab.config_text(0.99, 0.1, 0.0, "1", "rho099-mem"));
  TrainSummary batch_only = lab.run(lab.config_text(0.99, 0.0, 0.1, "1", "rho099-batch"));
  double r_mem_only = mem_only.median_final_r();
  double r_batch_only = batch_only.median_final_r();
  bool pass5 = r_mem_only < r0 && r_batch_only < r0 && r1 < r_mem_only &&
               r1 < r_batch_only && r_batch_only < r_mem_only;
  report("criterion 5: Table-II direction", pass5,
         fmt("R: gamma=0 %.4f | mem-only %.4f | batch-only %.4f | combined %.4f "
             "(need both < gamma=0, combined lowest, batch < mem)",
             r0, r_mem_only, r_batch_only, r1),
         t5.seconds());

  // Criterion 3: every exported feature row unit-norm within 1e-6.
  Timer t3;
  std::size_t rows_checked = 0;
  bool pass3 = true;
  for (const TrainSummary* summary : {&base, &disp_run, &unbiased, &mem_only, &batch_only}) {
    FeatureExport features = load_features_csv(summary->features_csv);
    for (const auto& row : features.rows) {
      double sq = 0.0;
      for (double v : row.v_hat) sq += v * v;
      pass3 &= std::fabs(std::sqrt(sq) - 1.0) <= 1e-6;
      ++rows_checked;
    }
  }
  report("criterion 3: normalization invariant", pass3,
         fmt("%zu exported rows across 5 experiments, all unit-norm within 1e-6",
             rows_checked),
         t3.seconds());

  // Criterion 6: unsupervised attack separation on the median runs.
  Timer t6;
  ExperimentConfig attack_cfg = ExperimentConfig::from_json_text("{}");
  LeakageReport leak0 =
      cmd_attack(attack_cfg, base.features_csv, fs::path(base.experiment_dir) / "attack");
  LeakageReport leak1 = cmd_attack(attack_cfg, disp_run.features_csv,
                                   fs::path(disp_run.experiment_dir) / "attack");
  double u0 = leak0.unsupervised.leakage_accuracy;
  double u1 = leak1.unsupervised.leakage_accuracy;
  bool pass6 = (u0 >= 0.5) && (u1 <= u0 - 0.20);
  report("criterion 6: unsupervised attack separation", pass6,
         fmt("leakage accuracy gamma=0 %.4f (need >= 0.5), gamma=0.1 %.4f "
             "(need a drop >= 0.20); private-majority fraction %.3f -> %.3f",
             u0, u1, leak0.unsupervised.private_majority_fraction,
             leak1.unsupervised.private_majority_fraction),
         t6.seconds());

  // Criterion 7: supervised probe direction (1H) + memorization signature.
  Timer t7;
  auto probe_of = [](const LeakageReport& report, const std::string& name) {
    for (const auto& [probe_name, result] : report.probes)
      if (probe_name == name) return result;
    throw DataError("probe " + name + " missing from report");
  };
  ProbeResult probe0 = probe_of(leak0, "1H");
  ProbeResult probe1 = probe_of(leak1, "1H");
  bool pass7 = (probe1.test_accuracy <= probe0.test_accuracy - 0.10) &&
               (probe1.train_accuracy - probe1.test_accuracy >= 0.10);
  report("criterion 7: supervised probe direction", pass7,
         fmt("1H test: gamma=0 %.4f -> gamma=0.1 %.4f (need -0.10); "
             "gamma=0.1 train %.4f vs test %.4f (need train-test >= 0.10)",
             probe0.test_accuracy, probe1.test_accuracy, probe1.train_accuracy,
             probe1.test_accuracy),
         t7.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 8: property suites

void criterion_properties(Lab& lab) {
  Timer timer;
  std::string detail;
  bool pass = true;

  {  // Dataset chi-square conditional frequency (df 9, alpha 0.01).
    std::vector<std::uint8_t> labels(60000);
    for (std::size_t i = 0; i < labels.size(); ++i)
      labels[i] = static_cast<std::uint8_t>(i % 10);
    bool chi_ok = true;
    for (double rho : {0.1, 0.99}) {
      auto colors = assign_colors(labels, rho, 20260810, 1);
      for (int t = 0; t < 10; ++t) {
        std::array<double, 10> observed{};
        double n = 0;
        for (std::size_t i = 0; i < labels.size(); ++i)
          if (labels[i] == t) {
            observed[static_cast<std::size_t>(colors[i])] += 1;
            n += 1;
          }
        double stat = 0.0;
        for (int p = 0; p < 10; ++p) {
          double e = (p == t) ? rho * n : (1.0 - rho) / 9.0 * n;
          stat += (observed[static_cast<std::size_t>(p)] - e) *
                  (observed[static_cast<std::size_t>(p)] - e) / e;
        }
        chi_ok &= stat < 21.666;
      }
    }
    pass &= chi_ok;
    detail += fmt("chi-square ok=%d; ", static_cast<int>(chi_ok));
  }

  {  // DBSCAN permutation invariance (partition comparison).
    CounterRng rng(3, 21);
    std::vector<double> rows;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 40; ++i) {
        rows.push_back(4.0 * static_cast<double>(c) + rng.uniform(c * 80 + 2 * i, -0.3, 0.3));
        rows.push_back(rng.uniform(c * 80 + 2 * i + 1, -0.3, 0.3));
      }
    auto base = dbscan(rows, 120, 2, 0.5, 5);
    auto perm = shuffled_indices(120, 17, 4);
    std::vector<double> shuffled(rows.size());
    for (std::size_t i = 0; i < 120; ++i) {
      shuffled[2 * i] = rows[2 * perm[i]];
      shuffled[2 * i + 1] = rows[2 * perm[i] + 1];
    }
    auto permuted = dbscan(shuffled, 120, 2, 0.5, 5);
    bool same = true;
    for (std::size_t i = 0; i < 120; ++i)
      for (std::size_t j = i + 1; j < 120; ++j) {
        bool together_base = base.cluster[perm[i]] >= 0 &&
                             base.cluster[perm[i]] == base.cluster[perm[j]];
        bool together_perm = permuted.cluster[i] >= 0 &&
                             permuted.cluster[i] == permuted.cluster[j];
        same &= together_base == together_perm;
      }
    pass &= same;
    detail += fmt("dbscan permutation ok=%d; ", static_cast<int>(same));
  }

  {  // PCA orthonormality + minimal retained energy.
    CounterRng rng(5, 23);
    std::vector<double> rows;
    const std::size_t dim = 10;
    for (std::size_t i = 0; i < 400; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        rows.push_back(rng.uniform(i * dim + j, -1.0, 1.0) * (1.0 + 0.7 * static_cast<double>(j)));
    PcaModel model = pca_fit(rows, 400, dim);
    bool ortho = true;
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j)
          dot += model.directions[a * dim + j] * model.directions[b * dim + j];
        ortho &= std::fabs(dot - (a == b ? 1.0 : 0.0)) < 1e-8;
      }
    double total = 0.0, upto = 0.0;
    for (double ev : model.eigenvalues) total += ev;
    for (std::size_t r = 0; r + 1 < model.retained; ++r) upto += model.eigenvalues[r];
    bool minimal = model.retained_energy >= 0.95 && upto / total < 0.95;
    pass &= ortho && minimal;
    detail += fmt("pca ortho=%d minimal-d=%d; ", static_cast<int>(ortho),
                  static_cast<int>(minimal));
  }

  {  // estimate_b self-consistency: 1e6 draws from (0.99, 0.75).
    EmpiricalCounts counts = sample_counts({0.99, 0.75}, 1000000, 17);
    double b_hat = estimate_b(counts, 0.99);
    bool ok = std::fabs(b_hat - 0.75) <= 0.02;
    pass &= ok;
    detail += fmt("estimate_b %.4f (ok=%d); ", b_hat, static_cast<int>(ok));
  }

  {  // Checkpoint kill-and-resume bitwise equality, through the CLI layer.
    auto read_all = [](const fs::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
    };
    std::string config_text = fmt(R"({
      "name": "resume-check",
      "dataset": {"mnist_dir": "%s", "rho": 0.9, "seed": 4, "downscale_factor": 2,
                  "subset_size": 600, "fractions": [0.7, 0.15, 0.15]},
      "model": {"channels": [6, 12], "kernel": 5, "strides": [1, 2]},
      "optimizer": {"learning_rate": 0.05, "batch_size": 20, "epochs": 3},
      "disp": {"gamma": 0.1},
      "seeds": [2]
    })",
                                  lab.mnist_dir.string().c_str());
    ExperimentConfig config = ExperimentConfig::from_json_text(config_text);
    auto out_full = lab.work / "resume-full";
    auto out_cut = lab.work / "resume-cut";
    fs::remove_all(out_full);
    fs::remove_all(out_cut);
    cmd_dataset(config, out_full);
    cmd_train(config, out_full);
    cmd_dataset(config, out_cut);
    cmd_train(config, out_cut, false, 1);
    cmd_train(config, out_cut, true);
    auto rel = fs::path(config.hash()) / "run-2" / "metrics.csv";
    bool identical = read_all(out_full / rel) == read_all(out_cut / rel);
    auto ckpt = fs::path(config.hash()) / "run-2" / "latest.ckpt";
    identical &= read_all(out_full / ckpt) == read_all(out_cut / ckpt);
    pass &= identical;
    detail += fmt("kill-and-resume bitwise=%d", static_cast<int>(identical));
  }

  report("criterion 8: property suites", pass, detail, timer.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  for (int i = 1; i + 1 < argc; i += 2)
    if (std::strcmp(argv[i], "--work") == 0) work = argv[i + 1];
  fs::create_directories(work);

  Lab lab{work, {}};
  try {
    criterion_closed_form();
    criterion_gradient();
    ensure_corpus(lab);
    criteria_training(lab);
    criterion_properties(lab);
  } catch (const std::exception& e) {
    std::printf("[acceptance] FAIL: unhandled error: %s\n", e.what());
    return 1;
  }

  if (g_failures == 0) {
    std::printf("[acceptance] all criteria PASS\n");
    return 0;
  }
  std::printf("[acceptance] %d criterion(s) FAILED\n", g_failures);
  return 1;
}
