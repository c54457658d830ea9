#include "disp/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "disp/errors.hpp"
#include "disp/infotheory.hpp"

namespace disp {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key '" + key + "' in " + where +
                        " (typos invalidate experiments, so unknown keys are fatal)");
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: key '" + key + "' has the wrong type");
  }
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown_keys(j, {"name", "dataset", "model", "optimizer", "disp", "attack",
                          "analyze", "seeds"},
                      "the top level");
  ExperimentConfig cfg;
  cfg.name = get_or<std::string>(j, "name", "");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown_keys(d,
                        {"mnist_dir", "rho", "seed", "background_threshold",
                         "downscale_factor", "subset_size", "fractions"},
                        "dataset");
    cfg.mnist_dir = get_or<std::string>(d, "mnist_dir", "");
    cfg.bias.rho = get_or<double>(d, "rho", cfg.bias.rho);
    cfg.bias.seed = get_or<std::uint64_t>(d, "seed", cfg.bias.seed);
    cfg.bias.background_threshold =
        get_or<std::uint8_t>(d, "background_threshold", cfg.bias.background_threshold);
    cfg.bias.downscale_factor =
        get_or<std::size_t>(d, "downscale_factor", cfg.bias.downscale_factor);
    cfg.bias.subset_size = get_or<std::size_t>(d, "subset_size", cfg.bias.subset_size);
    if (d.contains("fractions")) {
      auto f = d.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("config: dataset.fractions needs three entries");
      cfg.bias.fractions = {f[0], f[1], f[2]};
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown_keys(
        m, {"channels", "kernel", "strides", "paddings", "classifier_hidden", "num_targets"},
        "model");
    auto channels = get_or<std::vector<std::size_t>>(m, "channels", {16, 32, 64, 64});
    std::size_t kernel = get_or<std::size_t>(m, "kernel", 7);
    auto strides = get_or<std::vector<std::size_t>>(m, "strides", {});
    auto paddings = get_or<std::vector<std::size_t>>(m, "paddings", {});
    cfg.model.encoder.clear();
    for (std::size_t l = 0; l < channels.size(); ++l) {
      ConvSpec spec;
      spec.out_channels = channels[l];
      spec.kernel = kernel;
      spec.stride = l < strides.size() ? strides[l] : (l == 0 ? 1 : 2);
      spec.padding = l < paddings.size() ? paddings[l] : kernel / 2;
      cfg.model.encoder.push_back(spec);
    }
    cfg.model.classifier_hidden =
        get_or<std::vector<std::size_t>>(m, "classifier_hidden", {});
    cfg.model.num_targets = get_or<std::size_t>(m, "num_targets", 10);
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown_keys(o,
                        {"learning_rate", "momentum", "weight_decay", "batch_size", "epochs",
                         "plateau"},
                        "optimizer");
    cfg.optimizer.learning_rate = get_or<double>(o, "learning_rate", 0.1);
    cfg.optimizer.momentum = get_or<double>(o, "momentum", 0.0);
    cfg.optimizer.weight_decay = get_or<double>(o, "weight_decay", 1e-4);
    cfg.optimizer.batch_size = get_or<std::size_t>(o, "batch_size", 100);
    cfg.optimizer.epochs = get_or<std::size_t>(o, "epochs", 50);
    if (o.contains("plateau")) {
      const json& p = o.at("plateau");
      reject_unknown_keys(p, {"enabled", "patience", "decay", "stop_lr"}, "optimizer.plateau");
      cfg.optimizer.plateau_enabled = get_or<bool>(p, "enabled", false);
      cfg.optimizer.plateau_patience = get_or<std::size_t>(p, "patience", 10);
      cfg.optimizer.plateau_decay = get_or<double>(p, "decay", 0.1);
      cfg.optimizer.stop_lr_threshold = get_or<double>(p, "stop_lr", 1e-3);
    }
  }

  if (j.contains("disp")) {
    const json& d = j.at("disp");
    reject_unknown_keys(d, {"gamma", "gamma_mem", "gamma_batch", "eta", "beta"}, "disp");
    if (d.contains("gamma") && (d.contains("gamma_mem") || d.contains("gamma_batch")))
      throw ConfigError("config: give either disp.gamma or the split weights, not both");
    double gamma = get_or<double>(d, "gamma", 0.0);
    cfg.weights.gamma_mem = get_or<double>(d, "gamma_mem", gamma);
    cfg.weights.gamma_batch = get_or<double>(d, "gamma_batch", gamma);
    cfg.weights.eta = get_or<double>(d, "eta", 1.0);
    cfg.beta = get_or<double>(d, "beta", 0.1);
  }

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    reject_unknown_keys(a, {"probe", "dbscan"}, "attack");
    if (a.contains("probe")) {
      const json& p = a.at("probe");
      reject_unknown_keys(
          p, {"learning_rate", "momentum", "weight_decay", "batch_size", "epochs", "seed"},
          "attack.probe");
      cfg.probe.learning_rate = get_or<double>(p, "learning_rate", 0.1);
      cfg.probe.momentum = get_or<double>(p, "momentum", 0.9);
      cfg.probe.weight_decay = get_or<double>(p, "weight_decay", 0.0);
      cfg.probe.batch_size = get_or<std::size_t>(p, "batch_size", 100);
      cfg.probe.epochs = get_or<std::size_t>(p, "epochs", 50);
      cfg.probe.seed = get_or<std::uint64_t>(p, "seed", 0);
    }
    if (a.contains("dbscan")) {
      const json& d = a.at("dbscan");
      reject_unknown_keys(d, {"eps", "min_pts"}, "attack.dbscan");
      cfg.dbscan_eps = get_or<double>(d, "eps", 0.0);
      cfg.dbscan_min_pts = get_or<std::size_t>(d, "min_pts", 0);
    }
  }

  if (j.contains("analyze")) {
    const json& a = j.at("analyze");
    reject_unknown_keys(a, {"ablation_runs"}, "analyze");
    cfg.ablation_runs = get_or<std::vector<std::string>>(a, "ablation_runs", {});
  }

  if (j.contains("seeds")) {
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json model;
  std::vector<std::size_t> channels, strides, paddings;
  for (const auto& spec : cfg.model.encoder) {
    channels.push_back(spec.out_channels);
    strides.push_back(spec.stride);
    paddings.push_back(spec.padding);
  }
  model["channels"] = channels;
  model["kernel"] = cfg.model.encoder.empty() ? 7 : cfg.model.encoder[0].kernel;
  model["strides"] = strides;
  model["paddings"] = paddings;
  model["classifier_hidden"] = cfg.model.classifier_hidden;
  model["num_targets"] = cfg.model.num_targets;

  return json{
      {"name", cfg.name},
      {"dataset",
       {{"mnist_dir", cfg.mnist_dir},
        {"rho", cfg.bias.rho},
        {"seed", cfg.bias.seed},
        {"background_threshold", cfg.bias.background_threshold},
        {"downscale_factor", cfg.bias.downscale_factor},
        {"subset_size", cfg.bias.subset_size},
        {"fractions", {cfg.bias.fractions[0], cfg.bias.fractions[1], cfg.bias.fractions[2]}}}},
      {"model", model},
      {"optimizer",
       {{"learning_rate", cfg.optimizer.learning_rate},
        {"momentum", cfg.optimizer.momentum},
        {"weight_decay", cfg.optimizer.weight_decay},
        {"batch_size", cfg.optimizer.batch_size},
        {"epochs", cfg.optimizer.epochs},
        {"plateau",
         {{"enabled", cfg.optimizer.plateau_enabled},
          {"patience", cfg.optimizer.plateau_patience},
          {"decay", cfg.optimizer.plateau_decay},
          {"stop_lr", cfg.optimizer.stop_lr_threshold}}}}},
      {"disp",
       {{"gamma_mem", cfg.weights.gamma_mem},
        {"gamma_batch", cfg.weights.gamma_batch},
        {"eta", cfg.weights.eta},
        {"beta", cfg.beta}}},
      {"attack",
       {{"probe",
         {{"learning_rate", cfg.probe.learning_rate},
          {"momentum", cfg.probe.momentum},
          {"weight_decay", cfg.probe.weight_decay},
          {"batch_size", cfg.probe.batch_size},
          {"epochs", cfg.probe.epochs},
          {"seed", cfg.probe.seed}}},
        {"dbscan", {{"eps", cfg.dbscan_eps}, {"min_pts", cfg.dbscan_min_pts}}}}},
      {"analyze", {{"ablation_runs", cfg.ablation_runs}}},
      {"seeds", cfg.seeds}};
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::filesystem::path experiment_dir(const ExperimentConfig& cfg,
                                     const std::filesystem::path& out) {
  return out / cfg.hash();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

json read_json_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream is(path);
  if (!is) throw DataError("missing " + what + ": " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(what + " " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  return config_from_json(parse_json_text(text));
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string ExperimentConfig::canonical_json() const { return config_to_json(*this).dump(); }

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_json())));
  return buf;
}

void ExperimentConfig::validate() const {
  bias.validate();
  model.validate();
  optimizer.validate();
  probe.validate();
  if (beta <= 0.0 || beta > 1.0) throw ConfigError("config: disp.beta must be in (0, 1]");
  if (weights.gamma_mem < 0.0 || weights.gamma_batch < 0.0 || weights.eta < 0.0)
    throw ConfigError("config: disp weights must be non-negative");
  if (dbscan_eps < 0.0) throw ConfigError("config: attack.dbscan.eps must be non-negative");
}

// ---------------------------------------------------------------------------
// dataset

std::filesystem::path cmd_dataset(const ExperimentConfig& config,
                                  const std::filesystem::path& out) {
  if (config.mnist_dir.empty())
    throw ConfigError(
        "config: dataset.mnist_dir is required (directory with "
        "train-images-idx3-ubyte / train-labels-idx1-ubyte, raw or .gz)");
  RawMnistSet raw = load_mnist(config.mnist_dir, "train");
  BiasedDataset ds = build_biased_dataset(raw, config.bias, Palette::standard());
  auto dir = experiment_dir(config, out) / "dataset";
  save_dataset(ds, raw, dir);
  return dir;
}

// ---------------------------------------------------------------------------
// train

namespace {

json summary_to_json(const TrainSummary& s) {
  json runs = json::array();
  for (const auto& r : s.runs)
    runs.push_back({{"seed", r.seed},
                    {"best_epoch", r.best_epoch},
                    {"test_accuracy", r.test_accuracy},
                    {"final_r_mem", r.final_r_mem},
                    {"final_r_batch", r.final_r_batch},
                    {"final_r", r.final_r},
                    {"b_hat", r.b_hat},
                    {"run_dir", r.run_dir}});
  return json{{"config_hash", s.config_hash},       {"experiment_dir", s.experiment_dir},
              {"rho", s.rho},                       {"gamma_mem", s.gamma_mem},
              {"gamma_batch", s.gamma_batch},       {"runs", runs},
              {"median_seed", s.median_seed},       {"features_csv", s.features_csv}};
}

TrainSummary summary_from_json(const json& j) {
  TrainSummary s;
  s.config_hash = j.at("config_hash").get<std::string>();
  s.experiment_dir = j.at("experiment_dir").get<std::string>();
  s.rho = j.at("rho").get<double>();
  s.gamma_mem = j.at("gamma_mem").get<double>();
  s.gamma_batch = j.at("gamma_batch").get<double>();
  for (const auto& r : j.at("runs")) {
    RunSummaryEntry e;
    e.seed = r.at("seed").get<std::uint64_t>();
    e.best_epoch = r.at("best_epoch").get<std::size_t>();
    e.test_accuracy = r.at("test_accuracy").get<double>();
    e.final_r_mem = r.at("final_r_mem").get<double>();
    e.final_r_batch = r.at("final_r_batch").get<double>();
    e.final_r = r.at("final_r").get<double>();
    e.b_hat = r.at("b_hat").get<double>();
    e.run_dir = r.at("run_dir").get<std::string>();
    s.runs.push_back(e);
  }
  s.median_seed = j.at("median_seed").get<std::uint64_t>();
  s.features_csv = j.at("features_csv").get<std::string>();
  return s;
}

}  // namespace

const RunSummaryEntry& TrainSummary::median_run() const {
  for (const auto& r : runs)
    if (r.seed == median_seed) return r;
  throw DataError("summary: median run missing");
}

double TrainSummary::median_test_accuracy() const { return median_run().test_accuracy; }
double TrainSummary::median_final_r() const { return median_run().final_r; }

TrainSummary cmd_train(const ExperimentConfig& config, const std::filesystem::path& out,
                       bool resume, std::size_t stop_after_epochs) {
  auto exp_dir = experiment_dir(config, out);
  auto dataset_dir = exp_dir / "dataset";
  if (!std::filesystem::exists(dataset_dir / "manifest.json"))
    throw DataError("train: dataset not built yet; run the dataset command first (expected " +
                    (dataset_dir / "manifest.json").string() + ")");
  BiasedDataset data = load_dataset(dataset_dir);

  TrainSummary summary;
  summary.config_hash = config.hash();
  summary.experiment_dir = exp_dir.string();
  summary.rho = config.bias.rho;
  summary.gamma_mem = config.weights.gamma_mem;
  summary.gamma_batch = config.weights.gamma_batch;

  ModelConfig model_cfg = config.model;
  model_cfg.in_channels = 3;
  model_cfg.in_height = data.height;
  model_cfg.in_width = data.width;

  auto val_view = data.split_view(SplitTag::validation);
  auto test_view = data.split_view(SplitTag::test);

  std::vector<std::pair<double, std::uint64_t>> by_accuracy;
  std::vector<TrainResult> results;
  for (std::uint64_t seed : config.seeds) {
    auto run_dir = exp_dir / ("run-" + std::to_string(seed));
    TrainOptions options;
    options.checkpoint_dir = run_dir;
    options.resume = resume;
    options.stop_after_epochs = stop_after_epochs;
    options.run_id = config.hash() + "/run-" + std::to_string(seed);

    TrainResult result =
        train(model_cfg, data, config.optimizer, config.weights, config.beta, seed, options);
    result.log.save_csv(run_dir / "metrics.csv");

    RunSummaryEntry entry;
    entry.seed = seed;
    entry.best_epoch = result.best_epoch;
    entry.test_accuracy = dataset_accuracy(result.best_state, test_view,
                                           config.optimizer.batch_size);
    if (!result.log.rows.empty()) {
      entry.final_r_mem = result.log.rows.back().r_mem;
      entry.final_r_batch = result.log.rows.back().r_batch;
      entry.final_r = result.log.rows.back().r_total;
    }
    entry.b_hat = estimate_b(
        prediction_counts(result.best_state, val_view, config.optimizer.batch_size),
        config.bias.rho);
    entry.run_dir = run_dir.string();
    summary.runs.push_back(entry);
    by_accuracy.emplace_back(entry.test_accuracy, seed);
    results.push_back(std::move(result));
  }

  // Attacks run against the run with the median unbiased-test accuracy
  // (lower median for even counts).
  std::stable_sort(by_accuracy.begin(), by_accuracy.end());
  summary.median_seed = by_accuracy[(by_accuracy.size() - 1) / 2].second;

  for (std::size_t i = 0; i < results.size(); ++i) {
    if (config.seeds[i] != summary.median_seed) continue;
    const auto& entry = summary.runs[i];
    FeatureExport features = export_features(
        results[i].best_state, data, {SplitTag::train, SplitTag::test},
        config.hash() + "/run-" + std::to_string(entry.seed) + "@best-epoch-" +
            std::to_string(entry.best_epoch));
    auto features_path = exp_dir / "features.csv";
    save_features_csv(features, features_path);
    summary.features_csv = features_path.string();
  }

  write_text(exp_dir / "summary.json", summary_to_json(summary).dump(2) + "\n");
  return summary;
}

TrainSummary load_train_summary(const std::filesystem::path& exp_dir) {
  return summary_from_json(read_json_file(exp_dir / "summary.json", "training summary"));
}

// ---------------------------------------------------------------------------
// attack

namespace {

json leakage_to_json(const LeakageReport& report) {
  json probes = json::object();
  for (const auto& [name, result] : report.probes)
    probes[name] = {{"train_accuracy", result.train_accuracy},
                    {"test_accuracy", result.test_accuracy}};
  return json{{"unsupervised",
               {{"leakage_accuracy", report.unsupervised.leakage_accuracy},
                {"private_majority_cluster_fraction",
                 report.unsupervised.private_majority_fraction},
                {"cluster_count", report.unsupervised.cluster_count},
                {"noise_fraction", report.unsupervised.noise_fraction},
                {"degenerate", report.unsupervised.degenerate}}},
              {"pca_retained", report.pca_retained},
              {"dbscan", {{"eps", report.dbscan_eps}, {"min_pts", report.dbscan_min_pts}}},
              {"probes", probes}};
}

}  // namespace

LeakageReport cmd_attack(const ExperimentConfig& config,
                         const std::filesystem::path& features_csv,
                         const std::filesystem::path& out_dir) {
  FeatureExport features = load_features_csv(features_csv);
  if (features.rows.empty()) throw DataError("attack: feature export is empty");

  const std::size_t dim = features.n_gamma;
  std::vector<double> all_rows;
  std::vector<int> all_private, all_target;
  std::vector<double> train_rows, test_rows;
  std::vector<int> train_labels, test_labels;
  for (const auto& row : features.rows) {
    all_rows.insert(all_rows.end(), row.v_hat.begin(), row.v_hat.end());
    all_private.push_back(row.priv);
    all_target.push_back(row.target);
    if (row.split == SplitTag::test) {
      test_rows.insert(test_rows.end(), row.v_hat.begin(), row.v_hat.end());
      test_labels.push_back(row.priv);
    } else {
      train_rows.insert(train_rows.end(), row.v_hat.begin(), row.v_hat.end());
      train_labels.push_back(row.priv);
    }
  }
  if (train_labels.empty() || test_labels.empty())
    throw DataError("attack: the export must hold both train and test rows");
  const std::size_t count = features.rows.size();

  LeakageReport report;
  PcaModel pca = pca_fit(all_rows, count, dim);
  report.pca_retained = pca.retained;
  std::vector<double> projected = pca.project(all_rows, count);

  double eps = config.dbscan_eps;
  std::size_t min_pts = config.dbscan_min_pts;
  if (eps <= 0.0 || min_pts == 0) {
    auto chosen = choose_dbscan_params(projected, count, pca.retained);
    if (eps <= 0.0) eps = chosen.first;
    if (min_pts == 0) min_pts = chosen.second;
  }
  ClusterAssignment assignment = dbscan(projected, count, pca.retained, eps, min_pts);
  report.dbscan_eps = eps;
  report.dbscan_min_pts = min_pts;
  report.unsupervised = unsupervised_leakage(assignment, all_private);

  for (std::vector<std::size_t> layout : {std::vector<std::size_t>{300},
                                          std::vector<std::size_t>{600, 300}}) {
    ProbeConfig probe = config.probe;
    probe.hidden = layout;
    report.probes.emplace_back(
        probe.layout_name(),
        supervised_probe(train_rows, train_labels, test_rows, test_labels, dim, probe));
  }

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "leakage_report.json", leakage_to_json(report).dump(2) + "\n");

  // Fig.-7-style scatter: first two principal components with cluster and
  // both label families.
  std::vector<double> scatter = pca.project(all_rows, count, 2);
  std::ofstream os(out_dir / "scatter.csv", std::ios::trunc);
  if (!os) throw DataError("attack: cannot write scatter.csv");
  os << "pc1,pc2,cluster,t,p\n";
  char buf[128];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%d,%d,%d\n", scatter[2 * i],
                  scatter[2 * i + 1], assignment.cluster[i], all_target[i], all_private[i]);
    os << buf;
  }
  return report;
}

LeakageReport load_leakage_report(const std::filesystem::path& path) {
  json j = read_json_file(path, "leakage report");
  LeakageReport report;
  const json& u = j.at("unsupervised");
  report.unsupervised.leakage_accuracy = u.at("leakage_accuracy").get<double>();
  report.unsupervised.private_majority_fraction =
      u.at("private_majority_cluster_fraction").get<double>();
  report.unsupervised.cluster_count = u.at("cluster_count").get<std::size_t>();
  report.unsupervised.noise_fraction = u.at("noise_fraction").get<double>();
  report.unsupervised.degenerate = u.at("degenerate").get<bool>();
  report.pca_retained = j.at("pca_retained").get<std::size_t>();
  report.dbscan_eps = j.at("dbscan").at("eps").get<double>();
  report.dbscan_min_pts = j.at("dbscan").at("min_pts").get<std::size_t>();
  for (const auto& [name, p] : j.at("probes").items())
    report.probes.emplace_back(name, ProbeResult{p.at("train_accuracy").get<double>(),
                                                 p.at("test_accuracy").get<double>()});
  return report;
}

// ---------------------------------------------------------------------------
// analyze

void cmd_analyze(const ExperimentConfig& config, const std::filesystem::path& out) {
  auto dir = experiment_dir(config, out) / "analysis";
  std::filesystem::create_directories(dir);
  char buf[160];

  {
    std::ofstream os(dir / "mi_pt.csv", std::ios::trunc);
    if (!os) throw DataError("analyze: cannot write mi_pt.csv");
    os << "rho,mi_pt\n";
    for (int i = 0; i <= 100; ++i) {
      double rho = i / 100.0;
      std::snprintf(buf, sizeof(buf), "%.2f,%.10g\n", rho, mutual_info_pt(rho));
      os << buf;
    }
  }
  {
    std::ofstream os(dir / "mi_pz.csv", std::ios::trunc);
    if (!os) throw DataError("analyze: cannot write mi_pz.csv");
    os << "rho,b,mi_pz,printed_marginal_gap\n";
    for (int i = 0; i <= 100; i += 2)
      for (int bi = 0; bi <= 10; ++bi) {
        LeakageModelParams params{i / 100.0, bi / 10.0};
        std::snprintf(buf, sizeof(buf), "%.2f,%.1f,%.10g,%.10g\n", params.rho, params.b,
                      mutual_info_pz(params), printed_marginal_pz_gap(params));
        os << buf;
      }
  }

  if (!config.ablation_runs.empty()) {
    std::vector<std::string> missing;
    for (const auto& run : config.ablation_runs)
      if (!std::filesystem::exists(std::filesystem::path(run) / "summary.json"))
        missing.push_back(run);
    if (!missing.empty()) {
      std::string what = "analyze: ablation needs trained runs; train these first:";
      for (const auto& m : missing) what += "\n  " + m;
      throw DataError(what);
    }
    std::ofstream os(dir / "ablation.csv", std::ios::trunc);
    if (!os) throw DataError("analyze: cannot write ablation.csv");
    os << "gamma_mem,gamma_batch,r_mem,r_batch,R,accuracy\n";
    for (const auto& run : config.ablation_runs) {
      TrainSummary s = load_train_summary(run);
      const auto& median = s.median_run();
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", s.gamma_mem,
                    s.gamma_batch, median.final_r_mem, median.final_r_batch, median.final_r,
                    median.test_accuracy);
      os << buf;
    }
  }
}

// ---------------------------------------------------------------------------
// report

std::filesystem::path cmd_report(const ExperimentConfig& config,
                                 const std::filesystem::path& out) {
  auto exp_dir = experiment_dir(config, out);
  TrainSummary summary = load_train_summary(exp_dir);

  std::vector<std::string> artifacts = {
      (exp_dir / "summary.json").string(),
      (exp_dir / "dataset" / "manifest.json").string(),
  };
  if (!summary.features_csv.empty()) artifacts.push_back(summary.features_csv);
  for (const auto& run : summary.runs) {
    artifacts.push_back((std::filesystem::path(run.run_dir) / "metrics.csv").string());
    artifacts.push_back((std::filesystem::path(run.run_dir) / "best.ckpt").string());
  }

  json leakage;
  auto leakage_path = exp_dir / "attack" / "leakage_report.json";
  if (std::filesystem::exists(leakage_path)) {
    leakage = read_json_file(leakage_path, "leakage report");
    artifacts.push_back(leakage_path.string());
  }

  for (const auto& artifact : artifacts)
    if (!std::filesystem::exists(artifact))
      throw DataError("report: referenced artifact is missing: " + artifact);

  const auto& median = summary.median_run();
  json info = {{"mi_pt_at_rho", mutual_info_pt(config.bias.rho)},
               {"mi_pz_at_rho_bhat", mutual_info_pz({config.bias.rho, median.b_hat})},
               {"printed_marginal_gap",
                printed_marginal_pz_gap({config.bias.rho, median.b_hat})},
               {"median_b_hat", median.b_hat}};

  json report = {{"config_hash", summary.config_hash},
                 {"name", config.name},
                 {"summary", summary_to_json(summary)},
                 {"leakage", leakage},
                 {"infotheory", info},
                 {"artifacts", artifacts}};
  auto path = exp_dir / "report.json";
  write_text(path, report.dump(2) + "\n");
  return path;
}

}  // namespace disp
