#include "disp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "disp/checkpoint.hpp"
#include "disp/errors.hpp"
#include "disp/rng.hpp"

namespace disp {

namespace {

constexpr std::uint64_t kShuffleBase = 0x53485546;  // "SHUF"
constexpr std::size_t kNumPrivate = 10;

void OptimizerConfigValidate(const OptimizerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (cfg.batch_size < 2) throw ConfigError("optimizer: batch size must be at least 2");
  if (cfg.epochs == 0) throw ConfigError("optimizer: epochs must be positive");
  if (cfg.momentum < 0.0 || cfg.weight_decay < 0.0)
    throw ConfigError("optimizer: momentum and weight decay must be non-negative");
}

struct Batch {
  Tensor images;
  std::vector<int> targets;
  BatchLabels labels;
  std::size_t size = 0;
};

Batch make_batch(const std::vector<const SampleRecord*>& view,
                 const std::vector<std::size_t>& order, std::size_t from, std::size_t count,
                 std::size_t num_targets) {
  Batch batch;
  const SampleRecord& first = *view[order.empty() ? from : order[from]];
  std::size_t pixels = 3 * first.height * first.width;
  std::vector<double> flat;
  flat.reserve(count * pixels);
  for (std::size_t i = from; i < from + count; ++i) {
    const SampleRecord& rec = *view[order.empty() ? i : order[i]];
    if (rec.target < 0 || static_cast<std::size_t>(rec.target) >= num_targets) continue;
    flat.insert(flat.end(), rec.image.begin(), rec.image.end());
    batch.targets.push_back(rec.target);
    batch.labels.target.push_back(rec.target);
    batch.labels.priv.push_back(rec.priv);
  }
  batch.size = batch.targets.size();
  if (batch.size > 0)
    batch.images = Tensor::from_values({batch.size, 3, first.height, first.width},
                                       std::move(flat));
  return batch;
}

ModelState clone_state(const ModelState& state, bool requires_grad) {
  ModelState out;
  out.config = state.config;
  out.seed = state.seed;
  for (const auto& [name, t] : state.params) out.params[name] = t.detached(requires_grad);
  return out;
}

ModelState detached_view(const ModelState& state) { return clone_state(state, false); }

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

void OptimizerConfig::validate() const { OptimizerConfigValidate(*this); }

void sgd_step(Tensor& param, std::span<const double> grad, std::vector<double>& velocity,
              const OptimizerConfig& cfg) {
  auto theta = param.values_mut();
  if (grad.size() != theta.size()) throw NumericError("sgd: gradient size mismatch");
  if (velocity.size() != theta.size()) velocity.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("sgd: non-finite gradient");
    double g = grad[i] + cfg.weight_decay * theta[i];
    velocity[i] = cfg.momentum * velocity[i] + g;
    theta[i] -= cfg.learning_rate * velocity[i];
  }
}

// ---------------------------------------------------------------------------
// Metrics CSV

void MetricsLog::save_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("metrics: cannot write " + path.string());
  os << "epoch,L,r_mem,r_batch,R,acc_train,loss_val,acc_test_unbiased,lr\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf),
                  "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.loss,
                  r.r_mem, r.r_batch, r.r_total, r.acc_train, r.loss_val,
                  r.acc_test_unbiased, r.lr);
    os << buf;
  }
}

MetricsLog MetricsLog::load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("metrics: cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  MetricsLog log;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%zu,%lg,%lg,%lg,%lg,%lg,%lg,%lg,%lg", &r.epoch, &r.loss,
                    &r.r_mem, &r.r_batch, &r.r_total, &r.acc_train, &r.loss_val,
                    &r.acc_test_unbiased, &r.lr) != 9)
      throw DataError("metrics: malformed row in " + path.string());
    log.rows.push_back(r);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation

double dataset_loss(const ModelState& state, const std::vector<const SampleRecord*>& view,
                    std::size_t batch_size) {
  ModelState eval = detached_view(state);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t from = 0; from < view.size(); from += batch_size) {
    std::size_t count = std::min(batch_size, view.size() - from);
    Batch batch = make_batch(view, {}, from, count, state.config.num_targets);
    if (batch.size == 0) continue;
    auto out = forward(eval, batch.images);
    total += softmax_cross_entropy(out.logits, batch.targets).item() *
             static_cast<double>(batch.size);
    n += batch.size;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

double dataset_accuracy(const ModelState& state, const std::vector<const SampleRecord*>& view,
                        std::size_t batch_size) {
  ModelState eval = detached_view(state);
  std::size_t correct = 0, n = 0;
  std::size_t c = state.config.num_targets;
  for (std::size_t from = 0; from < view.size(); from += batch_size) {
    std::size_t count = std::min(batch_size, view.size() - from);
    Batch batch = make_batch(view, {}, from, count, c);
    if (batch.size == 0) continue;
    auto out = forward(eval, batch.images);
    for (std::size_t i = 0; i < batch.size; ++i) {
      auto row = out.logits.values().subspan(i * c, c);
      correct += argmax_row(row) == static_cast<std::size_t>(batch.targets[i]);
    }
    n += batch.size;
  }
  return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
}

EmpiricalCounts prediction_counts(const ModelState& state,
                                  const std::vector<const SampleRecord*>& view,
                                  std::size_t batch_size) {
  ModelState eval = detached_view(state);
  EmpiricalCounts counts;
  std::size_t c = state.config.num_targets;
  for (std::size_t from = 0; from < view.size(); from += batch_size) {
    std::size_t count = std::min(batch_size, view.size() - from);
    Batch batch = make_batch(view, {}, from, count, c);
    if (batch.size == 0) continue;
    auto out = forward(eval, batch.images);
    for (std::size_t i = 0; i < batch.size; ++i) {
      auto z = argmax_row(out.logits.values().subspan(i * c, c));
      counts.at(static_cast<std::size_t>(batch.targets[i]),
                static_cast<std::size_t>(batch.labels.priv[i]), z)++;
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Checkpointing

void save_training_checkpoint(const std::filesystem::path& path, const ModelState& state,
                              const MemoryBank& bank,
                              const std::map<std::string, std::vector<double>>& velocity,
                              const MetricsLog& log, std::size_t completed_epochs,
                              double best_val_loss, std::size_t best_epoch, double current_lr,
                              std::size_t epochs_since_improvement, const std::string& run_id) {
  Checkpoint ckpt;
  std::vector<std::int64_t> encoder;
  for (const auto& spec : state.config.encoder) {
    encoder.push_back(static_cast<std::int64_t>(spec.out_channels));
    encoder.push_back(static_cast<std::int64_t>(spec.kernel));
    encoder.push_back(static_cast<std::int64_t>(spec.stride));
    encoder.push_back(static_cast<std::int64_t>(spec.padding));
  }
  ckpt.put_i64("config/encoder", std::move(encoder));
  std::vector<std::int64_t> hidden(state.config.classifier_hidden.begin(),
                                   state.config.classifier_hidden.end());
  ckpt.put_i64("config/classifier_hidden", std::move(hidden));
  ckpt.put_i64("config/meta",
               {static_cast<std::int64_t>(state.config.num_targets),
                static_cast<std::int64_t>(state.config.in_channels),
                static_cast<std::int64_t>(state.config.in_height),
                static_cast<std::int64_t>(state.config.in_width)});
  ckpt.put_i64("seed", {static_cast<std::int64_t>(state.seed)});
  ckpt.put_string("run_id", run_id);

  for (const auto& [name, t] : state.params) {
    std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
    ckpt.put_f64("param/" + name, std::move(shape),
                 std::vector<double>(t.values().begin(), t.values().end()));
  }
  for (const auto& [name, v] : velocity)
    ckpt.put_f64("velocity/" + name, {v.size()}, v);

  ckpt.put_f64("bank/values",
               {bank.num_targets(), bank.num_private(), bank.width()}, bank.raw());
  ckpt.put_u8("bank/mask", bank.raw_mask());
  ckpt.put_scalar("bank/beta", bank.beta());
  ckpt.put_i64("bank/steps", {static_cast<std::int64_t>(bank.step_count())});

  ckpt.put_i64("trainer/counters",
               {static_cast<std::int64_t>(completed_epochs),
                static_cast<std::int64_t>(best_epoch),
                static_cast<std::int64_t>(epochs_since_improvement)});
  ckpt.put_f64("trainer/scalars", {2}, {best_val_loss, current_lr});

  std::vector<double> metrics;
  for (const auto& r : log.rows) {
    metrics.insert(metrics.end(),
                   {static_cast<double>(r.epoch), r.loss, r.r_mem, r.r_batch, r.r_total,
                    r.acc_train, r.loss_val, r.acc_test_unbiased, r.lr});
  }
  ckpt.put_f64("metrics", {log.rows.size(), 9}, std::move(metrics));
  ckpt.save(path);
}

LoadedCheckpoint load_training_checkpoint(const std::filesystem::path& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  LoadedCheckpoint out;

  const auto& encoder = ckpt.i64("config/encoder");
  for (std::size_t i = 0; i + 3 < encoder.size(); i += 4)
    out.state.config.encoder.push_back({static_cast<std::size_t>(encoder[i]),
                                        static_cast<std::size_t>(encoder[i + 1]),
                                        static_cast<std::size_t>(encoder[i + 2]),
                                        static_cast<std::size_t>(encoder[i + 3])});
  for (auto w : ckpt.i64("config/classifier_hidden"))
    out.state.config.classifier_hidden.push_back(static_cast<std::size_t>(w));
  const auto& meta = ckpt.i64("config/meta");
  out.state.config.num_targets = static_cast<std::size_t>(meta[0]);
  out.state.config.in_channels = static_cast<std::size_t>(meta[1]);
  out.state.config.in_height = static_cast<std::size_t>(meta[2]);
  out.state.config.in_width = static_cast<std::size_t>(meta[3]);
  out.state.seed = static_cast<std::uint64_t>(ckpt.i64("seed")[0]);
  out.run_id = ckpt.string("run_id");

  for (const auto& name : ckpt.names()) {
    if (name.starts_with("param/")) {
      const auto& section = ckpt.get(name);
      Shape shape(section.shape.begin(), section.shape.end());
      out.state.params[name.substr(6)] =
          Tensor::from_values(std::move(shape), section.f64, true);
    } else if (name.starts_with("velocity/")) {
      out.velocity[name.substr(9)] = ckpt.f64(name);
    }
  }

  const auto& bank_shape = ckpt.get("bank/values").shape;
  out.bank = MemoryBank(bank_shape[0], bank_shape[1], bank_shape[2], ckpt.scalar("bank/beta"));
  std::vector<std::uint8_t> mask = ckpt.get("bank/mask").u8;
  out.bank.restore(ckpt.f64("bank/values"), std::move(mask),
                   static_cast<std::uint64_t>(ckpt.i64("bank/steps")[0]));

  const auto& counters = ckpt.i64("trainer/counters");
  out.completed_epochs = static_cast<std::size_t>(counters[0]);
  out.best_epoch = static_cast<std::size_t>(counters[1]);
  out.epochs_since_improvement = static_cast<std::size_t>(counters[2]);
  const auto& scalars = ckpt.f64("trainer/scalars");
  out.best_val_loss = scalars[0];
  out.current_lr = scalars[1];

  const auto& metrics = ckpt.f64("metrics");
  for (std::size_t i = 0; i + 8 < metrics.size(); i += 9) {
    MetricsRow r;
    r.epoch = static_cast<std::size_t>(metrics[i]);
    r.loss = metrics[i + 1];
    r.r_mem = metrics[i + 2];
    r.r_batch = metrics[i + 3];
    r.r_total = metrics[i + 4];
    r.acc_train = metrics[i + 5];
    r.loss_val = metrics[i + 6];
    r.acc_test_unbiased = metrics[i + 7];
    r.lr = metrics[i + 8];
    out.log.rows.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const ModelConfig& model_cfg, const BiasedDataset& data,
                  const OptimizerConfig& opt, const DispWeights& weights, double beta,
                  std::uint64_t seed, const TrainOptions& options) {
  opt.validate();
  model_cfg.validate();
  if (weights.gamma_mem < 0 || weights.gamma_batch < 0 || weights.eta < 0)
    throw ConfigError("trainer: DisP weights must be non-negative");

  auto train_view = data.split_view(SplitTag::train);
  auto val_view = data.split_view(SplitTag::validation);
  auto test_view = data.split_view(SplitTag::test);
  if (train_view.empty()) throw DataError("trainer: empty training split");

  const std::size_t c = model_cfg.num_targets;
  const bool in_graph = weights.gamma_mem > 0.0 || weights.gamma_batch > 0.0;

  TrainResult result;
  std::map<std::string, std::vector<double>> velocity;
  std::size_t start_epoch = 0, best_epoch = 0, since_improve = 0;
  double best_val = std::numeric_limits<double>::infinity();
  double lr = opt.learning_rate;

  std::filesystem::path latest, best_path;
  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    latest = *options.checkpoint_dir / "latest.ckpt";
    best_path = *options.checkpoint_dir / "best.ckpt";
  }

  if (options.resume && options.checkpoint_dir && std::filesystem::exists(latest)) {
    LoadedCheckpoint loaded = load_training_checkpoint(latest);
    result.state = std::move(loaded.state);
    result.bank = std::move(loaded.bank);
    velocity = std::move(loaded.velocity);
    result.log = std::move(loaded.log);
    start_epoch = loaded.completed_epochs;
    best_epoch = loaded.best_epoch;
    best_val = loaded.best_val_loss;
    lr = loaded.current_lr;
    since_improve = loaded.epochs_since_improvement;
    if (std::filesystem::exists(best_path))
      result.best_state = load_training_checkpoint(best_path).state;
    else
      result.best_state = clone_state(result.state, true);
  } else {
    result.state = init_model(model_cfg, seed);
    result.bank = MemoryBank(c, kNumPrivate, model_cfg.bottleneck_width(), beta);
    result.best_state = clone_state(result.state, true);
  }

  for (std::size_t epoch = start_epoch; epoch < opt.epochs; ++epoch) {
    auto order = shuffled_indices(train_view.size(), seed, kShuffleBase + epoch);
    double loss_sum = 0.0, rm_sum = 0.0, rb_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    OptimizerConfig step_cfg = opt;
    step_cfg.learning_rate = lr;

    for (std::size_t from = 0; from < order.size(); from += opt.batch_size) {
      std::size_t count = std::min(opt.batch_size, order.size() - from);
      Batch batch = make_batch(train_view, order, from, count, c);
      if (batch.size == 0) {
        std::fprintf(stderr, "warning: epoch %zu: batch at %zu has no valid target, skipped\n",
                     epoch + 1, from);
        continue;
      }

      auto out = forward(result.state, batch.images);
      Tensor loss = softmax_cross_entropy(out.logits, batch.targets);
      result.bank.update(group_means(out.v_hat, batch.labels));

      double rm_val = 0.0, rb_val = 0.0;
      Tensor j;
      if (in_graph) {
        Tensor rm = r_mem(out.v_hat, batch.labels, result.bank);
        Tensor rb = r_batch(out.v_hat, batch.labels, c);
        rm_val = rm.item();
        rb_val = rb.item();
        j = objective(loss, disp_total(rm, rb, weights), weights);
      } else {
        if (options.measure_disp) {
          Tensor vh = out.v_hat.detached();
          rm_val = r_mem(vh, batch.labels, result.bank).item();
          rb_val = r_batch(vh, batch.labels, c).item();
        }
        j = scale(loss, weights.eta);
      }
      if (!std::isfinite(j.item()))
        throw NumericError("trainer: non-finite objective at epoch " + std::to_string(epoch + 1));

      backward(j);
      try {
        for (auto& [name, param] : result.state.params)
          sgd_step(param, param.grad(), velocity[name], step_cfg);
      } catch (const NumericError& e) {
        throw NumericError("trainer: epoch " + std::to_string(epoch + 1) +
                           " aborted: " + e.what());
      }
      result.state.zero_grads();

      double w = static_cast<double>(batch.size);
      loss_sum += loss.item() * w;
      rm_sum += rm_val * w;
      rb_sum += rb_val * w;
      for (std::size_t i = 0; i < batch.size; ++i) {
        auto row = out.logits.values().subspan(i * c, c);
        correct += argmax_row(row) == static_cast<std::size_t>(batch.targets[i]);
      }
      seen += batch.size;
    }

    MetricsRow row;
    row.epoch = epoch + 1;
    double n = seen ? static_cast<double>(seen) : 1.0;
    row.loss = loss_sum / n;
    row.r_mem = rm_sum / n;
    row.r_batch = rb_sum / n;
    row.r_total = row.r_mem + row.r_batch;
    row.acc_train = static_cast<double>(correct) / n;
    row.loss_val = dataset_loss(result.state, val_view, opt.batch_size);
    row.acc_test_unbiased = dataset_accuracy(result.state, test_view, opt.batch_size);
    row.lr = lr;
    result.log.rows.push_back(row);

    bool improved = row.loss_val < best_val;
    if (improved) {
      best_val = row.loss_val;
      best_epoch = epoch + 1;
      since_improve = 0;
      result.best_state = clone_state(result.state, true);
      if (options.checkpoint_dir)
        save_training_checkpoint(best_path, result.state, result.bank, velocity, result.log,
                                 epoch + 1, best_val, best_epoch, lr, since_improve,
                                 options.run_id);
    } else {
      ++since_improve;
    }

    if (opt.plateau_enabled && since_improve >= opt.plateau_patience) {
      lr *= opt.plateau_decay;
      since_improve = 0;
      if (lr < opt.stop_lr_threshold) {
        if (options.checkpoint_dir)
          save_training_checkpoint(latest, result.state, result.bank, velocity, result.log,
                                   epoch + 1, best_val, best_epoch, lr, since_improve,
                                   options.run_id);
        result.stopped_early = true;
        break;
      }
    }

    if (options.checkpoint_dir)
      save_training_checkpoint(latest, result.state, result.bank, velocity, result.log,
                               epoch + 1, best_val, best_epoch, lr, since_improve,
                               options.run_id);
    if (options.stop_after_epochs > 0 && epoch + 1 >= options.stop_after_epochs) break;
  }

  result.best_epoch = best_epoch;
  return result;
}

// ---------------------------------------------------------------------------
// Feature export

FeatureExport export_features(const ModelState& state, const BiasedDataset& data,
                              const std::vector<SplitTag>& splits,
                              const std::string& checkpoint_id) {
  ModelState eval = detached_view(state);
  FeatureExport out;
  out.n_gamma = state.config.bottleneck_width();
  out.checkpoint_id = checkpoint_id;
  const std::size_t batch_size = 256;
  for (SplitTag tag : splits) {
    auto view = data.split_view(tag);
    for (std::size_t from = 0; from < view.size(); from += batch_size) {
      std::size_t count = std::min(batch_size, view.size() - from);
      Batch batch = make_batch(view, {}, from, count, state.config.num_targets);
      if (batch.size == 0) continue;
      auto fwd = forward(eval, batch.images);
      for (std::size_t i = 0; i < batch.size; ++i) {
        FeatureRow row;
        auto span = fwd.v_hat.values().subspan(i * out.n_gamma, out.n_gamma);
        row.v_hat.assign(span.begin(), span.end());
        row.target = batch.labels.target[i];
        row.priv = batch.labels.priv[i];
        row.split = tag;
        out.rows.push_back(std::move(row));
      }
    }
  }
  return out;
}

namespace {

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
  }
  return "train";
}

SplitTag split_from_name(const std::string& name, std::size_t line) {
  if (name == "train") return SplitTag::train;
  if (name == "validation") return SplitTag::validation;
  if (name == "test") return SplitTag::test;
  throw DataError("features: line " + std::to_string(line) + ": unknown split '" + name + "'");
}

}  // namespace

void save_features_csv(const FeatureExport& features, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("features: cannot write " + path.string());
  os << "# DISPFEAT1 n_gamma=" << features.n_gamma << " checkpoint=" << features.checkpoint_id
     << "\n";
  for (std::size_t j = 0; j < features.n_gamma; ++j) os << "v" << j << ",";
  os << "t,p,split\n";
  char buf[32];
  for (const auto& row : features.rows) {
    for (double v : row.v_hat) {
      std::snprintf(buf, sizeof(buf), "%.10g", v);
      os << buf << ",";
    }
    os << row.target << "," << row.priv << "," << split_name(row.split) << "\n";
  }
}

FeatureExport load_features_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("features: cannot open " + path.string());
  FeatureExport out;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || line.rfind("# DISPFEAT1", 0) != 0)
    throw DataError("features: line 1: missing DISPFEAT1 header");
  if (auto pos = line.find("n_gamma="); pos != std::string::npos)
    out.n_gamma = static_cast<std::size_t>(std::stoul(line.substr(pos + 8)));
  if (auto pos = line.find("checkpoint="); pos != std::string::npos)
    out.checkpoint_id = line.substr(pos + 11);
  if (out.n_gamma == 0) throw DataError("features: line 1: n_gamma missing or zero");

  std::getline(is, line);  // column header
  ++line_no;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    FeatureRow row;
    std::size_t start = 0;
    auto next_field = [&]() {
      auto comma = line.find(',', start);
      std::string field = line.substr(start, comma == std::string::npos
                                                 ? std::string::npos
                                                 : comma - start);
      start = comma == std::string::npos ? line.size() : comma + 1;
      return field;
    };
    try {
      for (std::size_t j = 0; j < out.n_gamma; ++j) row.v_hat.push_back(std::stod(next_field()));
      row.target = std::stoi(next_field());
      row.priv = std::stoi(next_field());
    } catch (const std::exception&) {
      throw DataError("features: line " + std::to_string(line_no) + ": malformed field");
    }
    row.split = split_from_name(next_field(), line_no);
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace disp
