#include "disp/model.hpp"

#include <cmath>

#include "disp/errors.hpp"
#include "disp/rng.hpp"

namespace disp {

std::size_t ModelConfig::bottleneck_width() const {
  if (encoder.empty()) throw ConfigError("model: encoder needs at least one conv layer");
  return encoder.back().out_channels;
}

void ModelConfig::validate() const {
  if (num_targets < 2) throw ConfigError("model: C must be at least 2");
  if (encoder.empty()) throw ConfigError("model: encoder needs at least one conv layer");
  if (bottleneck_width() < 2) throw ConfigError("model: bottleneck width must be at least 2");
  for (const auto& c : encoder) {
    if (c.out_channels == 0 || c.kernel == 0 || c.stride == 0)
      throw ConfigError("model: conv spec fields must be positive");
  }
  if (in_channels == 0 || in_height == 0 || in_width == 0)
    throw ConfigError("model: input shape must be positive");
}

ModelConfig ModelConfig::reference(std::size_t image_size) {
  ModelConfig cfg;
  cfg.encoder = {
      {16, 7, 1, 3},
      {32, 7, 2, 3},
      {64, 7, 2, 3},
      {64, 7, 2, 3},
  };
  cfg.classifier_hidden = {};
  cfg.num_targets = 10;
  cfg.in_channels = 3;
  cfg.in_height = image_size;
  cfg.in_width = image_size;
  return cfg;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

void ModelState::zero_grads() {
  for (auto& [_, t] : params) t.zero_grad();
}

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState state;
  state.config = config;
  state.seed = seed;

  std::size_t layer_id = 0;
  auto uniform_fan_in = [&](Shape shape, std::size_t fan_in) {
    CounterRng rng(mix_seed(seed, layer_id++), 0x494E4954);  // stream "INIT"
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform(i, -bound, bound);
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };

  std::size_t cin = config.in_channels;
  for (std::size_t l = 0; l < config.encoder.size(); ++l) {
    const auto& spec = config.encoder[l];
    std::string base = "conv" + std::to_string(l);
    state.params[base + ".weight"] = uniform_fan_in(
        {spec.out_channels, cin, spec.kernel, spec.kernel}, cin * spec.kernel * spec.kernel);
    state.params[base + ".bias"] = Tensor::zeros({spec.out_channels}, true);
    cin = spec.out_channels;
  }

  std::size_t in_width = config.bottleneck_width();
  std::vector<std::size_t> widths = config.classifier_hidden;
  widths.push_back(config.num_targets);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    std::string base = "fc" + std::to_string(l);
    state.params[base + ".weight"] = uniform_fan_in({in_width, widths[l]}, in_width);
    state.params[base + ".bias"] = Tensor::zeros({widths[l]}, true);
    in_width = widths[l];
  }
  return state;
}

BottleneckOutput bottleneck_and_classify(const ModelState& state, const Tensor& v) {
  BottleneckOutput out;
  out.v = v;
  out.v_hat = l2_normalize(tanh(v));

  Tensor h = out.v_hat;
  std::size_t n_fc = state.config.classifier_hidden.size() + 1;
  for (std::size_t l = 0; l < n_fc; ++l) {
    std::string base = "fc" + std::to_string(l);
    h = add(matmul(h, state.params.at(base + ".weight")), state.params.at(base + ".bias"));
    if (l + 1 < n_fc) h = relu(h);
  }
  out.logits = h;
  return out;
}

BottleneckOutput forward(const ModelState& state, const Tensor& batch) {
  const auto& cfg = state.config;
  if (batch.shape().size() != 4 || batch.dim(1) != cfg.in_channels ||
      batch.dim(2) != cfg.in_height || batch.dim(3) != cfg.in_width)
    throw NumericError("forward: batch shape does not match model input");

  // ReLU on the inner layers only; the last conv feeds the pooled
  // pre-activation straight into the bottleneck, whose tanh is the
  // activation of that layer.
  Tensor h = batch;
  for (std::size_t l = 0; l < cfg.encoder.size(); ++l) {
    const auto& spec = cfg.encoder[l];
    std::string base = "conv" + std::to_string(l);
    h = conv2d(h, state.params.at(base + ".weight"), state.params.at(base + ".bias"),
               spec.stride, spec.padding);
    if (l + 1 < cfg.encoder.size()) h = relu(h);
  }
  return bottleneck_and_classify(state, avg_pool_global(h));
}

}  // namespace disp
