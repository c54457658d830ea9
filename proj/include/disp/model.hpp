#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "disp/tensor.hpp"

namespace disp {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 7;
  std::size_t stride = 1;
  std::size_t padding = 3;
};

/// Encoder-bottleneck-classifier architecture. The bottleneck is the global
/// average pooling of the last conv layer, so its width equals that layer's
/// channel count; the classifier consumes the tanh-activated, row-normalized
/// features.
struct ModelConfig {
  std::vector<ConvSpec> encoder;
  std::vector<std::size_t> classifier_hidden;  // widths between bottleneck and logits
  std::size_t num_targets = 10;                // C
  std::size_t in_channels = 3;
  std::size_t in_height = 28;
  std::size_t in_width = 28;

  std::size_t bottleneck_width() const;  // N_Gamma
  void validate() const;

  /// Four 7x7 conv layers (16/32/64/64, stride 2 from the second on) with a
  /// direct linear classifier; sized to train on a CPU in minutes.
  static ModelConfig reference(std::size_t image_size = 28);
};

struct ModelState {
  ModelConfig config;
  std::uint64_t seed = 0;
  // Ordered by name: "conv0.weight", "conv0.bias", ..., "fc0.weight", ...
  std::map<std::string, Tensor> params;

  std::size_t parameter_count() const;
  void zero_grads();
};

struct BottleneckOutput {
  Tensor v;       // [M, N_Gamma] pooled pre-activation
  Tensor v_hat;   // [M, N_Gamma] tanh + row-wise l2 normalization
  Tensor logits;  // [M, C]
};

/// Fan-in-scaled uniform weights, zero biases; bitwise reproducible per seed.
ModelState init_model(const ModelConfig& config, std::uint64_t seed);

/// Full forward pass, recorded for backward.
BottleneckOutput forward(const ModelState& state, const Tensor& batch);

/// Bottleneck activation plus classifier from a pooled pre-activation v.
BottleneckOutput bottleneck_and_classify(const ModelState& state, const Tensor& v);

}  // namespace disp
