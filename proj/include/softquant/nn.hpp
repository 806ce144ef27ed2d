#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "softquant/rng.hpp"
#include "softquant/tensor.hpp"

namespace softquant::nn {

enum class LayerKind { dense, conv2d };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

/// Shape and role of one trainable layer.
///
/// Dense layers map `in_features -> out_features`. Conv2d layers use stride 1
/// and same padding on a `in_channels x height x width` input, producing
/// `out_channels x height x width`. A ReLU follows every layer except the last.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::dense;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool has_bias = true;
  bool couple = true;  // participates in the weight-coupling loss

  std::size_t input_size() const;
  std::size_t output_size() const;
  std::vector<std::size_t> weight_shape() const;
  std::vector<std::size_t> bias_shape() const;

  bool operator==(const LayerSpec&) const = default;
};

LayerSpec dense(std::string name, std::size_t in, std::size_t out, bool has_bias = true);
LayerSpec conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                 std::size_t kernel, std::size_t height, std::size_t width, bool has_bias = true);

struct Layer {
  LayerSpec spec;
  Tensor weights;
  Tensor bias;  // empty when !spec.has_bias
  Tensor velocity;
  Tensor bias_velocity;

  bool operator==(const Layer&) const = default;
};

struct ModelState {
  std::vector<Layer> layers;
  std::uint64_t rng_seed = 0;

  std::size_t input_size() const { return layers.front().spec.input_size(); }
  std::size_t num_classes() const { return layers.back().spec.output_size(); }
  std::size_t parameter_count() const;
  const Layer& layer(const std::string& name) const;

  bool operator==(const ModelState&) const = default;
};

/// Builds a model from specs, validating chaining and name uniqueness.
/// Weights are drawn uniform in +-1/sqrt(fan_in); biases and velocities are zero.
ModelState make_model(std::vector<LayerSpec> specs, std::uint64_t seed);

/// Throws ConfigError if the layer chain is inconsistent.
void validate(const ModelState& model);

struct LossBreakdown {
  double task = 0.0;
  double coupling = 0.0;
  double total = 0.0;

  static LossBreakdown of(double task, double coupling) { return {task, coupling, task + coupling}; }
};

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};
using Gradients = std::vector<LayerGrad>;

/// Logits of shape [batch, num_classes] for a [batch, input_size] batch.
Tensor forward(const ModelState& model, const Tensor& batch);

/// Mean negative log-softmax of the true class.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

/// Gradient of cross_entropy(forward(model, batch), labels) w.r.t. every
/// trainable tensor. Also returns the loss through `loss_out` when non-null.
Gradients task_gradient(const ModelState& model, const Tensor& batch,
                        std::span<const int> labels, double* loss_out = nullptr);

/// Zero-initialized gradients matching the model's trainable tensors.
Gradients zero_gradients(const ModelState& model);

/// Nesterov momentum update, in place:
///   v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g
/// Throws NumericError (and leaves the model untouched) on non-finite gradients.
void sgd_nesterov_step(ModelState& model, const Gradients& grads, double lr, double momentum);

}  // namespace softquant::nn
