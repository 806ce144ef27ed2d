#include <cmath>
#include <set>

#include "softquant/nn.hpp"

namespace softquant::nn {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense:
      return "dense";
    case LayerKind::conv2d:
      return "conv2d";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d") return LayerKind::conv2d;
  throw ConfigError("unknown layer kind '" + s + "'");
}

std::size_t LayerSpec::input_size() const {
  return kind == LayerKind::dense ? in_features : in_channels * height * width;
}

std::size_t LayerSpec::output_size() const {
  return kind == LayerKind::dense ? out_features : out_channels * height * width;
}

std::vector<std::size_t> LayerSpec::weight_shape() const {
  if (kind == LayerKind::dense) return {out_features, in_features};
  return {out_channels, in_channels, kernel, kernel};
}

std::vector<std::size_t> LayerSpec::bias_shape() const {
  if (!has_bias) return {};
  return {kind == LayerKind::dense ? out_features : out_channels};
}

LayerSpec dense(std::string name, std::size_t in, std::size_t out, bool has_bias) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::dense;
  s.in_features = in;
  s.out_features = out;
  s.has_bias = has_bias;
  return s;
}

LayerSpec conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                 std::size_t kernel, std::size_t height, std::size_t width, bool has_bias) {
  LayerSpec s;
  s.name = std::move(name);
  s.kind = LayerKind::conv2d;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.height = height;
  s.width = width;
  s.has_bias = has_bias;
  return s;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

const Layer& ModelState::layer(const std::string& name) const {
  for (const auto& l : layers)
    if (l.spec.name == name) return l;
  throw InputError("no layer named '" + name + "'");
}

namespace {

void validate_spec(const LayerSpec& s) {
  if (s.name.empty()) throw ConfigError("layer name must be nonempty");
  if (s.kind == LayerKind::dense) {
    if (s.in_features == 0 || s.out_features == 0)
      throw ConfigError("dense layer '" + s.name + "' has a zero dimension");
  } else {
    if (s.in_channels == 0 || s.out_channels == 0 || s.kernel == 0 || s.height == 0 ||
        s.width == 0)
      throw ConfigError("conv2d layer '" + s.name + "' has a zero dimension");
    if (s.kernel % 2 == 0)
      throw ConfigError("conv2d layer '" + s.name + "' needs an odd kernel for same padding");
  }
}

}  // namespace

void validate(const ModelState& model) {
  if (model.layers.empty()) throw ConfigError("model has no layers");
  std::set<std::string> names;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    validate_spec(l.spec);
    if (!names.insert(l.spec.name).second)
      throw ConfigError("duplicate layer name '" + l.spec.name + "'");
    if (i > 0 && model.layers[i - 1].spec.output_size() != l.spec.input_size())
      throw ConfigError("layer '" + l.spec.name + "' expects " +
                        std::to_string(l.spec.input_size()) + " inputs but previous layer emits " +
                        std::to_string(model.layers[i - 1].spec.output_size()));
    if (l.weights.shape() != l.spec.weight_shape() || l.velocity.shape() != l.weights.shape())
      throw ConfigError("weight/velocity shape mismatch in layer '" + l.spec.name + "'");
    if (l.bias.shape() != l.spec.bias_shape() && !(l.bias.empty() && !l.spec.has_bias))
      throw ConfigError("bias shape mismatch in layer '" + l.spec.name + "'");
    if (l.bias_velocity.shape() != l.bias.shape())
      throw ConfigError("bias velocity shape mismatch in layer '" + l.spec.name + "'");
  }
}

ModelState make_model(std::vector<LayerSpec> specs, std::uint64_t seed) {
  ModelState model;
  model.rng_seed = seed;
  Rng rng(Rng::derive(seed, {0x1a17}));
  for (auto& spec : specs) {
    validate_spec(spec);
    Layer layer;
    layer.weights = Tensor(spec.weight_shape());
    const std::size_t fan_in = spec.kind == LayerKind::dense
                                   ? spec.in_features
                                   : spec.in_channels * spec.kernel * spec.kernel;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : layer.weights.values()) v = rng.uniform(-bound, bound);
    layer.velocity = Tensor(layer.weights.shape());
    if (spec.has_bias) {
      layer.bias = Tensor(spec.bias_shape());
      layer.bias_velocity = Tensor(layer.bias.shape());
    }
    layer.spec = std::move(spec);
    model.layers.push_back(std::move(layer));
  }
  validate(model);
  return model;
}

}  // namespace softquant::nn
