#include "softquant/landscape.hpp"

#include <cmath>

#include "softquant/errors.hpp"

namespace softquant::landscape {

namespace {

void check_same_architecture(const nn::ModelState& a, const nn::ModelState& b) {
  if (a.layers.size() != b.layers.size())
    throw InputError("architecture mismatch: different layer counts");
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (!(a.layers[i].spec == b.layers[i].spec))
      throw InputError("architecture mismatch at layer '" + a.layers[i].spec.name + "'");
}

}  // namespace

LayerDistances layer_distances(const nn::ModelState& pre, const nn::ModelState& post) {
  check_same_architecture(pre, post);
  LayerDistances d;
  double total_sq = 0.0;
  for (std::size_t i = 0; i < pre.layers.size(); ++i) {
    const auto& a = pre.layers[i];
    const auto& b = post.layers[i];
    double sq = 0.0;
    for (std::size_t k = 0; k < a.weights.size(); ++k) {
      const double diff = b.weights[k] - a.weights[k];
      sq += diff * diff;
    }
    for (std::size_t k = 0; k < a.bias.size(); ++k) {
      const double diff = b.bias[k] - a.bias[k];
      sq += diff * diff;
    }
    d.names.push_back(a.spec.name);
    d.sizes.push_back(a.weights.size() + a.bias.size());
    d.per_layer.push_back(std::sqrt(sq));
    total_sq += sq;
  }
  d.total = std::sqrt(total_sq);
  return d;
}

nn::ModelState gaussian_perturb(const nn::ModelState& pre, std::span<const double> deltas,
                                Rng& rng) {
  if (deltas.size() != pre.layers.size()) throw InputError("one distance per layer required");
  nn::ModelState out = pre;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    if (!(deltas[i] >= 0.0)) throw InputError("layer distances must be nonnegative");
    if (deltas[i] == 0.0) continue;
    auto& l = out.layers[i];
    const double eta =
        deltas[i] / std::sqrt(static_cast<double>(l.weights.size() + l.bias.size()));
    for (auto& v : l.weights.values()) v += eta * rng.normal();
    for (auto& v : l.bias.values()) v += eta * rng.normal();
  }
  return out;
}

double loss_slope(const nn::ModelState& pre, const nn::ModelState& other,
                  const data::Dataset& eval) {
  const double dist = layer_distances(pre, other).total;
  if (!(dist > 0.0)) throw InputError("loss slope undefined at zero distance");
  return (data::evaluate(other, eval).loss - data::evaluate(pre, eval).loss) / dist;
}

std::vector<double> PerturbationReport::random_slopes() const {
  std::vector<double> s;
  s.reserve(random.size());
  for (const auto& r : random) s.push_back(r.slope);
  return s;
}

double percentile_rank(double value, std::span<const double> population) {
  if (population.empty()) throw InputError("percentile of an empty population");
  double below = 0.0;
  for (double p : population) below += p < value ? 1.0 : (p == value ? 0.5 : 0.0);
  return 100.0 * below / static_cast<double>(population.size());
}

PerturbationReport perturbation_study(const nn::ModelState& pre, const nn::ModelState& compressed,
                                      const data::Dataset& eval, std::size_t n_samples,
                                      std::uint64_t seed) {
  if (n_samples < 10) throw InputError("perturbation study needs at least 10 samples");
  const auto dist = layer_distances(pre, compressed);
  if (!(dist.total > 0.0)) throw InputError("compressed model coincides with the pretrained one");
  const double base_loss = data::evaluate(pre, eval).loss;

  PerturbationReport r;
  r.delta_theta_total = dist.total;
  r.delta_task_loss = data::evaluate(compressed, eval).loss - base_loss;
  r.slope = r.delta_task_loss / dist.total;
  r.random.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    Rng rng(Rng::derive(seed, {s}));
    const auto noisy = gaussian_perturb(pre, dist.per_layer, rng);
    RandomSample rs;
    rs.delta_theta = layer_distances(pre, noisy).total;
    rs.delta_loss = data::evaluate(noisy, eval).loss - base_loss;
    rs.slope = rs.delta_loss / rs.delta_theta;
    r.random.push_back(rs);
  }
  r.percentile_rank = percentile_rank(r.slope, r.random_slopes());
  return r;
}

}  // namespace softquant::landscape
