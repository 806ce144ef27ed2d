#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softquant/data.hpp"
#include "softquant/nn.hpp"

namespace softquant::landscape {

// A layer's parameter vector here is its weights followed by its bias.

struct LayerDistances {
  std::vector<std::string> names;
  std::vector<std::size_t> sizes;   // N_l
  std::vector<double> per_layer;    // Euclidean norm of the difference
  double total = 0.0;               // sqrt of the sum of squares
};

LayerDistances layer_distances(const nn::ModelState& pre, const nn::ModelState& post);

/// Adds N(0, eta_l^2) noise with eta_l = delta_l / sqrt(N_l) to every parameter of layer l.
nn::ModelState gaussian_perturb(const nn::ModelState& pre, std::span<const double> deltas,
                                Rng& rng);

/// (L_task(other) - L_task(pre)) / ||other - pre||.
double loss_slope(const nn::ModelState& pre, const nn::ModelState& other,
                  const data::Dataset& eval);

struct RandomSample {
  double delta_theta = 0.0;
  double delta_loss = 0.0;
  double slope = 0.0;
};

struct PerturbationReport {
  double delta_theta_total = 0.0;
  double delta_task_loss = 0.0;
  double slope = 0.0;
  std::vector<RandomSample> random;
  double percentile_rank = 0.0;  // percent of random slopes below the compressed slope

  std::vector<double> random_slopes() const;
};

/// Percentage of `population` strictly below `value`, counting ties as half.
double percentile_rank(double value, std::span<const double> population);

/// Compares the compressed model's loss slope against `n_samples` Gaussian
/// perturbations of `pre` at matched layerwise distances. Sample i draws
/// from the stream Rng::derive(seed, {i}).
PerturbationReport perturbation_study(const nn::ModelState& pre, const nn::ModelState& compressed,
                                      const data::Dataset& eval, std::size_t n_samples,
                                      std::uint64_t seed);

}  // namespace softquant::landscape
