#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softquant/nn.hpp"

namespace softquant::scaling {

inline constexpr double kDefaultAlpha = 0.66;

/// Size and spread of a layer, measured once on the pretrained weights.
struct LayerStats {
  std::string name;
  std::size_t n = 0;
  double sigma = 0.0;
};

struct LayerParams {
  std::string name;
  std::size_t n = 0;
  double h = 0.0;  // h_l = h * n^-alpha
  double w = 0.0;  // w_l = w * sigma_l
  bool coupled = true;
};

struct CouplingParams {
  double h = 0.0;
  double w = 0.0;
  double alpha = kDefaultAlpha;
  std::vector<LayerParams> per_layer;
  std::vector<std::string> warnings;

  const LayerParams* find(const std::string& name) const;
};

/// Population standard deviation (divide by N). Throws InputError for N < 2.
LayerStats layer_stats(std::span<const double> weights, std::string name = {});

/// Stats for every coupled layer of a model.
std::vector<LayerStats> model_stats(const nn::ModelState& model);

/// Layers with sigma == 0 are kept but marked uncoupled, with a warning.
CouplingParams derive_params(const std::vector<LayerStats>& stats, double h, double w,
                             double alpha = kDefaultAlpha);

struct ExtensivePoint {
  std::string name;
  std::size_t n = 0;
  double sigma = 0.0;
  double energy = 0.0;
};

/// Per-layer interaction energy with h_l = 1: the exact pairwise sum for
/// N <= oracle_limit, otherwise the histogram estimate (self-interaction removed).
std::vector<ExtensivePoint> extensive_potential(const nn::ModelState& model,
                                                const CouplingParams& params,
                                                std::size_t oracle_limit = 10000);

struct ScalingFit {
  std::vector<std::pair<double, double>> points;  // (log10 N, log10 |E|)
  double exponent = 0.0;
  double intercept = 0.0;
  double mse = 0.0;
  std::vector<std::string> warnings;
};

/// Ordinary least squares in log10-log10 space. Points with nonpositive |E|
/// (or N) are dropped with a warning; at least 3 usable points are required.
ScalingFit fit_power_law(std::span<const std::pair<double, double>> size_energy);

}  // namespace softquant::scaling
