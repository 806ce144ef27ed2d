#include "softquant/scaling.hpp"

#include <cmath>

#include "softquant/coupling.hpp"
#include "softquant/errors.hpp"

namespace softquant::scaling {

const LayerParams* CouplingParams::find(const std::string& name) const {
  for (const auto& p : per_layer)
    if (p.name == name) return &p;
  return nullptr;
}

LayerStats layer_stats(std::span<const double> weights, std::string name) {
  if (weights.size() < 2) throw InputError("layer stats need at least two weights");
  double mean = 0.0;
  for (double x : weights) mean += x;
  mean /= static_cast<double>(weights.size());
  double ss = 0.0;
  for (double x : weights) ss += (x - mean) * (x - mean);
  return {std::move(name), weights.size(), std::sqrt(ss / static_cast<double>(weights.size()))};
}

std::vector<LayerStats> model_stats(const nn::ModelState& model) {
  std::vector<LayerStats> out;
  for (const auto& l : model.layers)
    if (l.spec.couple) out.push_back(layer_stats(l.weights.values(), l.spec.name));
  return out;
}

CouplingParams derive_params(const std::vector<LayerStats>& stats, double h, double w,
                             double alpha) {
  if (!(h >= 0.0) || !(w > 0.0)) throw ConfigError("need h >= 0 and w > 0");
  CouplingParams p;
  p.h = h;
  p.w = w;
  p.alpha = alpha;
  for (const auto& s : stats) {
    LayerParams lp;
    lp.name = s.name;
    lp.n = s.n;
    lp.h = h * std::pow(static_cast<double>(s.n), -alpha);
    lp.w = w * s.sigma;
    if (!(s.sigma > 0.0)) {
      lp.coupled = false;
      p.warnings.push_back("layer '" + s.name + "' has zero spread; excluded from coupling");
    }
    p.per_layer.push_back(lp);
  }
  return p;
}

std::vector<ExtensivePoint> extensive_potential(const nn::ModelState& model,
                                                const CouplingParams& params,
                                                std::size_t oracle_limit) {
  std::vector<ExtensivePoint> out;
  for (const auto& l : model.layers) {
    const auto* lp = params.find(l.spec.name);
    if (!l.spec.couple || !lp || !lp->coupled) continue;
    const coupling::TriangularWell well(lp->w);
    const auto weights = l.weights.values();
    double energy;
    if (weights.size() <= oracle_limit) {
      energy = coupling::pairwise_coupling_energy(weights, well);
    } else {
      Rng unused(0);
      const auto hist = coupling::build_histogram(weights, coupling::kDefaultBins, 1.0, unused);
      const auto pot = coupling::effective_potential(hist, well);
      energy = coupling::coupling_loss_estimate(pot, hist, 1.0) - coupling::self_interaction(pot);
    }
    const auto stats = layer_stats(weights);
    out.push_back({l.spec.name, weights.size(), stats.sigma, energy});
  }
  if (out.size() < 2) throw InputError("extensive potential needs at least two coupled layers");
  return out;
}

ScalingFit fit_power_law(std::span<const std::pair<double, double>> size_energy) {
  ScalingFit fit;
  for (const auto& [n, e] : size_energy) {
    if (!(std::abs(e) > 0.0) || !(n > 0.0) || !std::isfinite(e)) {
      fit.warnings.push_back("dropped point with N=" + std::to_string(n) +
                             " energy=" + std::to_string(e));
      continue;
    }
    fit.points.emplace_back(std::log10(n), std::log10(std::abs(e)));
  }
  if (fit.points.size() < 3) throw InputError("power-law fit needs at least three usable points");

  const double m = static_cast<double>(fit.points.size());
  double sx = 0, sy = 0;
  for (const auto& [x, y] : fit.points) sx += x, sy += y;
  const double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : fit.points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 0.0)) throw InputError("power-law fit needs at least two distinct layer sizes");
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  double sse = 0;
  for (const auto& [x, y] : fit.points) {
    const double r = y - (fit.intercept + fit.exponent * x);
    sse += r * r;
  }
  fit.mse = sse / m;
  return fit;
}

}  // namespace softquant::scaling
