#include "softquant/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "softquant/errors.hpp"
#include "softquant/fft.hpp"

namespace softquant::coupling {

TriangularWell::TriangularWell(double range) : w(range) {
  if (!(range > 0.0) || !std::isfinite(range))
    throw InputError("well range must be positive and finite");
}

double pairwise_coupling_energy(std::span<const double> weights, const TriangularWell& well) {
  if (weights.size() < 2) throw InputError("pairwise energy needs at least two weights");
  double total = 0.0;
  const std::size_t n = weights.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) total += well.energy(weights[i] - weights[j]);
  return total;
}

std::size_t WeightHistogram::bin_of(double x) const noexcept {
  const std::size_t first = padded ? 1 : 0, last = padded ? n_bins - 2 : n_bins - 1;
  const double t = (x - lo) / bin_width();
  if (!(t > static_cast<double>(first))) return first;
  return std::min(static_cast<std::size_t>(t), last);
}

std::size_t sample_size(std::size_t n, double fraction) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

namespace {

void check_bins(std::size_t n_bins) {
  if (n_bins < 3) throw InputError("histogram needs at least 3 bins (one pad bin per side)");
}

}  // namespace

WeightHistogram build_histogram_on(std::span<const double> weights, double lo, double hi,
                                   std::size_t n_bins) {
  check_bins(n_bins);
  if (weights.empty()) throw InputError("cannot histogram an empty layer");
  if (!(hi > lo)) throw InputError("histogram support must have hi > lo");
  WeightHistogram h;
  h.lo = lo;
  h.hi = hi;
  h.n_bins = n_bins;
  h.counts.assign(n_bins, 0);
  h.n_total = h.n_sampled = weights.size();
  for (double x : weights) ++h.counts[h.bin_of(x)];
  return h;
}

WeightHistogram build_histogram(std::span<const double> weights, std::size_t n_bins,
                                double fraction, Rng& rng) {
  check_bins(n_bins);
  if (weights.empty()) throw InputError("cannot histogram an empty layer");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("sample fraction must be in (0, 1]");

  const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
  double width = (*mx - *mn) / static_cast<double>(n_bins - 2);
  if (!(width > 0.0)) width = std::max(1.0, std::abs(*mn)) * 1e-9;
  if (!std::isfinite(width)) throw NumericError("non-finite weights in histogram input");

  WeightHistogram h;
  h.lo = *mn - width;
  h.hi = h.lo + width * static_cast<double>(n_bins);
  h.n_bins = n_bins;
  h.counts.assign(n_bins, 0);
  h.sample_fraction = fraction;
  h.padded = true;
  h.n_total = weights.size();

  const std::size_t k = sample_size(weights.size(), fraction);
  h.n_sampled = k;
  if (k == weights.size()) {
    for (double x : weights) ++h.counts[h.bin_of(x)];
  } else {
    for (std::size_t i : subsample_indices(weights.size(), k, rng)) ++h.counts[h.bin_of(weights[i])];
  }
  return h;
}

EffectivePotential effective_potential(const WeightHistogram& hist, const TriangularWell& well) {
  const std::size_t n = hist.n_bins;
  if (hist.counts.size() != n || n < 3) throw InputError("malformed histogram");
  const double dx = hist.bin_width();

  EffectivePotential pot;
  pot.well = well;
  pot.n_total = hist.n_total;
  pot.scale = static_cast<double>(hist.n_total) / static_cast<double>(hist.n_sampled);
  pot.resolvable = well.w > dx;

  // Largest bin offset d with |d| * dx < w, capped at the histogram length.
  const double ratio = well.w / dx;
  std::size_t radius = n - 1;
  if (ratio < static_cast<double>(n)) {
    radius = static_cast<std::size_t>(std::ceil(ratio)) - 1;
    radius = std::min(radius, n - 1);
  }

  std::vector<double> kernel(radius + 1);
  for (std::size_t d = 0; d <= radius; ++d) kernel[d] = well.energy(static_cast<double>(d) * dx);

  std::vector<double> conv(n, 0.0);
  if (2 * radius + 1 <= 32) {
    for (std::size_t b = 0; b < n; ++b) {
      if (hist.counts[b] == 0) continue;
      const double c = static_cast<double>(hist.counts[b]);
      const std::size_t from = b >= radius ? b - radius : 0;
      const std::size_t to = std::min(n - 1, b + radius);
      for (std::size_t t = from; t <= to; ++t) conv[t] += c * kernel[t > b ? t - b : b - t];
    }
  } else {
    const std::size_t m = fft::next_pow2(n + radius);
    std::vector<double> a(m, 0.0), k(m, 0.0);
    for (std::size_t b = 0; b < n; ++b) a[b] = static_cast<double>(hist.counts[b]);
    k[0] = kernel[0];
    for (std::size_t d = 1; d <= radius; ++d) k[d] = k[m - d] = kernel[d];
    const auto full = fft::circular_convolve(a, k);
    std::copy_n(full.begin(), n, conv.begin());
  }

  // Exact zeros where no mass lies within the kernel radius, and clamp the
  // transform's roundoff so V stays nonpositive.
  std::vector<std::int64_t> prefix(n + 1, 0);
  for (std::size_t b = 0; b < n; ++b) prefix[b + 1] = prefix[b] + hist.counts[b];
  pot.values.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t from = b >= radius ? b - radius : 0;
    const std::size_t to = std::min(n - 1, b + radius);
    const bool mass = prefix[to + 1] - prefix[from] > 0;
    pot.values[b] = mass ? std::min(0.0, pot.scale * conv[b]) : 0.0;
  }

  pot.derivative.resize(n);
  const auto& v = pot.values;
  pot.derivative[0] = (v[1] - v[0]) / dx;
  pot.derivative[n - 1] = (v[n - 1] - v[n - 2]) / dx;
  for (std::size_t b = 1; b + 1 < n; ++b) pot.derivative[b] = (v[b + 1] - v[b - 1]) / (2.0 * dx);
  return pot;
}

void accumulate_compression_force(const EffectivePotential& pot, const WeightHistogram& hist,
                                  std::span<const double> weights, double h_l,
                                  std::span<double> grad) {
  if (pot.derivative.size() != hist.n_bins) throw InputError("potential/histogram size mismatch");
  if (grad.size() != weights.size()) throw InputError("force/weight length mismatch");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double d = pot.derivative[hist.bin_of(weights[i])];
    if (!std::isfinite(d)) throw NumericError("non-finite potential derivative");
    grad[i] += h_l * d;
  }
}

std::vector<double> compression_force(const EffectivePotential& pot, const WeightHistogram& hist,
                                      std::span<const double> weights, double h_l) {
  std::vector<double> force(weights.size(), 0.0);
  accumulate_compression_force(pot, hist, weights, h_l, force);
  return force;
}

double coupling_loss_estimate(const EffectivePotential& pot, const WeightHistogram& hist,
                              double h_l) {
  if (pot.values.size() != hist.n_bins) throw InputError("potential/histogram size mismatch");
  double s = 0.0;
  for (std::size_t b = 0; b < hist.n_bins; ++b)
    if (hist.counts[b]) s += static_cast<double>(hist.counts[b]) * pot.values[b];
  return h_l * s * pot.scale;
}

double self_interaction(const EffectivePotential& pot) {
  return static_cast<double>(pot.n_total) * pot.scale * pot.well.energy(0.0);
}

CouplingSchedule CouplingSchedule::for_epochs(int total_epochs, double f0) {
  CouplingSchedule s;
  s.f0 = f0;
  s.total_epochs = total_epochs;
  s.epoch_full = (5 * total_epochs + 5) / 6;
  return s;
}

void CouplingSchedule::validate() const {
  if (!(f0 > 0.0 && f0 <= 1.0)) throw ConfigError("schedule f0 must be in (0, 1]");
  if (epoch_full < 0 || epoch_full > total_epochs)
    throw ConfigError("schedule epoch_full must lie in [0, total_epochs]");
}

double sample_fraction_at(const CouplingSchedule& schedule, int epoch) {
  schedule.validate();
  if (epoch < 0 || epoch >= schedule.total_epochs)
    throw InputError("epoch " + std::to_string(epoch) + " outside schedule");
  if (epoch >= schedule.epoch_full) return 1.0;
  return schedule.f0 + (1.0 - schedule.f0) * static_cast<double>(epoch) /
                           static_cast<double>(schedule.epoch_full);
}

}  // namespace softquant::coupling
