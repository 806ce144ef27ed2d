#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "softquant/rng.hpp"

namespace softquant::coupling {

inline constexpr std::size_t kDefaultBins = std::size_t{1} << 14;

/// Short-range pair potential U_w(x) = |x| - w for |x| < w, else 0.
/// Attractive with constant force magnitude inside the range; U(+-w) = 0.
struct TriangularWell {
  double w = 0.0;

  explicit TriangularWell(double range);
  double energy(double x) const noexcept {
    const double a = x < 0 ? -x : x;
    return a < w ? a - w : 0.0;
  }
};

inline double well_energy(const TriangularWell& well, double x) noexcept { return well.energy(x); }

/// Exact sum of U(x_i - x_j) over ordered pairs i != j. O(N^2).
double pairwise_coupling_energy(std::span<const double> weights, const TriangularWell& well);

/// Binned estimate of a layer's weight density.
///
/// The support is the full layer's [min, max] padded by one bin on each side,
/// so `bin_width == (max - min) / (n_bins - 2)`. Only a random subsample of
/// `n_sampled` weights is counted.
struct WeightHistogram {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n_bins = 0;
  std::vector<std::int64_t> counts;
  double sample_fraction = 1.0;
  std::size_t n_total = 0;
  std::size_t n_sampled = 0;
  bool padded = false;  // data bins are 1..n_bins-2; bin_of clamps into them

  double bin_width() const noexcept { return (hi - lo) / static_cast<double>(n_bins); }
  double midpoint(std::size_t b) const noexcept {
    return lo + (static_cast<double>(b) + 0.5) * bin_width();
  }
  /// Bin index, clamped into [0, n_bins). The value `hi` maps to the last bin.
  std::size_t bin_of(double x) const noexcept;
};

/// Subsample size used for a layer of `n` weights at `fraction`.
std::size_t sample_size(std::size_t n, double fraction);

/// Indices of a uniform subsample without replacement: partial Fisher-Yates
/// over 0..n-1, drawing `j = i + rng.below(n - i)` for i = 0..k-1.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, Rng& rng);

WeightHistogram build_histogram(std::span<const double> weights, std::size_t n_bins,
                                double fraction, Rng& rng);

/// Histogram over a fixed support. Used when reproducing a histogram whose
/// bounds were recorded elsewhere.
WeightHistogram build_histogram_on(std::span<const double> weights, double lo, double hi,
                                   std::size_t n_bins);

/// V(theta) = N * (rho * U)(theta) sampled at bin midpoints, and dV/dtheta.
struct EffectivePotential {
  std::vector<double> values;
  std::vector<double> derivative;
  TriangularWell well{1.0};
  std::size_t n_total = 0;
  double scale = 1.0;      // n_total / n_sampled
  bool resolvable = true;  // false when w <= bin width
};

/// Convolution of the histogram counts with U sampled at bin-offset distances,
/// done with a zero-padded FFT of length >= n_bins + kernel radius.
/// Derivative by central differences over bins (one-sided at the edges).
EffectivePotential effective_potential(const WeightHistogram& hist, const TriangularWell& well);

/// Per-weight force h_l * dV/dtheta evaluated at the weight's bin midpoint.
std::vector<double> compression_force(const EffectivePotential& pot, const WeightHistogram& hist,
                                      std::span<const double> weights, double h_l);

/// Adds the force into `grad` (same length as weights) without allocating.
void accumulate_compression_force(const EffectivePotential& pot, const WeightHistogram& hist,
                                  std::span<const double> weights, double h_l,
                                  std::span<double> grad);

/// h_l * sum_b counts[b] * V[b] / sample_fraction. Includes the i == j terms,
/// which contribute h_l * n_total * U(0) in expectation.
double coupling_loss_estimate(const EffectivePotential& pot, const WeightHistogram& hist,
                              double h_l);

/// The self-interaction constant N * U(0) * scale contained in the estimate.
double self_interaction(const EffectivePotential& pot);

/// Subsample fraction schedule: linear from f0 at epoch 0 to 1 at epoch_full.
struct CouplingSchedule {
  double f0 = 0.1;
  int epoch_full = 25;
  int total_epochs = 30;

  /// Default ramp reaching the full layer at ceil(5/6 * total_epochs).
  static CouplingSchedule for_epochs(int total_epochs, double f0 = 0.1);
  void validate() const;
};

double sample_fraction_at(const CouplingSchedule& schedule, int epoch);

}  // namespace softquant::coupling
