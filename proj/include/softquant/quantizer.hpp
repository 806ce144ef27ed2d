#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace softquant::quant {

inline constexpr int kDefaultPrecisionBits = 7;
inline constexpr std::size_t kDefaultMinClusterSize = 10;

/// Partition of one layer's weights into clusters.
///
/// `edges` are the sorted boundaries of the identification bins (bins are
/// half-open except the last). `bin_cluster[k]` names the cluster owning bin k,
/// or -1 for an empty bin. Cluster ids are ordered by centroid.
struct ClusterMap {
  std::string layer;
  std::vector<double> edges;
  std::vector<int> bin_cluster;
  std::vector<std::uint32_t> assignments;
  std::vector<double> centroids;
  std::vector<std::size_t> sizes;

  std::size_t num_clusters() const noexcept { return centroids.size(); }
  std::size_t num_weights() const noexcept { return assignments.size(); }
  std::size_t bin_of(double x) const;
};

/// 2^precision_bits equal-width bins over [min, max]; every nonempty bin is a
/// cluster whose centroid is the mean of its members.
ClusterMap identify_clusters(std::span<const double> weights,
                             int precision_bits = kDefaultPrecisionBits, std::string layer = {});

/// Replaces each weight by its cluster centroid. Weights outside the map's
/// support, or in bins the map never populated, go to the nearest centroid.
std::vector<double> snap_to_clusters(std::span<const double> weights, const ClusterMap& map);

struct RefineConfig {
  std::size_t n_min = kDefaultMinClusterSize;
};

/// Merges every cluster with <= n_min members into the nearest cluster with
/// more than n_min members (ties toward the lower centroid), smallest first,
/// recomputing centroids after each merge. Throws RefinementImpossible when no
/// cluster exceeds n_min.
ClusterMap refine_clusters(const ClusterMap& map, const RefineConfig& cfg = {});

struct LayerBits {
  std::string layer;
  std::size_t n = 0;
  std::size_t clusters = 0;
  double bits = 0.0;
};

struct QuantizationReport {
  std::vector<LayerBits> per_layer;
  double b_bar = 0.0;
  bool refined = false;
  double delta_accuracy = 0.0;
};

/// b_l = log2 K_l and the parameter-weighted mean over layers.
QuantizationReport bit_widths(std::span<const ClusterMap> maps, bool refined = false);

struct HeqResult {
  std::vector<double> weights;
  ClusterMap map;
};

/// Histogram-equalized quantization: 2^bits equal-count groups over the
/// stably sorted weights (the first N mod 2^bits groups get one extra),
/// each represented by its mean.
HeqResult heq_quantize(std::span<const double> weights, int bits, std::string layer = {});

/// Pretrained minus compressed accuracy, in percentage points.
double accuracy_degradation(double pre_acc, double comp_acc);

/// Number of distinct values (exact comparison).
std::size_t distinct_values(std::span<const double> weights);

}  // namespace softquant::quant
