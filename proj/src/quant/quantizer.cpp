#include "softquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "softquant/errors.hpp"

namespace softquant::quant {

std::size_t ClusterMap::bin_of(double x) const {
  // Bins are [edges[k], edges[k+1]); the value at edges.back() falls in the last bin.
  const std::size_t nb = edges.size() - 1;
  const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, x);
  return std::min<std::size_t>(static_cast<std::size_t>(it - (edges.begin() + 1)), nb - 1);
}

namespace {

std::size_t nearest_centroid(const std::vector<double>& c, double x) {
  const auto it = std::lower_bound(c.begin(), c.end(), x);
  if (it == c.begin()) return 0;
  if (it == c.end()) return c.size() - 1;
  const auto hi = static_cast<std::size_t>(it - c.begin());
  return (x - c[hi - 1] <= c[hi] - x) ? hi - 1 : hi;
}

// Builds clusters from a per-weight bin index: nonempty bins become clusters
// in bin order.
ClusterMap clusters_from_bins(std::span<const double> weights, const std::vector<std::size_t>& bins,
                              std::vector<double> edges, std::string layer) {
  ClusterMap m;
  m.layer = std::move(layer);
  m.edges = std::move(edges);
  const std::size_t nb = m.edges.size() - 1;
  std::vector<double> sum(nb, 0.0);
  std::vector<std::size_t> cnt(nb, 0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    sum[bins[i]] += weights[i];
    ++cnt[bins[i]];
  }
  m.bin_cluster.assign(nb, -1);
  for (std::size_t b = 0; b < nb; ++b) {
    if (!cnt[b]) continue;
    m.bin_cluster[b] = static_cast<int>(m.centroids.size());
    m.centroids.push_back(sum[b] / static_cast<double>(cnt[b]));
    m.sizes.push_back(cnt[b]);
  }
  m.assignments.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    m.assignments[i] = static_cast<std::uint32_t>(m.bin_cluster[bins[i]]);
  return m;
}

}  // namespace

ClusterMap identify_clusters(std::span<const double> weights, int precision_bits,
                             std::string layer) {
  if (weights.empty()) throw InputError("cannot identify clusters in an empty layer");
  if (precision_bits < 0 || precision_bits > 24) throw InputError("precision_bits out of range");
  const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
  const std::size_t nb = std::size_t{1} << precision_bits;
  std::vector<double> edges(nb + 1);
  const double width = (*mx - *mn) / static_cast<double>(nb);
  for (std::size_t k = 0; k <= nb; ++k) edges[k] = *mn + width * static_cast<double>(k);
  edges[nb] = *mx;

  ClusterMap probe;
  probe.edges = edges;
  std::vector<std::size_t> bins(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) bins[i] = probe.bin_of(weights[i]);
  return clusters_from_bins(weights, bins, std::move(edges), std::move(layer));
}

std::vector<double> snap_to_clusters(std::span<const double> weights, const ClusterMap& map) {
  if (map.centroids.empty()) throw InputError("cluster map is empty");
  std::vector<double> out(weights.size());
  const double lo = map.edges.front(), hi = map.edges.back();
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double x = weights[i];
    int c = -1;
    if (x >= lo && x <= hi) c = map.bin_cluster[map.bin_of(x)];
    const std::size_t k = c >= 0 ? static_cast<std::size_t>(c) : nearest_centroid(map.centroids, x);
    out[i] = map.centroids[k];
  }
  return out;
}

ClusterMap refine_clusters(const ClusterMap& map, const RefineConfig& cfg) {
  const std::size_t K = map.num_clusters();
  std::vector<bool> alive(K, true);
  std::vector<double> centroid = map.centroids;
  std::vector<std::size_t> size = map.sizes;
  std::vector<std::size_t> owner(K);
  std::iota(owner.begin(), owner.end(), std::size_t{0});

  if (std::none_of(size.begin(), size.end(), [&](std::size_t s) { return s > cfg.n_min; }))
    throw RefinementImpossible("layer '" + map.layer + "': all " + std::to_string(K) +
                               " clusters have <= " + std::to_string(cfg.n_min) + " members");

  for (;;) {
    // Smallest live cluster at or below the threshold; ties resolved by lower centroid.
    std::size_t victim = K;
    for (std::size_t k = 0; k < K; ++k)
      if (alive[k] && size[k] <= cfg.n_min &&
          (victim == K || size[k] < size[victim] ||
           (size[k] == size[victim] && centroid[k] < centroid[victim])))
        victim = k;
    if (victim == K) break;

    std::size_t target = K;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      if (!alive[k] || k == victim || size[k] <= cfg.n_min) continue;
      const double d = std::abs(centroid[k] - centroid[victim]);
      if (d < best || (d == best && centroid[k] < centroid[target])) {
        best = d;
        target = k;
      }
    }
    const double total = static_cast<double>(size[target] + size[victim]);
    centroid[target] = (centroid[target] * static_cast<double>(size[target]) +
                        centroid[victim] * static_cast<double>(size[victim])) /
                       total;
    size[target] += size[victim];
    size[victim] = 0;
    alive[victim] = false;
    for (auto& o : owner)
      if (o == victim) o = target;
  }

  // Renumber survivors in centroid order.
  std::vector<std::size_t> survivors;
  for (std::size_t k = 0; k < K; ++k)
    if (alive[k]) survivors.push_back(k);
  std::stable_sort(survivors.begin(), survivors.end(),
                   [&](std::size_t a, std::size_t b) { return centroid[a] < centroid[b]; });
  std::vector<int> renumber(K, -1);
  ClusterMap out;
  out.layer = map.layer;
  out.edges = map.edges;
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    renumber[survivors[i]] = static_cast<int>(i);
    out.centroids.push_back(centroid[survivors[i]]);
    out.sizes.push_back(size[survivors[i]]);
  }
  out.bin_cluster.resize(map.bin_cluster.size());
  for (std::size_t b = 0; b < map.bin_cluster.size(); ++b)
    out.bin_cluster[b] = map.bin_cluster[b] < 0 ? -1 : renumber[owner[map.bin_cluster[b]]];
  out.assignments.resize(map.assignments.size());
  for (std::size_t i = 0; i < map.assignments.size(); ++i)
    out.assignments[i] = static_cast<std::uint32_t>(renumber[owner[map.assignments[i]]]);
  return out;
}

QuantizationReport bit_widths(std::span<const ClusterMap> maps, bool refined) {
  QuantizationReport r;
  r.refined = refined;
  double num = 0.0, den = 0.0;
  for (const auto& m : maps) {
    LayerBits lb;
    lb.layer = m.layer;
    lb.n = m.num_weights();
    lb.clusters = m.num_clusters();
    lb.bits = lb.clusters > 0 ? std::log2(static_cast<double>(lb.clusters)) : 0.0;
    num += static_cast<double>(lb.n) * lb.bits;
    den += static_cast<double>(lb.n);
    r.per_layer.push_back(std::move(lb));
  }
  r.b_bar = den > 0.0 ? num / den : 0.0;
  return r;
}

HeqResult heq_quantize(std::span<const double> weights, int bits, std::string layer) {
  if (bits < 1 || bits > 24) throw InputError("HEQ bits must be in [1, 24]");
  const std::size_t groups = std::size_t{1} << bits;
  const std::size_t n = weights.size();
  if (n < groups)
    throw InputError("HEQ with " + std::to_string(bits) + " bits needs at least " +
                     std::to_string(groups) + " weights, got " + std::to_string(n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] < weights[b]; });

  const std::size_t base = n / groups, extra = n % groups;
  std::vector<std::size_t> group_of(n);
  std::vector<double> means;
  std::vector<double> edges{weights[order.front()]};
  std::size_t pos = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t len = base + (g < extra ? 1 : 0);
    double s = 0.0;
    for (std::size_t k = pos; k < pos + len; ++k) {
      s += weights[order[k]];
      group_of[order[k]] = g;
    }
    means.push_back(s / static_cast<double>(len));
    pos += len;
    if (g + 1 < groups) edges.push_back(0.5 * (weights[order[pos - 1]] + weights[order[pos]]));
  }
  edges.push_back(weights[order.back()]);

  HeqResult res;
  res.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.weights[i] = means[group_of[i]];

  // Groups with identical representatives (ties spanning a boundary) share a cluster.
  ClusterMap& m = res.map;
  m.layer = std::move(layer);
  m.edges = std::move(edges);
  m.bin_cluster.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    if (m.centroids.empty() || means[g] != m.centroids.back()) {
      m.centroids.push_back(means[g]);
      m.sizes.push_back(0);
    }
    m.bin_cluster[g] = static_cast<int>(m.centroids.size() - 1);
  }
  m.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::uint32_t>(m.bin_cluster[group_of[i]]);
    m.assignments[i] = c;
    ++m.sizes[c];
  }
  return res;
}

double accuracy_degradation(double pre_acc, double comp_acc) {
  auto ok = [](double a) { return a >= 0.0 && a <= 100.0; };
  if (!ok(pre_acc) || !ok(comp_acc)) throw InputError("accuracies must lie in [0, 100]");
  return pre_acc - comp_acc;
}

std::size_t distinct_values(std::span<const double> weights) {
  std::vector<double> v(weights.begin(), weights.end());
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace softquant::quant
