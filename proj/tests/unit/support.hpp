#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "softquant/nn.hpp"
#include "softquant/rng.hpp"

namespace testing {

inline double rel_err(double a, double b, double floor = 0.0) {
  const double d = std::max({std::abs(a), std::abs(b), floor});
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

inline std::vector<double> normal_vector(std::size_t n, double sd, softquant::Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

// Small MLP with random biases so ReLU kinks are unlikely to sit on a sample.
inline softquant::nn::ModelState small_mlp(std::uint64_t seed, std::size_t in = 6,
                                           std::size_t hidden = 7, std::size_t classes = 4) {
  using namespace softquant::nn;
  auto m = make_model({dense("fc1", in, hidden), dense("fc2", hidden, hidden),
                       dense("fc3", hidden, classes)},
                      seed);
  softquant::Rng rng(seed ^ 0xb1a5);
  for (auto& l : m.layers)
    for (auto& b : l.bias.values()) b = rng.uniform(-0.3, 0.3);
  return m;
}

inline softquant::Tensor random_batch(std::size_t rows, std::size_t cols, softquant::Rng& rng) {
  softquant::Tensor t({rows, cols});
  for (auto& x : t.values()) x = rng.normal();
  return t;
}

inline std::vector<int> random_labels(std::size_t rows, std::size_t classes, softquant::Rng& rng) {
  std::vector<int> y(rows);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

}  // namespace testing
