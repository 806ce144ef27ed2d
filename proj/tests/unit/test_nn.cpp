#include <doctest.h>

#include <cmath>

#include "softquant/errors.hpp"
#include "softquant/nn.hpp"
#include "support.hpp"

using namespace softquant;
using namespace softquant::nn;

namespace {

// Plain-loop reference forward pass: dense is z = W x + b, conv is a
// zero-padded cross-correlation over CHW input.
std::vector<double> reference_layer(const Layer& l, const std::vector<double>& x) {
  const auto& s = l.spec;
  std::vector<double> z(s.output_size(), 0.0);
  if (s.kind == LayerKind::dense) {
    for (std::size_t o = 0; o < s.out_features; ++o) {
      z[o] = s.has_bias ? l.bias[o] : 0.0;
      for (std::size_t i = 0; i < s.in_features; ++i)
        z[o] += l.weights[o * s.in_features + i] * x[i];
    }
    return z;
  }
  const long H = static_cast<long>(s.height), W = static_cast<long>(s.width);
  const long K = static_cast<long>(s.kernel), p = K / 2;
  for (std::size_t co = 0; co < s.out_channels; ++co)
    for (long y = 0; y < H; ++y)
      for (long xx = 0; xx < W; ++xx) {
        double acc = s.has_bias ? l.bias[co] : 0.0;
        for (std::size_t ci = 0; ci < s.in_channels; ++ci)
          for (long ky = 0; ky < K; ++ky)
            for (long kx = 0; kx < K; ++kx) {
              const long sy = y + ky - p, sx = xx + kx - p;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              acc += l.weights[((co * s.in_channels + ci) * K + ky) * K + kx] *
                     x[(ci * H + sy) * W + sx];
            }
        z[(co * H + y) * W + xx] = acc;
      }
  return z;
}

std::vector<double> reference_forward(const ModelState& m, const std::vector<double>& x0) {
  auto x = x0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    x = reference_layer(m.layers[i], x);
    if (i + 1 < m.layers.size())
      for (auto& v : x) v = std::max(0.0, v);
  }
  return x;
}

void check_forward(const ModelState& m, std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  const auto batch = testing::random_batch(rows, m.input_size(), rng);
  const auto out = forward(m, batch);
  REQUIRE(out.dim(0) == rows);
  REQUIRE(out.dim(1) == m.num_classes());
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> x(batch.values().begin() + r * m.input_size(),
                          batch.values().begin() + (r + 1) * m.input_size());
    const auto ref = reference_forward(m, x);
    for (std::size_t c = 0; c < ref.size(); ++c)
      CHECK(out[r * m.num_classes() + c] == doctest::Approx(ref[c]).epsilon(1e-12));
  }
}

ModelState small_cnn(std::uint64_t seed) {
  auto m = make_model({conv2d("conv1", 2, 3, 3, 5, 4), conv2d("conv2", 3, 2, 3, 5, 4),
                       dense("fc1", 2 * 5 * 4, 3)},
                      seed);
  Rng rng(seed + 17);
  for (auto& l : m.layers)
    for (auto& b : l.bias.values()) b = rng.uniform(-0.2, 0.2);
  return m;
}

double batch_loss(const ModelState& m, const Tensor& x, const std::vector<int>& y) {
  return cross_entropy(forward(m, x), y);
}

// Central finite differences at step 1e-5 against the analytic gradient.
void check_gradient(ModelState m, std::uint64_t seed) {
  Rng rng(seed);
  const auto x = testing::random_batch(5, m.input_size(), rng);
  const auto y = testing::random_labels(5, m.num_classes(), rng);
  double loss = 0.0;
  const auto g = task_gradient(m, x, y, &loss);
  CHECK(loss == doctest::Approx(batch_loss(m, x, y)).epsilon(1e-14));
  const double step = 1e-5;
  std::size_t checked = 0, bad = 0;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    for (int part = 0; part < 2; ++part) {
      auto& t = part == 0 ? m.layers[li].weights : m.layers[li].bias;
      const auto& gt = part == 0 ? g[li].weights : g[li].bias;
      for (std::size_t k = 0; k < t.size(); ++k) {
        const double orig = t[k];
        t[k] = orig + step;
        const double up = batch_loss(m, x, y);
        t[k] = orig - step;
        const double down = batch_loss(m, x, y);
        t[k] = orig;
        const double fd = (up - down) / (2 * step);
        ++checked;
        if (testing::rel_err(gt[k], fd, 1e-6) > 1e-5) ++bad;
      }
    }
  }
  CHECK(checked == m.parameter_count());
  CHECK(bad == 0);
}

}  // namespace

TEST_CASE("dense forward matches plain matrix products") {
  for (std::uint64_t s = 1; s <= 5; ++s) check_forward(testing::small_mlp(s), 4, s * 11);
}

TEST_CASE("conv forward matches direct cross-correlation") {
  for (std::uint64_t s = 1; s <= 3; ++s) check_forward(small_cnn(s), 3, s * 13);
}

TEST_CASE("layer without bias") {
  auto m = make_model({dense("a", 3, 2, false), dense("b", 2, 2)}, 4);
  CHECK(m.layers[0].bias.empty());
  check_forward(m, 3, 9);
  check_gradient(m, 5);
}

TEST_CASE("cross entropy fixtures") {
  Tensor one({1, 3}, {1.0, 2.0, 3.0});
  const int y2[] = {2};
  CHECK(cross_entropy(one, y2) == doctest::Approx(0.4076059644443804).epsilon(1e-14));

  Tensor two({2, 3}, {0.5, -1.0, 2.0, 3.0, 0.0, -3.0});
  const int y0[] = {0, 0};
  CHECK(cross_entropy(two, y0) == doctest::Approx(0.8961285300900776).epsilon(1e-14));

  // Large logits stay finite through the log-sum-exp shift.
  Tensor big({1, 3}, {1000.0, 0.0, -1000.0});
  const int y1[] = {1};
  CHECK(cross_entropy(big, y1) == doctest::Approx(1000.0).epsilon(1e-14));
}

TEST_CASE("accuracy counts argmax hits") {
  Tensor logits({4, 2}, {1, 0, 0, 1, 2, 3, 5, -1});
  const int y[] = {0, 1, 0, 0};
  CHECK(accuracy(logits, y) == doctest::Approx(0.75));
}

TEST_CASE("task gradient matches finite differences on an MLP") {
  for (std::uint64_t s = 1; s <= 4; ++s) check_gradient(testing::small_mlp(s), 100 + s);
}

TEST_CASE("task gradient matches finite differences on a CNN") {
  for (std::uint64_t s = 1; s <= 2; ++s) check_gradient(small_cnn(s), 200 + s);
}

TEST_CASE("Nesterov step follows the lookahead recurrence") {
  // f(x) = a x^2 / 2. Reference: x' = y - lr f'(y), y' = x' + mu (x' - x).
  const double a = 1.7, lr = 0.05, mu = 0.9;
  auto m = make_model({dense("only", 1, 1, false)}, 1);
  m.layers[0].weights[0] = 2.0;
  double x = 2.0, y = 2.0;
  for (int t = 0; t < 50; ++t) {
    auto g = zero_gradients(m);
    g[0].weights[0] = a * m.layers[0].weights[0];
    sgd_nesterov_step(m, g, lr, mu);
    const double xn = y - lr * a * y;
    y = xn + mu * (xn - x);
    x = xn;
    CHECK(m.layers[0].weights[0] == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("Nesterov with zero momentum is plain gradient descent") {
  auto m = testing::small_mlp(3);
  const auto before = m;
  Rng rng(4);
  const auto x = testing::random_batch(6, m.input_size(), rng);
  const auto y = testing::random_labels(6, m.num_classes(), rng);
  const auto g = task_gradient(m, x, y);
  sgd_nesterov_step(m, g, 0.1, 0.0);
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    for (std::size_t k = 0; k < m.layers[l].weights.size(); ++k)
      CHECK(m.layers[l].weights[k] ==
            doctest::Approx(before.layers[l].weights[k] - 0.1 * g[l].weights[k]).epsilon(1e-15));
}

TEST_CASE("optimizer rejects bad hyperparameters and non-finite gradients") {
  auto m = testing::small_mlp(1);
  const auto before = m;
  auto g = zero_gradients(m);
  CHECK_THROWS_AS(sgd_nesterov_step(m, g, 0.0, 0.9), ConfigError);
  CHECK_THROWS_AS(sgd_nesterov_step(m, g, 0.1, 1.0), ConfigError);
  g[1].weights[3] = std::nan("");
  CHECK_THROWS_AS(sgd_nesterov_step(m, g, 0.1, 0.9), NumericError);
  CHECK(m == before);
}

TEST_CASE("model construction is seeded and validated") {
  const auto a = testing::small_mlp(7), b = testing::small_mlp(7), c = testing::small_mlp(8);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.parameter_count() == 6 * 7 + 7 + 7 * 7 + 7 + 7 * 4 + 4);
  CHECK_THROWS_AS(make_model({dense("a", 3, 4), dense("b", 5, 2)}, 1), ConfigError);
  CHECK_THROWS_AS(make_model({dense("a", 3, 4), dense("a", 4, 2)}, 1), ConfigError);
  CHECK_THROWS_AS(make_model({conv2d("c", 1, 1, 2, 4, 4)}, 1), ConfigError);
  CHECK_THROWS_AS(a.layer("missing"), InputError);
}

TEST_CASE("forward rejects mismatched input and labels") {
  const auto m = testing::small_mlp(1);
  Rng rng(1);
  CHECK_THROWS_AS(forward(m, testing::random_batch(2, 5, rng)), ConfigError);
  const auto x = testing::random_batch(2, 6, rng);
  const std::vector<int> bad{0, 9};
  CHECK_THROWS_AS(task_gradient(m, x, bad), InputError);
}
