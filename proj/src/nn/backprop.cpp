#include <algorithm>
#include <cmath>

#include "softquant/nn.hpp"

namespace softquant::nn {

namespace {

// Row-major views: X is [batch, spec.input_size()], Z is [batch, spec.output_size()].

void dense_forward(const Layer& l, std::span<const double> x, std::size_t batch,
                   std::span<double> z) {
  const std::size_t in = l.spec.in_features, out = l.spec.out_features;
  const auto w = l.weights.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * in;
    double* zb = z.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w.data() + o * in;
      double acc = l.spec.has_bias ? l.bias[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xb[i];
      zb[o] = acc;
    }
  }
}

void dense_backward(const Layer& l, std::span<const double> x, std::size_t batch,
                    std::span<const double> dz, LayerGrad& g, std::span<double> dx) {
  const std::size_t in = l.spec.in_features, out = l.spec.out_features;
  const auto w = l.weights.values();
  auto dw = g.weights.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * in;
    const double* dzb = dz.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double d = dzb[o];
      if (l.spec.has_bias) g.bias[o] += d;
      if (d == 0.0) continue;
      double* dwo = dw.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dwo[i] += d * xb[i];
    }
  }
  if (dx.empty()) return;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dzb = dz.data() + b * out;
    double* dxb = dx.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) dxb[i] = 0.0;
    for (std::size_t o = 0; o < out; ++o) {
      const double d = dzb[o];
      if (d == 0.0) continue;
      const double* wo = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) dxb[i] += d * wo[i];
    }
  }
}

void conv_forward(const Layer& l, std::span<const double> x, std::size_t batch,
                  std::span<double> z) {
  const auto& s = l.spec;
  const std::size_t H = s.height, W = s.width, K = s.kernel, hw = H * W;
  const long pad = static_cast<long>(K / 2);
  const auto w = l.weights.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * s.in_channels * hw;
    double* zb = z.data() + b * s.out_channels * hw;
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      double* zc = zb + co * hw;
      std::fill(zc, zc + hw, s.has_bias ? l.bias[co] : 0.0);
      for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
        const double* xc = xb + ci * hw;
        const double* wk = w.data() + (co * s.in_channels + ci) * K * K;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const double wv = wk[ky * K + kx];
            const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
            for (long y = std::max(0L, -dy); y < std::min<long>(H, H - dy); ++y) {
              const double* xr = xc + (y + dy) * W;
              double* zr = zc + y * W;
              for (long xx = std::max(0L, -dx); xx < std::min<long>(W, W - dx); ++xx)
                zr[xx] += wv * xr[xx + dx];
            }
          }
      }
    }
  }
}

void conv_backward(const Layer& l, std::span<const double> x, std::size_t batch,
                   std::span<const double> dz, LayerGrad& g, std::span<double> dxs) {
  const auto& s = l.spec;
  const std::size_t H = s.height, W = s.width, K = s.kernel, hw = H * W;
  const long pad = static_cast<long>(K / 2);
  const auto w = l.weights.values();
  auto dw = g.weights.values();
  if (!dxs.empty()) std::fill(dxs.begin(), dxs.end(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * s.in_channels * hw;
    const double* dzb = dz.data() + b * s.out_channels * hw;
    double* dxb = dxs.empty() ? nullptr : dxs.data() + b * s.in_channels * hw;
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const double* dzc = dzb + co * hw;
      if (s.has_bias)
        for (std::size_t p = 0; p < hw; ++p) g.bias[co] += dzc[p];
      for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
        const double* xc = xb + ci * hw;
        double* dxc = dxb ? dxb + ci * hw : nullptr;
        const std::size_t wbase = (co * s.in_channels + ci) * K * K;
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
            const double wv = w[wbase + ky * K + kx];
            double acc = 0.0;
            for (long y = std::max(0L, -dy); y < std::min<long>(H, H - dy); ++y) {
              const double* xr = xc + (y + dy) * W;
              const double* dzr = dzc + y * W;
              double* dxr = dxc ? dxc + (y + dy) * W : nullptr;
              for (long xx = std::max(0L, -dx); xx < std::min<long>(W, W - dx); ++xx) {
                acc += dzr[xx] * xr[xx + dx];
                if (dxr) dxr[xx + dx] += dzr[xx] * wv;
              }
            }
            dw[wbase + ky * K + kx] += acc;
          }
      }
    }
  }
}

void layer_forward(const Layer& l, std::span<const double> x, std::size_t batch,
                   std::span<double> z) {
  if (l.spec.kind == LayerKind::dense)
    dense_forward(l, x, batch, z);
  else
    conv_forward(l, x, batch, z);
}

std::size_t batch_rows(const ModelState& model, const Tensor& batch) {
  if (model.layers.empty()) throw ConfigError("model has no layers");
  if (batch.rank() != 2 || batch.dim(1) != model.input_size())
    throw ConfigError("batch shape incompatible with first layer (expected [*, " +
                      std::to_string(model.input_size()) + "])");
  return batch.dim(0);
}

void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) throw InputError("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InputError("label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(classes) + ")");
}

}  // namespace

Tensor forward(const ModelState& model, const Tensor& batch) {
  const std::size_t rows = batch_rows(model, batch);
  std::vector<double> cur(batch.data());
  std::vector<double> next;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const auto& l = model.layers[li];
    next.assign(rows * l.spec.output_size(), 0.0);
    layer_forward(l, cur, rows, next);
    if (li + 1 < model.layers.size())
      for (auto& v : next) v = v > 0.0 ? v : 0.0;
    cur.swap(next);
  }
  return Tensor({rows, model.num_classes()}, std::move(cur));
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw InputError("logits must be rank 2");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  check_labels(labels, rows, classes);
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.values().data() + r * classes;
    const double m = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - m);
    total += m + std::log(s) - z[labels[r]];
  }
  return std::max(0.0, total / static_cast<double>(rows));
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  check_labels(labels, rows, classes);
  if (rows == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.values().data() + r * classes;
    const auto best = static_cast<std::size_t>(std::max_element(z, z + classes) - z);
    hits += best == static_cast<std::size_t>(labels[r]);
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

Gradients zero_gradients(const ModelState& model) {
  Gradients g(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    g[i].weights = Tensor(model.layers[i].weights.shape());
    if (model.layers[i].spec.has_bias) g[i].bias = Tensor(model.layers[i].bias.shape());
  }
  return g;
}

Gradients task_gradient(const ModelState& model, const Tensor& batch,
                        std::span<const int> labels, double* loss_out) {
  const std::size_t rows = batch_rows(model, batch);
  const std::size_t L = model.layers.size();
  check_labels(labels, rows, model.num_classes());

  // acts[i] is the input to layer i; acts[L] holds the logits.
  std::vector<std::vector<double>> acts(L + 1);
  acts[0] = batch.data();
  for (std::size_t li = 0; li < L; ++li) {
    const auto& l = model.layers[li];
    acts[li + 1].assign(rows * l.spec.output_size(), 0.0);
    layer_forward(l, acts[li], rows, acts[li + 1]);
    if (li + 1 < L)
      for (auto& v : acts[li + 1]) v = v > 0.0 ? v : 0.0;
  }

  const std::size_t classes = model.num_classes();
  std::vector<double> dz(rows * classes);
  double loss = 0.0;
  const double inv = rows ? 1.0 / static_cast<double>(rows) : 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = acts[L].data() + r * classes;
    double* d = dz.data() + r * classes;
    const double m = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += (d[c] = std::exp(z[c] - m));
    for (std::size_t c = 0; c < classes; ++c) d[c] = d[c] / s * inv;
    d[labels[r]] -= inv;
    loss += m + std::log(s) - z[labels[r]];
  }
  if (loss_out) *loss_out = std::max(0.0, loss * inv);

  Gradients grads = zero_gradients(model);
  std::vector<double> dx;
  for (std::size_t li = L; li-- > 0;) {
    const auto& l = model.layers[li];
    if (li > 0)
      dx.assign(rows * l.spec.input_size(), 0.0);
    else
      dx.clear();
    if (l.spec.kind == LayerKind::dense)
      dense_backward(l, acts[li], rows, dz, grads[li], dx);
    else
      conv_backward(l, acts[li], rows, dz, grads[li], dx);
    if (li > 0) {
      // ReLU derivative: acts[li] is the post-activation of layer li-1.
      const auto& a = acts[li];
      for (std::size_t k = 0; k < dx.size(); ++k)
        if (a[k] <= 0.0) dx[k] = 0.0;
      dz.swap(dx);
    }
  }
  return grads;
}

void sgd_nesterov_step(ModelState& model, const Gradients& grads, double lr, double momentum) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (grads.size() != model.layers.size()) throw ConfigError("gradient/model layer mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].weights.size() != model.layers[i].weights.size() ||
        grads[i].bias.size() != model.layers[i].bias.size())
      throw ConfigError("gradient shape mismatch in layer '" + model.layers[i].spec.name + "'");
    for (double g : grads[i].weights.values())
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in layer '" + model.layers[i].spec.name + "'");
    for (double g : grads[i].bias.values())
      if (!std::isfinite(g))
        throw NumericError("non-finite bias gradient in layer '" + model.layers[i].spec.name + "'");
  }
  auto update = [&](Tensor& theta, Tensor& v, const Tensor& g) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = momentum * v[k] - lr * g[k];
      theta[k] += momentum * v[k] - lr * g[k];
    }
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& l = model.layers[i];
    update(l.weights, l.velocity, grads[i].weights);
    if (l.spec.has_bias) update(l.bias, l.bias_velocity, grads[i].bias);
  }
}

}  // namespace softquant::nn
