#include "softquant/fft.hpp"

#include <bit>
#include <cmath>
#include <map>
#include <stdexcept>

namespace softquant::fft {

namespace {

// Twiddles e^{-2 pi i k / n} for k < n/2, cached per size and thread.
const std::vector<std::complex<double>>& twiddles(std::size_t n) {
  thread_local std::map<std::size_t, std::vector<std::complex<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> t(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    t[k] = {std::cos(a), std::sin(a)};
  }
  return cache.emplace(n, std::move(t)).first->second;
}

}  // namespace

std::size_t next_pow2(std::size_t n) { return n <= 1 ? 1 : std::bit_ceil(n); }

void transform(std::span<std::complex<double>> data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  if (!std::has_single_bit(n)) throw std::invalid_argument("fft size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  const auto& tw = twiddles(n);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2, stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        std::complex<double> w = tw[k * stride];
        if (inverse) w = std::conj(w);
        const auto u = data[start + k];
        const auto v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / static_cast<double>(n);
    for (auto& x : data) x *= s;
  }
}

std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  if (b.size() != n) throw std::invalid_argument("convolution inputs differ in length");
  // Pack a + i*b, transform once, then split the spectra using Hermitian symmetry.
  std::vector<std::complex<double>> z(n);
  for (std::size_t k = 0; k < n; ++k) z[k] = {a[k], b[k]};
  transform(z, false);
  std::vector<std::complex<double>> prod(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto zk = z[k];
    const auto zc = std::conj(z[(n - k) % n]);
    const auto fa = 0.5 * (zk + zc);
    const auto fb = std::complex<double>(0.0, -0.5) * (zk - zc);
    prod[k] = fa * fb;
  }
  transform(prod, true);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = prod[k].real();
  return out;
}

}  // namespace softquant::fft
