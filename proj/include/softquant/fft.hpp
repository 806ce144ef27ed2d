#pragma once

#include <complex>
#include <span>
#include <vector>

namespace softquant::fft {

/// In-place iterative radix-2 FFT. `data.size()` must be a power of two.
/// `inverse` applies the conjugate transform including the 1/n scale.
void transform(std::span<std::complex<double>> data, bool inverse);

/// Circular convolution of two real sequences of equal power-of-two length,
/// computed with a single packed complex transform pair.
std::vector<double> circular_convolve(std::span<const double> a, std::span<const double> b);

std::size_t next_pow2(std::size_t n);

}  // namespace softquant::fft
