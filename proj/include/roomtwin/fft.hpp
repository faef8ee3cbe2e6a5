#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace roomtwin::fft {

using Complex = std::complex<double>;

std::size_t next_pow2(std::size_t n);

// Real-to-half-complex transform of x zero-padded (or truncated) to n points.
// Returns n/2 + 1 bins, unnormalized.
std::vector<Complex> rfft(std::span<const double> x, std::size_t n);

// Inverse of rfft, normalized by 1/n. Imaginary parts of the DC and Nyquist
// bins are ignored.
std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n);

// Full complex transforms of length n (input zero-padded). inverse() is
// normalized by 1/n.
std::vector<Complex> forward(std::span<const Complex> x, std::size_t n);
std::vector<Complex> inverse(std::span<const Complex> x, std::size_t n);

}  // namespace roomtwin::fft
