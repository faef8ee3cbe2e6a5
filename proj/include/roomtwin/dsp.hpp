#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace roomtwin::dsp {

// Linear convolution, length a.size() + b.size() - 1.
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

// Cross-correlation r[l] = sum_n x[n + l] * c[n] for lags
// l = -(c.size() - 1) .. x.size() - 1. Element 0 holds the most negative lag.
std::vector<double> cross_correlate(std::span<const double> x, std::span<const double> c);

// Same as cross_correlate restricted to lags 0 .. count - 1.
std::vector<double> cross_correlate_lags(std::span<const double> x, std::span<const double> c,
                                         std::size_t count);

std::vector<double> hann_window(std::size_t n);

// Windowed-sinc lowpass (Hamming), cutoff as a fraction of the sample rate.
std::vector<double> fir_lowpass(std::size_t taps, double cutoff_norm);

// Magnitude of the analytic signal, computed on a zero-padded FFT grid and
// truncated to x.size().
std::vector<double> analytic_envelope(std::span<const double> x);

// Magnitude STFT with a periodic Hann window and hop window/4. The signal is
// zero-padded at the end so the last frame is complete. Returned row-major as
// frames x (window/2 + 1).
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> mag;
};
Spectrogram stft_magnitude(std::span<const double> x, std::size_t window);

inline constexpr std::size_t kStftWindows[] = {64, 256, 1024};

// Sum over windows {64, 256, 1024} of the mean absolute spectrogram
// magnitude difference. Inputs are zero-padded to a common length.
double ms_stft_distance(std::span<const double> a, std::span<const double> b);

// Mean absolute difference of analytic envelopes over the padded length.
double envelope_distance(std::span<const double> a, std::span<const double> b);

// Loss value plus gradient with respect to x (same length as x). target must
// have x.size() samples.
double ms_stft_loss_grad(std::span<const double> x, std::span<const double> target,
                         std::span<double> grad);
double envelope_loss_grad(std::span<const double> x, std::span<const double> target,
                          std::span<double> grad);

}  // namespace roomtwin::dsp
