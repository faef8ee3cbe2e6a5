#include "roomtwin/dsp.hpp"

#include <algorithm>
#include <cmath>

#include "roomtwin/common.hpp"
#include "roomtwin/fft.hpp"

namespace roomtwin::dsp {

using fft::Complex;

std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  const std::size_t n = fft::next_pow2(len);
  auto fa = fft::rfft(a, n);
  auto fb = fft::rfft(b, n);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto out = fft::irfft(fa, n);
  out.resize(len);
  return out;
}

std::vector<double> cross_correlate(std::span<const double> x, std::span<const double> c) {
  if (x.empty() || c.empty()) return {};
  const std::size_t len = x.size() + c.size() - 1;
  const std::size_t n = fft::next_pow2(len);
  auto fx = fft::rfft(x, n);
  auto fc = fft::rfft(c, n);
  for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= std::conj(fc[k]);
  auto circ = fft::irfft(fx, n);
  std::vector<double> out(len);
  const std::size_t neg = c.size() - 1;
  for (std::size_t j = 0; j < neg; ++j) out[j] = circ[n - neg + j];
  for (std::size_t l = 0; l < x.size(); ++l) out[neg + l] = circ[l];
  return out;
}

std::vector<double> cross_correlate_lags(std::span<const double> x, std::span<const double> c,
                                         std::size_t count) {
  std::vector<double> out(count, 0.0);
  if (x.empty() || c.empty() || count == 0) return out;
  const std::size_t used = std::min(x.size(), count + c.size() - 1);
  const std::size_t n = fft::next_pow2(used + c.size());
  auto fx = fft::rfft(x.first(used), n);
  auto fc = fft::rfft(c, n);
  for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= std::conj(fc[k]);
  auto circ = fft::irfft(fx, n);
  std::copy_n(circ.begin(), std::min(count, used), out.begin());
  return out;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

std::vector<double> fir_lowpass(std::size_t taps, double cutoff_norm) {
  std::vector<double> h(taps);
  const double mid = 0.5 * static_cast<double>(taps - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps; ++i) {
    const double x = static_cast<double>(i) - mid;
    const double sinc = x == 0.0 ? 2.0 * cutoff_norm
                                 : std::sin(2.0 * kPi * cutoff_norm * x) / (kPi * x);
    const double win =
        0.54 - 0.46 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(taps - 1));
    h[i] = sinc * win;
    sum += h[i];
  }
  for (double& v : h) v /= sum;
  return h;
}

namespace {

// One-sided analytic-signal weights on an n-point grid.
std::vector<double> analytic_weights(std::size_t n) {
  std::vector<double> u(n, 0.0);
  u[0] = 1.0;
  for (std::size_t k = 1; k < n / 2; ++k) u[k] = 2.0;
  u[n / 2] = 1.0;
  return u;
}

std::vector<Complex> analytic_signal(std::span<const double> x, std::size_t n) {
  std::vector<Complex> in(x.begin(), x.end());
  auto spec = fft::forward(in, n);
  const auto u = analytic_weights(n);
  for (std::size_t k = 0; k < n; ++k) spec[k] *= u[k];
  auto a = fft::inverse(spec, n);
  a.resize(x.size());
  return a;
}

std::size_t analytic_grid(std::size_t len) { return fft::next_pow2(2 * std::max<std::size_t>(len, 2)); }

std::vector<double> padded(std::span<const double> x, std::size_t len) {
  std::vector<double> out(len, 0.0);
  std::copy(x.begin(), x.end(), out.begin());
  return out;
}

std::size_t frame_count(std::size_t len, std::size_t window) {
  const std::size_t hop = window / 4;
  if (len <= window) return 1;
  return 1 + (len - window + hop - 1) / hop;
}

}  // namespace

std::vector<double> analytic_envelope(std::span<const double> x) {
  if (x.empty()) return {};
  auto a = analytic_signal(x, analytic_grid(x.size()));
  std::vector<double> env(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) env[i] = std::abs(a[i]);
  return env;
}

Spectrogram stft_magnitude(std::span<const double> x, std::size_t window) {
  const std::size_t hop = window / 4;
  Spectrogram s;
  s.frames = frame_count(x.size(), window);
  s.bins = window / 2 + 1;
  s.mag.resize(s.frames * s.bins);
  const auto w = hann_window(window);
  std::vector<double> frame(window);
  for (std::size_t f = 0; f < s.frames; ++f) {
    for (std::size_t i = 0; i < window; ++i) {
      const std::size_t idx = f * hop + i;
      frame[i] = idx < x.size() ? x[idx] * w[i] : 0.0;
    }
    auto spec = fft::rfft(frame, window);
    for (std::size_t b = 0; b < s.bins; ++b) s.mag[f * s.bins + b] = std::abs(spec[b]);
  }
  return s;
}

double ms_stft_distance(std::span<const double> a, std::span<const double> b) {
  const std::size_t len = std::max(a.size(), b.size());
  const auto pa = padded(a, len);
  const auto pb = padded(b, len);
  double total = 0.0;
  for (std::size_t window : kStftWindows) {
    const auto sa = stft_magnitude(pa, window);
    const auto sb = stft_magnitude(pb, window);
    double acc = 0.0;
    for (std::size_t i = 0; i < sa.mag.size(); ++i) acc += std::abs(sa.mag[i] - sb.mag[i]);
    total += acc / static_cast<double>(sa.mag.size());
  }
  return total;
}

double envelope_distance(std::span<const double> a, std::span<const double> b) {
  const std::size_t len = std::max(a.size(), b.size());
  if (len == 0) return 0.0;
  const auto ea = analytic_envelope(padded(a, len));
  const auto eb = analytic_envelope(padded(b, len));
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) acc += std::abs(ea[i] - eb[i]);
  return acc / static_cast<double>(len);
}

double ms_stft_loss_grad(std::span<const double> x, std::span<const double> target,
                         std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  double total = 0.0;
  for (std::size_t window : kStftWindows) {
    const std::size_t hop = window / 4;
    const std::size_t frames = frame_count(x.size(), window);
    const std::size_t bins = window / 2 + 1;
    const double norm = 1.0 / static_cast<double>(frames * bins);
    const auto w = hann_window(window);
    std::vector<double> fx(window), fy(window);
    std::vector<Complex> adj(bins);
    double acc = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t i = 0; i < window; ++i) {
        const std::size_t idx = f * hop + i;
        fx[i] = idx < x.size() ? x[idx] * w[i] : 0.0;
        fy[i] = idx < target.size() ? target[idx] * w[i] : 0.0;
      }
      const auto sx = fft::rfft(fx, window);
      const auto sy = fft::rfft(fy, window);
      for (std::size_t b = 0; b < bins; ++b) {
        const double mx = std::abs(sx[b]);
        const double diff = mx - std::abs(sy[b]);
        acc += std::abs(diff);
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        Complex g = mx > 0.0 ? sign * norm * sx[b] / mx : Complex{};
        // Scale so that irfft reproduces Re(sum_b g_b e^{i 2 pi b n / W}).
        const double scale = (b == 0 || b == bins - 1) ? static_cast<double>(window)
                                                       : 0.5 * static_cast<double>(window);
        adj[b] = g * scale;
      }
      const auto back = fft::irfft(adj, window);
      for (std::size_t i = 0; i < window; ++i) {
        const std::size_t idx = f * hop + i;
        if (idx < grad.size()) grad[idx] += w[i] * back[i];
      }
    }
    total += acc * norm;
  }
  return total;
}

double envelope_loss_grad(std::span<const double> x, std::span<const double> target,
                          std::span<double> grad) {
  const std::size_t len = x.size();
  std::fill(grad.begin(), grad.end(), 0.0);
  if (len == 0) return 0.0;
  const std::size_t n = analytic_grid(len);
  const auto a = analytic_signal(x, n);
  const auto b = analytic_signal(target, n);
  const double norm = 1.0 / static_cast<double>(len);
  std::vector<Complex> v(len);
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    const double ma = std::abs(a[i]);
    const double diff = ma - std::abs(b[i]);
    acc += std::abs(diff);
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    v[i] = ma > 0.0 ? sign * norm * std::conj(a[i]) / ma : Complex{};
  }
  // A = F^-1 diag(u) F with real u, so A^H v = conj(A conj(v)) and the real
  // gradient is Re(A conj(v)).
  auto spec = fft::forward(v, n);
  const auto u = analytic_weights(n);
  for (std::size_t k = 0; k < n; ++k) spec[k] *= u[k];
  const auto back = fft::inverse(spec, n);
  for (std::size_t i = 0; i < len; ++i) grad[i] = back[i].real();
  return acc * norm;
}

}  // namespace roomtwin::dsp
