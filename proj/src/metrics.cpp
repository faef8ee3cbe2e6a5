#include "roomtwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "roomtwin/dsp.hpp"
#include "roomtwin/fft.hpp"

namespace roomtwin {

DecayCurve schroeder(const Rir& rir) {
  const auto& h = rir.taps;
  const std::size_t n = h.size();
  std::vector<double> tail(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) tail[i] = tail[i + 1] + h[i] * h[i];
  if (!(tail[0] > 0.0)) throw InvalidArgument("schroeder: RIR has zero energy");
  DecayCurve curve;
  curve.time.resize(n);
  curve.level.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    curve.time[i] = static_cast<double>(i) / rir.sample_rate;
    curve.level[i] = tail[i] > 0.0 ? 10.0 * std::log10(tail[i] / tail[0])
                                   : -std::numeric_limits<double>::infinity();
  }
  return curve;
}

double t60(const Rir& rir) {
  const DecayCurve curve = schroeder(rir);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t count = 0;
  bool reached = false;
  for (std::size_t i = 0; i < curve.level.size(); ++i) {
    const double l = curve.level[i];
    if (l <= -35.0) reached = true;
    if (!std::isfinite(l) || l > -5.0 || l < -35.0) continue;
    const double t = curve.time[i];
    sx += t;
    sy += l;
    sxx += t * t;
    sxy += t * l;
    ++count;
  }
  if (!reached || count < 2) throw InsufficientDecayError("t60: decay does not span -5 to -35 dB");
  const double denom = static_cast<double>(count) * sxx - sx * sx;
  const double slope = (static_cast<double>(count) * sxy - sx * sy) / denom;
  if (!(slope < 0.0)) throw InsufficientDecayError("t60: non-decaying fit");
  return -60.0 / slope;
}

double c50(const Rir& rir) {
  const std::size_t split = samples_for(0.05, rir.sample_rate);
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < rir.taps.size(); ++i) {
    (i < split ? early : late) += rir.taps[i] * rir.taps[i];
  }
  if (!(late > 0.0)) return kC50Sentinel;
  if (!(early > 0.0)) return -kC50Sentinel;
  return std::clamp(10.0 * std::log10(early / late), -kC50Sentinel, kC50Sentinel);
}

double edt(const Rir& rir) {
  const DecayCurve curve = schroeder(rir);
  for (std::size_t i = 1; i < curve.level.size(); ++i) {
    if (curve.level[i] > -10.0) continue;
    const double a = curve.level[i - 1], b = curve.level[i];
    double t = curve.time[i];
    if (std::isfinite(b)) t = curve.time[i - 1] + (a + 10.0) / (a - b) / rir.sample_rate;
    return 6.0 * t;
  }
  throw InsufficientDecayError("edt: decay never reaches -10 dB");
}

double env_err(std::span<const double> a, std::span<const double> b) { return dsp::envelope_distance(a, b); }

double amp_err(std::span<const double> a, std::span<const double> b) {
  const std::size_t len = std::max(a.size(), b.size());
  if (len == 0) return 0.0;
  const auto fa = fft::rfft(a, len);
  const auto fb = fft::rfft(b, len);
  double acc = 0.0;
  for (std::size_t k = 0; k < fa.size(); ++k) acc += std::abs(std::abs(fa[k]) - std::abs(fb[k]));
  return acc / static_cast<double>(fa.size());
}

double ms_stft_err(std::span<const double> a, std::span<const double> b) { return dsp::ms_stft_distance(a, b); }

MetricComparison compare(const Rir& a, const Rir& b) {
  if (a.sample_rate != b.sample_rate) throw InvalidArgument("compare: sample rates differ");
  MetricComparison m;
  m.env = env_err(a.taps, b.taps);
  m.amp = amp_err(a.taps, b.taps);
  m.stft = ms_stft_err(a.taps, b.taps);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto diff = [&](double (*f)(const Rir&)) {
    try {
      return std::abs(f(a) - f(b));
    } catch (const InsufficientDecayError&) {
      return nan;
    } catch (const InvalidArgument&) {
      return nan;
    }
  };
  m.t60 = diff(&t60);
  m.c50 = diff(&c50);
  m.edt = diff(&edt);
  return m;
}

}  // namespace roomtwin
