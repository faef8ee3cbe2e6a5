#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "roomtwin/dsp.hpp"
#include "roomtwin/fft.hpp"
#include "roomtwin/raytrace.hpp"
#include "roomtwin/signals.hpp"

using namespace roomtwin;

namespace {

std::size_t argmax_abs(const std::vector<double>& v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) - v.begin());
}

// Zero-crossing frequency estimate over [i0, i1).
double crossing_frequency(const std::vector<double>& x, std::size_t i0, std::size_t i1, double fs) {
  std::vector<double> crossings;
  for (std::size_t i = i0; i + 1 < i1; ++i) {
    if ((x[i] <= 0.0) != (x[i + 1] <= 0.0)) crossings.push_back(i + x[i] / (x[i] - x[i + 1]));
  }
  return 0.5 * fs * static_cast<double>(crossings.size() - 1) / (crossings.back() - crossings.front());
}

Waveform shifted(const Waveform& c, std::size_t delay, double gain, std::size_t total) {
  Waveform x;
  x.samples.assign(total, 0.0);
  for (std::size_t i = 0; i < c.samples.size() && i + delay < total; ++i) x.samples[i + delay] += gain * c.samples[i];
  return x;
}

Waveform spike_trace(std::size_t n, std::initializer_list<std::pair<double, double>> peaks, double fs = kSampleRate) {
  // Symmetric three-sample peaks at (time, height).
  Waveform w;
  w.sample_rate = fs;
  w.samples.assign(n, 0.0);
  for (const auto& [t, h] : peaks) {
    const auto i = static_cast<std::size_t>(std::llround(t * fs));
    w.samples[i] = h;
    w.samples[i - 1] = std::max(w.samples[i - 1], 0.5 * h);
    w.samples[i + 1] = std::max(w.samples[i + 1], 0.5 * h);
  }
  return w;
}

}  // namespace

TEST(GenChirp, SyncChirpLengthAndMidpointFrequency) {
  const Waveform c = gen_chirp(kSyncChirp);
  ASSERT_EQ(c.samples.size(), 9600u);
  EXPECT_DOUBLE_EQ(c.sample_rate, 48000.0);
  const double f = crossing_frequency(c.samples, 4800 - 48, 4800 + 48, c.sample_rate);
  EXPECT_NEAR(f, 15000.0, 150.0);
  for (double v : c.samples) EXPECT_LE(std::abs(v), 1.0 + 1e-12);
}

TEST(GenChirp, DegenerateSweepIsATone) {
  const Waveform c = gen_chirp({1000.0, 1000.0, 0.1, 1.0});
  ASSERT_EQ(c.samples.size(), 4800u);
  // Outside the fades the waveform repeats every 48 samples at unit amplitude.
  const std::size_t fade = samples_for(kChirpFade, kSampleRate);
  double peak = 0.0;
  for (std::size_t i = fade + 1; i + 48 < c.samples.size() - fade; ++i) {
    EXPECT_NEAR(c.samples[i + 48], c.samples[i], 1e-9);
    peak = std::max(peak, std::abs(c.samples[i]));
  }
  EXPECT_NEAR(peak, 1.0, 1e-3);
}

TEST(GenChirp, StftRidgeSlope) {
  const Waveform c = gen_chirp(kMeasureChirp);
  const std::size_t window = 512, hop = 128;
  const auto w = dsp::hann_window(window);
  std::vector<double> t, f;
  for (std::size_t start = 0; start + window <= c.samples.size(); start += hop) {
    std::vector<double> frame(window);
    for (std::size_t i = 0; i < window; ++i) frame[i] = w[i] * c.samples[start + i];
    const auto spec = fft::rfft(frame, 8192);
    std::size_t best = 0;
    for (std::size_t k = 0; k < spec.size(); ++k) {
      if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
    }
    t.push_back((start + window / 2.0) / c.sample_rate);
    f.push_back(best * c.sample_rate / 8192.0);
  }
  // Drop frames overlapping the fades.
  const std::size_t skip = 4;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const std::size_t n = t.size() - 2 * skip;
  for (std::size_t i = skip; i < t.size() - skip; ++i) {
    sx += t[i];
    sy += f[i];
    sxx += t[i] * t[i];
    sxy += t[i] * f[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double expected = (9000.0 - 50.0) / 0.2;
  EXPECT_NEAR(slope, expected, 0.02 * expected);
}

TEST(GenChirp, RejectsFrequencyAboveNyquist) {
  EXPECT_THROW(gen_chirp({11000.0, 30000.0, 0.2, 1.0}), InvalidArgument);
  EXPECT_THROW(gen_chirp({11000.0, 19000.0, 0.0, 1.0}), InvalidArgument);
}

TEST(MatchedFilter, PureDelayPeaksAtLag) {
  const Waveform c = gen_chirp(kSyncChirp);
  const Waveform x = shifted(c, 480, 1.0, 20000);
  const Waveform y = matched_filter(x, c);
  const std::size_t i = argmax_abs(y.samples);
  EXPECT_NEAR(y.time_at(i), 0.010, 0.5 / kSampleRate);
  EXPECT_NEAR(y.samples[i], 1.0, 1e-9);
}

TEST(MatchedFilter, TwoTapChannelRatio) {
  const Waveform c = gen_chirp(kMeasureChirp);
  Waveform x = shifted(c, 0, 1.0, 20000);
  const Waveform echo = shifted(c, 240, 0.5, 20000);
  for (std::size_t i = 0; i < x.samples.size(); ++i) x.samples[i] += echo.samples[i];
  const Waveform y = matched_filter(x, c);
  auto value_at = [&](double t) { return y.samples[static_cast<std::size_t>(std::llround((t - y.t0) * kSampleRate))]; };
  EXPECT_NEAR(value_at(0.0), 1.0, 0.05);
  EXPECT_NEAR(value_at(0.005), 0.5, 0.05);
  // Nothing else comes close to the echo outside the two main lobes.
  for (std::size_t i = 0; i < y.samples.size(); ++i) {
    const double t = y.time_at(i);
    if (std::abs(t) > 1e-3 && std::abs(t - 0.005) > 1e-3) EXPECT_LT(std::abs(y.samples[i]), 0.05);
  }
}

TEST(MatchedFilter, SilenceGivesZero) {
  const Waveform c = gen_chirp(kSyncChirp);
  Waveform x;
  x.samples.assign(5000, 0.0);
  const Waveform y = matched_filter(x, c);
  for (double v : y.samples) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(MatchedFilter, RejectsMismatchedRates) {
  Waveform x, c = gen_chirp(kSyncChirp);
  x.samples.assign(100, 0.0);
  x.sample_rate = 44100.0;
  EXPECT_THROW(matched_filter(x, c), InvalidArgument);
}

TEST(MatchedFilter, SelfCorrelationPeaksAtZeroLagProperty) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Waveform c;
    c.samples.resize(50 + 37 * trial);
    for (double& v : c.samples) v = n(rng);
    c.t0 = 0.25 * trial;
    const Waveform y = matched_filter(c, c);
    const std::size_t i = argmax_abs(y.samples);
    EXPECT_NEAR(y.time_at(i), c.t0, 1e-12);
    EXPECT_NEAR(y.samples[i], 1.0, 1e-6);
  }
}

namespace {

// 1.2 s stream: white noise plus the sync chirp 5 m away.
Waveform received_chirp(double snr_db, std::uint64_t seed, double* truth) {
  const Waveform c = gen_chirp(kSyncChirp);
  const double delay = 0.3 + 5.0 / kSpeedOfSound;
  const auto start = static_cast<std::size_t>(std::llround(delay * kSampleRate));
  *truth = start / kSampleRate;
  Waveform x = shifted(c, start, 1.0 / 5.0, samples_for(1.2, kSampleRate));
  double p = 0.0;
  for (double v : c.samples) p += v * v / 25.0;
  p /= static_cast<double>(c.samples.size());
  const double sigma = std::sqrt(p / std::pow(10.0, snr_db / 10.0));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : x.samples) v += n(rng);
  return x;
}

std::vector<DetectionEvent> detect_in_chunks(const Waveform& x, std::size_t chunk, const ChirpSpec& spec) {
  std::vector<Waveform> chunks;
  for (std::size_t i = 0; i < x.samples.size(); i += chunk) {
    Waveform w;
    w.t0 = x.time_at(i);
    w.samples.assign(x.samples.begin() + static_cast<std::ptrdiff_t>(i),
                     x.samples.begin() + static_cast<std::ptrdiff_t>(std::min(x.samples.size(), i + chunk)));
    chunks.push_back(std::move(w));
  }
  return detect_chirp_stream(chunks, spec);
}

}  // namespace

TEST(Detection, SingleEventAtTwentyDb) {
  double truth = 0.0;
  const Waveform x = received_chirp(20.0, 1, &truth);
  const auto events = detect_in_chunks(x, 4096, kSyncChirp);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_LE(std::abs(events[0].time - truth), 0.5e-3);
  EXPECT_GT(events[0].corr_coeff, 0.3);
  EXPECT_LE(std::abs(events[0].corr_coeff), 1.0 + 1e-9);
}

TEST(Detection, OutOfBandToneIsIgnored) {
  Waveform x;
  x.samples.resize(samples_for(2.0, kSampleRate));
  for (std::size_t i = 0; i < x.samples.size(); ++i) x.samples[i] = std::sin(2.0 * kPi * 5000.0 * i / kSampleRate);
  EXPECT_TRUE(detect_in_chunks(x, 4800, kSyncChirp).empty());
}

TEST(Detection, CleanTemplateDetectsItself) {
  const Waveform c = gen_chirp(kSyncChirp);
  const Waveform x = shifted(c, 4800, 1.0, 4800 + c.samples.size() + 14400);
  const auto events = detect_in_chunks(x, 1000, kSyncChirp);
  ASSERT_EQ(events.size(), 1u);
  EXPECT_GE(events[0].corr_coeff, 0.99);
  EXPECT_NEAR(events[0].time, 0.1, 0.5e-3);
}

TEST(Detection, AmplitudeInvariance) {
  double truth = 0.0;
  const Waveform x = received_chirp(15.0, 2, &truth);
  const auto ref = detect_in_chunks(x, 3000, kSyncChirp);
  ASSERT_FALSE(ref.empty());
  for (double alpha : {1e-3, 0.5, 40.0}) {
    Waveform y = x;
    for (double& v : y.samples) v *= alpha;
    const auto ev = detect_in_chunks(y, 3000, kSyncChirp);
    ASSERT_EQ(ev.size(), ref.size());
    for (std::size_t i = 0; i < ev.size(); ++i) {
      EXPECT_DOUBLE_EQ(ev[i].time, ref[i].time);
      EXPECT_NEAR(ev[i].corr_coeff, ref[i].corr_coeff, 1e-6);
    }
  }
}

TEST(Detection, ChunkingDoesNotChangeEvents) {
  double truth = 0.0;
  Waveform x = received_chirp(12.0, 3, &truth);
  // A second chirp half a second later.
  const Waveform second = shifted(gen_chirp(kSyncChirp), samples_for(0.85, kSampleRate), 0.2, x.samples.size());
  for (std::size_t i = 0; i < x.samples.size(); ++i) x.samples[i] += second.samples[i];
  const auto whole = detect_in_chunks(x, x.samples.size(), kSyncChirp);
  ASSERT_EQ(whole.size(), 2u);
  for (std::size_t chunk : {1u, 333u, 4096u, 12345u}) {
    const auto ev = detect_in_chunks(x, chunk, kSyncChirp);
    ASSERT_EQ(ev.size(), whole.size()) << "chunk " << chunk;
    for (std::size_t i = 0; i < ev.size(); ++i) {
      EXPECT_LE(std::abs(ev[i].time - whole[i].time), 8.0 / kSampleRate);
      EXPECT_NEAR(ev[i].corr_coeff, whole[i].corr_coeff, 1e-9);
    }
  }
}

TEST(Detection, EventsAreSeparatedByTemplateDuration) {
  Waveform x;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  const Waveform c = gen_chirp(kSyncChirp);
  x = shifted(c, 1000, 1.0, samples_for(3.0, kSampleRate));
  for (std::size_t k = 1; k < 6; ++k) {
    const Waveform more = shifted(c, 1000 + k * 12000, 1.0, x.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) x.samples[i] += more.samples[i];
  }
  for (double& v : x.samples) v += n(rng);
  const auto ev = detect_in_chunks(x, 2048, kSyncChirp);
  for (std::size_t i = 1; i < ev.size(); ++i) EXPECT_GE(ev[i].time - ev[i - 1].time, 0.2 - 1e-9);
}

TEST(PickDirectPath, SinglePeak) {
  PickerConfig cfg;
  cfg.h_min = 0.05;
  EXPECT_NEAR(pick_direct_path(spike_trace(2000, {{0.012, 1.0}}), cfg), 0.012, 1e-12);
}

TEST(PickDirectPath, NoiseSpikeBeforeLineOfSight) {
  PickerConfig cfg;
  cfg.h_min = 0.05;
  cfg.growth = 2.0;
  EXPECT_NEAR(pick_direct_path(spike_trace(2000, {{0.008, 0.2}, {0.012, 1.0}}), cfg), 0.012, 1e-12);
}

TEST(PickDirectPath, EchoOutsideWindowDoesNotDisplaceLineOfSight) {
  PickerConfig cfg;
  cfg.h_min = 0.05;
  EXPECT_NEAR(pick_direct_path(spike_trace(2000, {{0.012, 1.0}, {0.012 + 2 * cfg.delta_t, 0.6}}), cfg), 0.012,
              1e-12);
}

TEST(PickDirectPath, WeakEchoInsideWindowIsNotPicked) {
  PickerConfig cfg;
  cfg.h_min = 0.05;
  EXPECT_NEAR(pick_direct_path(spike_trace(2000, {{0.012, 1.0}, {0.013, 0.6}}), cfg), 0.012, 1e-12);
}

TEST(PickDirectPath, NoCandidateThrows) {
  PickerConfig cfg;
  cfg.h_min = 2.0;
  EXPECT_THROW(pick_direct_path(spike_trace(2000, {{0.012, 1.0}}), cfg), NoArrivalError);
  EXPECT_THROW(pick_direct_path(Waveform{}), InvalidArgument);
}

TEST(PickDirectPath, TranslationEquivariance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 0.01);
  Waveform w = spike_trace(3000, {{0.010, 0.3}, {0.0201, 1.0}, {0.025, 0.7}});
  for (double& v : w.samples) v += n(rng);
  const double a = pick_direct_path(w);
  for (double delta : {-3.0, 0.0007, 12.5}) {
    Waveform s = w;
    s.t0 += delta;
    EXPECT_NEAR(pick_direct_path(s), a + delta, 1e-9);
  }
  // Whole-sample shift of the content.
  Waveform s = w;
  s.samples.insert(s.samples.begin(), 37, 0.0);
  EXPECT_NEAR(pick_direct_path(s), a + 37 / kSampleRate, 1e-12);
}

TEST(ExtractRir, FreeFieldSinglePath) {
  const Waveform c = gen_chirp(kMeasureChirp);
  const double d = 3.43;
  const Waveform x = shifted(c, 480, 1.0 / d, 48000);
  const Rir rir = extract_rir(x, c, 0.010, d / kSpeedOfSound);
  EXPECT_EQ(rir.taps.size(), samples_for(0.3, kSampleRate));
  EXPECT_EQ(argmax_abs(rir.taps), 0u);
  EXPECT_NEAR(rir.taps[0], 1.0 / d, 1e-6);
  EXPECT_NEAR(rir.onset, 0.010, 1e-12);
}

TEST(ExtractRir, LoopbackIsAnImpulse) {
  const Waveform c = gen_chirp(kMeasureChirp);
  const Waveform x = shifted(c, 0, 1.0, 30000);
  const Rir rir = extract_rir(x, c, 0.0, 0.0);
  EXPECT_NEAR(rir.taps[0], 1.0, 1e-9);
  for (std::size_t n = 48; n < rir.taps.size(); ++n) EXPECT_LT(std::abs(rir.taps[n]), 0.05);
}

TEST(ExtractRir, PureDelayAndGainProperty) {
  const Waveform c = gen_chirp(kMeasureChirp);
  for (const auto& [delay, gain] : {std::pair{1234u, 0.37}, std::pair{17u, 2.5}, std::pair{9000u, 0.01}}) {
    Waveform x = shifted(c, delay, gain, 40000);
    x.t0 = -0.75;
    const Rir rir = extract_rir(x, c, x.time_at(delay), 0.02);
    EXPECT_NEAR(rir.taps[0], gain, 0.05 * gain);
    for (std::size_t n = 48; n < rir.taps.size(); ++n) EXPECT_LT(std::abs(rir.taps[n]), 0.05 * gain);
  }
}

TEST(ExtractRir, ShoeboxTapsMatchPathDelays) {
  ShoeboxOptions box;
  box.spectrum = MaterialSpectrum::flat(0.9);
  const Scene scene = make_shoebox(box);
  Pose tx, rx;
  tx.position = Vec3(1.1, 1.7, 1.3);
  rx.position = Vec3(2.9, 3.2, 1.8);
  const auto paths = enumerate_paths(scene, tx.position, rx.position, 1);
  ASSERT_EQ(paths.size(), 7u);
  RenderOptions opt;
  opt.length = 0.1;
  opt.max_bounces = 1;
  opt.origin = 0.0;
  const Rir h = render_rir(scene, tx, rx, AcousticParams::from_scene(scene), opt);
  const Waveform c = gen_chirp(kMeasureChirp);
  Waveform x;
  x.samples = dsp::convolve(c.samples, h.taps);
  const double direct = paths[0].length / kSpeedOfSound;
  const Rir rir = extract_rir(x, c, direct, direct, 0.08);
  std::vector<double> delays;
  for (const auto& p : paths) delays.push_back((p.length / kSpeedOfSound - direct) * kSampleRate);
  for (double tau : delays) {
    bool isolated = true;
    for (double other : delays) isolated = isolated && (other == tau || std::abs(other - tau) > 12.0);
    if (!isolated) continue;
    const auto centre = static_cast<long>(std::llround(tau));
    long best = centre;
    for (long n = std::max(0L, centre - 4); n <= centre + 4; ++n) {
      if (std::abs(rir.taps[n]) > std::abs(rir.taps[best])) best = n;
    }
    EXPECT_LE(std::abs(best - tau), 1.0) << "path delay " << tau;
  }
}

TEST(ExtractRir, RejectsArrivalOutsideRecording) {
  const Waveform c = gen_chirp(kMeasureChirp);
  const Waveform x = shifted(c, 0, 1.0, 20000);
  EXPECT_THROW(extract_rir(x, c, 5.0, 0.0), InvalidArgument);
  EXPECT_THROW(extract_rir(x, c, -0.1, 0.0), InvalidArgument);
}
