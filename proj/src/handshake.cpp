#include "roomtwin/handshake.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "roomtwin/dsp.hpp"
#include "roomtwin/parallel.hpp"
#include "roomtwin/raytrace.hpp"

namespace roomtwin {

void ClockModel::validate() const {
  if (!std::isfinite(offset)) throw InvalidArgument("clock offset must be finite");
  if (!(std::abs(drift_ppm) < 1000.0)) throw InvalidArgument("clock drift must be below 1000 ppm");
}

double tof_from_record(const HandshakeRecord& rec) {
  if (!(rec.t4 > rec.t1)) throw InvalidExchangeError("handshake record has t4 <= t1");
  if (!(rec.t3 >= rec.t2)) throw InvalidExchangeError("handshake record has t3 < t2");
  const double tof = ((rec.t4 - rec.t1) - (rec.t3 - rec.t2)) / 2.0;
  if (!(tof >= 0.0)) throw InvalidExchangeError("handshake record yields a negative time of flight");
  return tof;
}

Trajectory Trajectory::fixed(const Pose& pose) { return Trajectory{{0.0}, {pose}}; }

Pose Trajectory::at(double t) const {
  if (times.empty() || times.size() != poses.size()) throw InvalidArgument("trajectory is empty or malformed");
  if (t <= times.front()) return poses.front();
  if (t >= times.back()) return poses.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin());
  const double u = (t - times[i - 1]) / (times[i] - times[i - 1]);
  Pose p;
  p.position = (1.0 - u) * poses[i - 1].position + u * poses[i].position;
  p.orientation = poses[i - 1].orientation.slerp(u, poses[i].orientation).normalized();
  return p;
}

void SessionConfig::validate() const {
  if (!(duration > 0.0)) throw InvalidArgument("session duration must be positive");
  if (!(interval >= 2.0 * std::max(c1.duration, c2.duration))) {
    throw InvalidArgument("chirp interval must be at least twice the chirp duration");
  }
  if (!(latency_min >= 0.0 && latency_max >= latency_min)) throw InvalidArgument("bad response latency range");
  if (max_bounces < 0) throw InvalidArgument("max_bounces must be non-negative");
  for (const auto* traj : {&tx, &rx}) {
    if (traj->times.empty() || traj->times.size() != traj->poses.size()) {
      throw InvalidArgument("trajectory needs matching times and poses");
    }
    if (!std::is_sorted(traj->times.begin(), traj->times.end())) {
      throw InvalidArgument("trajectory times must be sorted");
    }
    for (const auto& p : traj->poses) p.validate();
  }
}

namespace {

double chirp_power(const Waveform& chirp) {
  const double e = std::inner_product(chirp.samples.begin(), chirp.samples.end(), chirp.samples.begin(), 0.0);
  return e / static_cast<double>(chirp.samples.size());
}

double noise_sigma(const std::optional<double>& snr_db, double power) {
  if (!snr_db) return 0.0;
  return std::sqrt(power / std::pow(10.0, *snr_db / 10.0));
}

}  // namespace

SessionPlan plan_session(const Scene& scene, const SessionConfig& config, const ClockModel& rx_clock,
                         const ClockModel& tx_clock) {
  config.validate();
  rx_clock.validate();
  tx_clock.validate();
  const double c = scene.speed_of_sound;
  const double p1 = chirp_power(gen_chirp(config.c1));
  const double p2 = chirp_power(gen_chirp(config.c2));
  const double tail = config.latency_max + config.c1.duration + config.c2.duration + config.rir_length + 0.1;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> latency(config.latency_min, config.latency_max);

  SessionPlan plan;
  for (int e = 0;; ++e) {
    const double g1 = config.first_exchange + e * config.interval;
    if (g1 + tail > config.duration) break;
    ExchangeTruth x;
    x.index = e;
    x.c1_emit_global = g1;
    x.rx_c1 = config.rx.at(g1);
    x.tx_c1 = config.tx.at(g1);
    if (!scene.contains(x.rx_c1.position) || !scene.contains(x.tx_c1.position)) {
      throw InvalidArgument("trajectory leaves the scene at t = " + std::to_string(g1) + " s");
    }
    const double d1 = (x.tx_c1.position - x.rx_c1.position).norm();
    if (!(d1 > 0.0)) throw InvalidArgument("devices coincide at t = " + std::to_string(g1) + " s");
    x.tof_forward = d1 / c;
    x.record.t1 = rx_clock.local(g1);
    x.record.t2 = tx_clock.local(g1 + x.tof_forward);
    x.latency = latency(rng);
    x.record.t3 = x.record.t2 + x.latency;
    x.c2_emit_global = tx_clock.global(x.record.t3);
    x.rx_c2 = config.rx.at(x.c2_emit_global);
    x.tx_c2 = config.tx.at(x.c2_emit_global);
    if (!scene.contains(x.rx_c2.position) || !scene.contains(x.tx_c2.position)) {
      throw InvalidArgument("trajectory leaves the scene at t = " + std::to_string(x.c2_emit_global) + " s");
    }
    const double d2 = (x.tx_c2.position - x.rx_c2.position).norm();
    if (!(d2 > 0.0)) throw InvalidArgument("devices coincide during an exchange");
    x.tof_backward = d2 / c;
    x.record.t4 = rx_clock.local(x.c2_emit_global + x.tof_backward);
    x.tof = 0.5 * (x.tof_forward + x.tof_backward);
    x.snr_sigma_tx = noise_sigma(config.snr_db, p1 / (d1 * d1));
    x.snr_sigma_rx = noise_sigma(config.snr_db, p2 / (d2 * d2));
    plan.exchanges.push_back(x);
  }
  return plan;
}

namespace {

struct Arrival {
  std::size_t start = 0;
  std::vector<double> samples;
};

// Chirp emitted at global time g_emit as heard by a device with `clock`,
// aligned to that device's sample grid.
Arrival synthesize_arrival(const Scene& scene, const PathTracer& tracer, const AcousticParams& params,
                           const Waveform& chirp, const SessionConfig& config, const ClockModel& clock, double t0,
                           double g_emit, const Pose& emitter, const Pose& receiver) {
  const double pos = (clock.local(g_emit) - t0) * kSampleRate;
  const double n0 = std::floor(pos);
  RenderOptions opt;
  opt.length = config.rir_length;
  opt.origin = -(pos - n0) / kSampleRate;
  const auto paths = tracer.enumerate(emitter.position, receiver.position, config.max_bounces);
  const Rir rir = render_paths(paths, scene, params, emitter, receiver, opt);
  return Arrival{static_cast<std::size_t>(std::max(0.0, n0)), dsp::convolve(chirp.samples, rir.taps)};
}

void add_noise(Waveform& rec, const ClockModel& clock, const SessionConfig& config, const SessionPlan& plan,
               bool at_tx, std::uint64_t stream) {
  const std::size_t n = rec.samples.size();
  if (plan.exchanges.empty()) return;
  std::vector<double> sigma(n, 0.0);
  auto index_of = [&](double g) {
    const double i = std::ceil((clock.local(g) - rec.t0) * kSampleRate);
    return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(n)));
  };
  const auto& ex = plan.exchanges;
  for (std::size_t e = 0; e < ex.size(); ++e) {
    const double s = at_tx ? ex[e].snr_sigma_tx : ex[e].snr_sigma_rx;
    const std::size_t from = e == 0 ? 0 : index_of(ex[e].c1_emit_global);
    const std::size_t to = e + 1 == ex.size() ? n : index_of(ex[e + 1].c1_emit_global);
    std::fill(sigma.begin() + from, sigma.begin() + to, s);
  }
  const double p1 = chirp_power(gen_chirp(config.c1));
  const double p2 = chirp_power(gen_chirp(config.c2));
  for (const auto& b : config.bursts) {
    // Level relative to the direct-path power of the exchange containing the burst.
    std::size_t e = 0;
    while (e + 1 < ex.size() && ex[e + 1].c1_emit_global <= b.start) ++e;
    const double d = at_tx ? (ex[e].tx_c1.position - ex[e].rx_c1.position).norm()
                           : (ex[e].tx_c2.position - ex[e].rx_c2.position).norm();
    const double power = (at_tx ? p1 : p2) / (d * d) * std::pow(10.0, b.level_db / 10.0);
    for (std::size_t i = index_of(b.start); i < index_of(b.start + b.duration); ++i) {
      sigma[i] = std::sqrt(sigma[i] * sigma[i] + power);
    }
  }
  std::seed_seq seq{config.seed, stream};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = normal(rng);
    rec.samples[i] += sigma[i] * z;
  }
}

}  // namespace

SessionRecording simulate_session(const Scene& scene, const SessionConfig& config, const ClockModel& rx_clock,
                                  const ClockModel& tx_clock) {
  SessionRecording out;
  out.plan = plan_session(scene, config, rx_clock, tx_clock);
  out.rx.t0 = rx_clock.local(0.0);
  out.tx.t0 = tx_clock.local(0.0);
  out.rx.samples.assign(samples_for(config.duration * rx_clock.rate(), kSampleRate), 0.0);
  out.tx.samples.assign(samples_for(config.duration * tx_clock.rate(), kSampleRate), 0.0);

  const Waveform c1 = gen_chirp(config.c1);
  const Waveform c2 = gen_chirp(config.c2);
  const AcousticParams params = AcousticParams::from_scene(scene);
  const PathTracer tracer(scene);
  const auto& ex = out.plan.exchanges;
  std::vector<Arrival> at_tx(ex.size()), at_rx(ex.size());
  parallel_for(ex.size(), [&](std::size_t e) {
    at_tx[e] = synthesize_arrival(scene, tracer, params, c1, config, tx_clock, out.tx.t0, ex[e].c1_emit_global,
                                  ex[e].rx_c1, ex[e].tx_c1);
    at_rx[e] = synthesize_arrival(scene, tracer, params, c2, config, rx_clock, out.rx.t0, ex[e].c2_emit_global,
                                  ex[e].tx_c2, ex[e].rx_c2);
  });
  auto mix = [](Waveform& rec, const Arrival& a) {
    for (std::size_t i = 0; i < a.samples.size() && a.start + i < rec.samples.size(); ++i) {
      rec.samples[a.start + i] += a.samples[i];
    }
  };
  for (std::size_t e = 0; e < ex.size(); ++e) {
    mix(out.tx, at_tx[e]);
    mix(out.rx, at_rx[e]);
    out.t1_log.push_back(ex[e].record.t1);
    out.t3_log.push_back(ex[e].record.t3);
  }
  add_noise(out.tx, tx_clock, config, out.plan, true, 2);
  add_noise(out.rx, rx_clock, config, out.plan, false, 1);
  return out;
}

double refine_arrival(const Waveform& recording, const Waveform& chirp, double coarse, const PickerConfig& picker) {
  const double fs = recording.sample_rate;
  const std::size_t nc = chirp.samples.size();
  const double lo = coarse - 0.02;
  const double hi = coarse + 0.03;
  const auto clamp_index = [&](double t) {
    const double i = (t - recording.t0) * fs;
    return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(recording.samples.size())));
  };
  const std::size_t i0 = clamp_index(lo);
  const std::size_t i1 = std::min(recording.samples.size(), clamp_index(hi) + nc + 1);
  if (i1 <= i0 + nc) throw NoArrivalError("refine_arrival: window outside the recording");
  Waveform segment;
  segment.sample_rate = fs;
  segment.t0 = recording.t0 + static_cast<double>(i0) / fs;
  segment.samples.assign(recording.samples.begin() + static_cast<std::ptrdiff_t>(i0),
                         recording.samples.begin() + static_cast<std::ptrdiff_t>(i1));
  Waveform corr = matched_filter(segment, chirp);
  // Keep only lags where the chirp fully overlaps the segment.
  const std::size_t first = nc - 1;
  const std::size_t count = segment.samples.size() - nc + 1;
  Waveform full;
  full.sample_rate = fs;
  full.t0 = corr.t0 + static_cast<double>(first) / fs;
  full.samples.assign(corr.samples.begin() + static_cast<std::ptrdiff_t>(first),
                      corr.samples.begin() + static_cast<std::ptrdiff_t>(first + count));
  // Band-pass probes correlate into a carrier under an envelope; picking
  // on |corr| would snap to carrier cycles.
  full.samples = dsp::analytic_envelope(full.samples);
  return pick_direct_path(full, picker);
}

namespace {

std::vector<DetectionEvent> detect_all(const Waveform& rec, const ChirpSpec& spec, const DetectorConfig& config) {
  ChirpDetector detector(spec, rec.sample_rate, config);
  std::vector<DetectionEvent> events;
  const std::size_t chunk = 1 << 16;
  Waveform first;
  first.sample_rate = rec.sample_rate;
  first.t0 = rec.t0;
  first.samples.assign(rec.samples.begin(), rec.samples.begin() + std::min(chunk, rec.samples.size()));
  auto got = detector.push(first);
  events.insert(events.end(), got.begin(), got.end());
  for (std::size_t i = first.samples.size(); i < rec.samples.size(); i += chunk) {
    const std::size_t len = std::min(chunk, rec.samples.size() - i);
    got = detector.push(std::span<const double>(rec.samples.data() + i, len));
    events.insert(events.end(), got.begin(), got.end());
  }
  got = detector.flush();
  events.insert(events.end(), got.begin(), got.end());
  return events;
}

std::optional<double> best_in(const std::vector<DetectionEvent>& events, double lo, double hi, bool closed_lo) {
  std::optional<double> best;
  double best_corr = -1.0;
  for (const auto& ev : events) {
    const bool above = closed_lo ? ev.time >= lo : ev.time > lo;
    if (above && ev.time < hi && ev.corr_coeff > best_corr) {
      best_corr = ev.corr_coeff;
      best = ev.time;
    }
  }
  return best;
}

}  // namespace

ProtocolReport run_protocol(const Waveform& rx_recording, const Waveform& tx_recording,
                            std::span<const double> t1_log, std::span<const double> t3_log,
                            const ProtocolConfig& config) {
  if (t1_log.size() != t3_log.size()) throw InvalidArgument("run_protocol: t1 and t3 logs differ in length");
  ProtocolReport report;
  report.attempted = static_cast<int>(t1_log.size());
  if (t1_log.empty()) return report;

  const Waveform c1 = gen_chirp(config.c1, tx_recording.sample_rate);
  const Waveform c2 = gen_chirp(config.c2, rx_recording.sample_rate);
  const auto c1_events = detect_all(tx_recording, config.c1, config.detector);
  const auto c2_events = detect_all(rx_recording, config.c2, config.detector);
  report.c1_detections = c1_events.size();
  report.c2_detections = c2_events.size();

  std::vector<std::optional<ExchangeResult>> slots(t1_log.size());
  std::vector<char> invalid(t1_log.size(), 0);
  parallel_for(t1_log.size(), [&](std::size_t e) {
    const double t1 = t1_log[e], t3 = t3_log[e];
    const auto coarse2 = best_in(c1_events, t3 - config.latency_max - config.pairing_margin, t3, true);
    const auto coarse4 = best_in(c2_events, t1, t1 + config.interval, false);
    if (!coarse2 || !coarse4) return;
    ExchangeResult r;
    r.index = static_cast<int>(e);
    try {
      r.record = {t1, refine_arrival(tx_recording, c1, *coarse2, config.picker), t3,
                  refine_arrival(rx_recording, c2, *coarse4, config.picker)};
    } catch (const NoArrivalError&) {
      return;
    }
    try {
      r.tof = tof_from_record(r.record);
    } catch (const InvalidExchangeError&) {
      invalid[e] = 1;
      return;
    }
    r.rir = extract_rir(rx_recording, c2, r.record.t4, r.tof, config.rir_length);
    slots[e] = std::move(r);
  });
  for (std::size_t e = 0; e < slots.size(); ++e) {
    if (slots[e]) {
      report.exchanges.push_back(std::move(*slots[e]));
    } else if (invalid[e]) {
      ++report.invalid;
    } else {
      ++report.dropped;
    }
  }
  return report;
}

}  // namespace roomtwin
