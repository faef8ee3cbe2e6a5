#include "roomtwin/signals.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "roomtwin/dsp.hpp"
#include "roomtwin/fft.hpp"

namespace roomtwin {

double Rir::energy() const {
  return std::inner_product(taps.begin(), taps.end(), taps.begin(), 0.0);
}

Waveform gen_chirp(const ChirpSpec& spec, double sample_rate) {
  const double nyquist = 0.5 * sample_rate;
  if (!(sample_rate > 0.0)) throw InvalidArgument("gen_chirp: sample rate must be positive");
  if (!(spec.duration > 0.0)) throw InvalidArgument("gen_chirp: duration must be positive");
  if (!(spec.f_start > 0.0) || !(spec.f_end > 0.0)) {
    throw InvalidArgument("gen_chirp: frequencies must be positive");
  }
  if (spec.f_start > nyquist || spec.f_end > nyquist) {
    std::ostringstream msg;
    msg << "gen_chirp: sweep " << spec.f_start << " Hz -> " << spec.f_end
        << " Hz exceeds the Nyquist frequency " << nyquist << " Hz at fs = " << sample_rate << " Hz";
    throw InvalidArgument(msg.str());
  }

  const std::size_t n = samples_for(spec.duration, sample_rate);
  const double rate = (spec.f_end - spec.f_start) / spec.duration;
  const auto fade = static_cast<std::size_t>(
      std::min(kChirpFade, 0.5 * spec.duration) * sample_rate + 0.5);

  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double phase = 2.0 * kPi * (spec.f_start * t + 0.5 * rate * t * t);
    double gain = spec.amplitude;
    const std::size_t from_end = n - 1 - i;
    const std::size_t edge = std::min(i, from_end);
    if (fade > 0 && edge < fade) {
      gain *= 0.5 - 0.5 * std::cos(kPi * static_cast<double>(edge) / static_cast<double>(fade));
    }
    out.samples[i] = gain * std::sin(phase);
  }
  return out;
}

Waveform matched_filter(const Waveform& x, const Waveform& c) {
  if (x.sample_rate != c.sample_rate) {
    throw InvalidArgument("matched_filter: sample rates differ");
  }
  const double norm = std::inner_product(c.samples.begin(), c.samples.end(), c.samples.begin(), 0.0);
  if (!(norm > 0.0)) throw InvalidArgument("matched_filter: template has zero energy");
  Waveform out;
  out.sample_rate = x.sample_rate;
  out.samples = dsp::cross_correlate(x.samples, c.samples);
  for (double& v : out.samples) v /= norm;
  out.t0 = x.t0 - static_cast<double>(c.samples.size() - 1) / x.sample_rate;
  return out;
}

// ---------------------------------------------------------------------------
// Streaming detection

ChirpDetector::ChirpDetector(const ChirpSpec& spec, double sample_rate, DetectorConfig config)
    : sample_rate_(sample_rate), config_(config) {
  if (config_.decimation < 1) throw InvalidArgument("ChirpDetector: decimation must be >= 1");
  if (config_.fir_taps < 3) throw InvalidArgument("ChirpDetector: need at least 3 FIR taps");
  const Waveform chirp = gen_chirp(spec, sample_rate);

  centre_ = 0.5 * (spec.f_start + spec.f_end);
  const double decimated_rate = sample_rate / config_.decimation;
  const double half_band = 0.5 * std::abs(spec.f_end - spec.f_start);
  const double cutoff = std::clamp(half_band, 0.05 * decimated_rate, 0.4 * decimated_rate);
  fir_ = dsp::fir_lowpass(config_.fir_taps, cutoff / sample_rate);
  history_.assign(fir_.size(), Complex{});
  phasor_step_ = std::polar(1.0, -2.0 * kPi * centre_ / sample_rate);

  // Template through the identical pipeline, including the FIR tail.
  for (std::size_t i = 0; i < chirp.samples.size() + fir_.size(); ++i) {
    const double x = i < chirp.samples.size() ? chirp.samples[i] : 0.0;
    const bool emit = i % static_cast<std::size_t>(config_.decimation) == 0;
    const Complex y = mix_and_filter(x, emit);
    if (emit) tmpl_.push_back(y);
  }
  for (const auto& v : tmpl_) tmpl_norm_ += std::norm(v);
  tmpl_norm_ = std::sqrt(tmpl_norm_);

  fft_size_ = fft::next_pow2(4 * tmpl_.size());
  block_ = fft_size_ - tmpl_.size() + 1;
  tmpl_spec_ = fft::forward(tmpl_, fft_size_);
  for (auto& v : tmpl_spec_) v = std::conj(v);

  // Reset the pipeline state for the real stream.
  std::fill(history_.begin(), history_.end(), Complex{});
  history_pos_ = 0;
  phasor_ = {1.0, 0.0};
  n_ = 0;
}

double ChirpDetector::template_duration() const {
  return static_cast<double>(tmpl_.size() * config_.decimation) / sample_rate_;
}

ChirpDetector::Complex ChirpDetector::mix_and_filter(double x, bool emit) {
  history_[history_pos_] = x * phasor_;
  phasor_ *= phasor_step_;
  if (++n_ % 4096 == 0) phasor_ /= std::abs(phasor_);
  Complex y{};
  if (emit) {
    const std::size_t taps = fir_.size();
    std::size_t idx = history_pos_;
    for (std::size_t i = 0; i < taps; ++i) {
      y += fir_[i] * history_[idx];
      idx = idx == 0 ? taps - 1 : idx - 1;
    }
  }
  history_pos_ = (history_pos_ + 1) % history_.size();
  return y;
}

std::vector<DetectionEvent> ChirpDetector::push(const Waveform& chunk) {
  if (chunk.sample_rate != sample_rate_) {
    throw InvalidArgument("ChirpDetector: chunk sample rate differs from detector");
  }
  if (!origin_set_) {
    origin_ = chunk.t0;
    origin_set_ = true;
  }
  return push(std::span<const double>(chunk.samples));
}

std::vector<DetectionEvent> ChirpDetector::push(std::span<const double> chunk) {
  origin_set_ = true;
  const auto d = static_cast<std::size_t>(config_.decimation);
  for (double x : chunk) {
    const bool emit = n_ % d == 0;
    const Complex y = mix_and_filter(x, emit);
    if (emit) dec_.push_back(y);
  }
  std::vector<DetectionEvent> out;
  run_blocks(false, out);
  return out;
}

std::vector<DetectionEvent> ChirpDetector::flush() {
  std::vector<DetectionEvent> out;
  run_blocks(true, out);
  if (pending_) {
    out.push_back(*pending_);
    pending_.reset();
  }
  return out;
}

void ChirpDetector::run_blocks(bool final, std::vector<DetectionEvent>& out) {
  const std::size_t m = tmpl_.size();
  while (true) {
    const std::size_t total = dec_base_ + dec_.size();
    std::size_t count = 0;
    if (!final) {
      if (total < next_j_ + block_ + m - 1) break;
      count = block_;
    } else {
      if (next_j_ + m > total) break;
      count = std::min(block_, total - m + 1 - next_j_);
    }
    const std::size_t offset = next_j_ - dec_base_;
    const std::size_t seg_len = std::min(count + m - 1, dec_.size() - offset);
    std::span<const Complex> segment(dec_.data() + offset, seg_len);

    auto spec = fft::forward(segment, fft_size_);
    for (std::size_t k = 0; k < fft_size_; ++k) spec[k] *= tmpl_spec_[k];
    const auto corr = fft::inverse(spec, fft_size_);

    std::vector<double> prefix(seg_len + 1, 0.0);
    for (std::size_t i = 0; i < seg_len; ++i) prefix[i + 1] = prefix[i] + std::norm(segment[i]);
    const double floor = 1e-20 * prefix[seg_len];

    for (std::size_t jj = 0; jj < count; ++jj) {
      const double energy = prefix[jj + m] - prefix[jj];
      double rho = 0.0;
      if (energy > floor && energy > 0.0) {
        rho = std::min(1.0, std::abs(corr[jj]) / (tmpl_norm_ * std::sqrt(energy)));
      }
      consider(next_j_ + jj, rho, out);
    }
    next_j_ += count;
    dec_.erase(dec_.begin(), dec_.begin() + static_cast<std::ptrdiff_t>(next_j_ - dec_base_));
    dec_base_ = next_j_;
  }
}

void ChirpDetector::consider(std::size_t j, double rho, std::vector<DetectionEvent>& out) {
  if (pending_ && j >= pending_j_ + tmpl_.size()) {
    out.push_back(*pending_);
    pending_.reset();
  }
  if (rho >= config_.threshold && (!pending_ || rho > pending_->corr_coeff)) {
    const double t = origin_ + static_cast<double>(j * config_.decimation) / sample_rate_;
    pending_ = DetectionEvent{t, rho};
    pending_j_ = j;
  }
}

std::vector<DetectionEvent> detect_chirp_stream(std::span<const Waveform> chunks, const ChirpSpec& spec,
                                                double threshold) {
  if (chunks.empty()) return {};
  DetectorConfig config;
  config.threshold = threshold;
  ChirpDetector detector(spec, chunks.front().sample_rate, config);
  std::vector<DetectionEvent> events;
  for (const auto& chunk : chunks) {
    auto got = detector.push(chunk);
    events.insert(events.end(), got.begin(), got.end());
  }
  auto tail = detector.flush();
  events.insert(events.end(), tail.begin(), tail.end());
  return events;
}

// ---------------------------------------------------------------------------
// Arrival picking and RIR extraction

double pick_direct_path(const Waveform& corr, const PickerConfig& config) {
  const auto& s = corr.samples;
  if (s.empty()) throw InvalidArgument("pick_direct_path: empty correlation");
  std::vector<double> mag(s.size());
  std::transform(s.begin(), s.end(), mag.begin(), [](double v) { return std::abs(v); });

  double h_min = 0.0;
  if (config.h_min) {
    h_min = *config.h_min;
  } else {
    std::vector<double> tmp = mag;
    auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2);
    std::nth_element(tmp.begin(), mid, tmp.end());
    h_min = 5.0 * *mid;
  }

  std::vector<std::size_t> cand;
  const std::size_t n = mag.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!(mag[i] > h_min)) continue;
    const bool rises = i == 0 || mag[i] > mag[i - 1];
    const bool falls = i + 1 == n || mag[i] >= mag[i + 1];
    if (rises && falls) cand.push_back(i);
  }
  if (cand.empty()) throw NoArrivalError("pick_direct_path: no peak above h_min");

  // Tallest candidate strictly after position k.
  std::vector<double> later(cand.size(), 0.0);
  for (std::size_t k = cand.size() - 1; k-- > 0;) {
    later[k] = std::max(later[k + 1], mag[cand[k + 1]]);
  }
  std::size_t chosen = cand.back();
  for (std::size_t k = 0; k < cand.size(); ++k) {
    if (later[k] < config.growth * mag[cand[k]]) {
      chosen = cand[k];
      break;
    }
  }

  const auto window = static_cast<std::size_t>(config.delta_t * corr.sample_rate + 0.5);
  const std::size_t end = std::min(n - 1, chosen + window);
  // The window refines the chosen lobe only: it ends where |corr| first
  // drops below half the candidate, so a separate, taller echo a few
  // milliseconds later cannot take over.
  std::size_t best = chosen;
  for (std::size_t i = chosen + 1; i <= end && mag[i] >= 0.5 * mag[chosen]; ++i) {
    if (mag[i] > mag[best]) best = i;
  }
  double frac = 0.0;
  if (best > 0 && best + 1 < n) {
    const double a = mag[best - 1], b = mag[best], c = mag[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) frac = std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  return corr.t0 + (static_cast<double>(best) + frac) / corr.sample_rate;
}

Rir extract_rir(const Waveform& received, const Waveform& chirp, double arrival, double onset,
                double length) {
  if (received.sample_rate != chirp.sample_rate) {
    throw InvalidArgument("extract_rir: sample rates differ");
  }
  if (!(length > 0.0)) throw InvalidArgument("extract_rir: length must be positive");
  const double pos = (arrival - received.t0) * received.sample_rate;
  if (!(pos > -0.5) || !(pos < static_cast<double>(received.samples.size()) - 0.5)) {
    throw InvalidArgument("extract_rir: arrival lies outside the recording");
  }
  const auto start = static_cast<std::size_t>(std::llround(pos));
  const std::size_t taps = samples_for(length, received.sample_rate);
  const double norm =
      std::inner_product(chirp.samples.begin(), chirp.samples.end(), chirp.samples.begin(), 0.0);
  if (!(norm > 0.0)) throw InvalidArgument("extract_rir: chirp has zero energy");

  const std::size_t stop = std::min(received.samples.size(), start + taps + chirp.samples.size());
  std::span<const double> segment(received.samples.data() + start, stop - start);
  Rir rir;
  rir.sample_rate = received.sample_rate;
  rir.onset = onset;
  rir.taps = dsp::cross_correlate_lags(segment, chirp.samples, taps);
  for (double& v : rir.taps) v /= norm;
  return rir;
}

void write_events_csv(const std::filesystem::path& path, std::span<const DetectionEvent> events) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "time_s,corr\n" << std::setprecision(17);
  for (const auto& e : events) out << e.time << ',' << e.corr_coeff << '\n';
}

}  // namespace roomtwin
