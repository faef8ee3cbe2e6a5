#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "roomtwin/common.hpp"

namespace roomtwin {

// Uniformly sampled audio in a device-local clock. Sample i is at
// t0 + i / sample_rate.
struct Waveform {
  std::vector<double> samples;
  double sample_rate = kSampleRate;
  double t0 = 0.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  double time_at(std::size_t i) const { return t0 + static_cast<double>(i) / sample_rate; }
};

struct ChirpSpec {
  double f_start = 11000.0;
  double f_end = 19000.0;
  double duration = 0.2;
  double amplitude = 1.0;
};

// Probe used by the receiver to start an exchange, and the responder's probe.
inline constexpr ChirpSpec kSyncChirp{11000.0, 19000.0, 0.2, 1.0};
inline constexpr ChirpSpec kMeasureChirp{50.0, 9000.0, 0.2, 1.0};

// Impulse response; tap 0 sits at `onset` seconds after emission.
struct Rir {
  std::vector<double> taps;
  double sample_rate = kSampleRate;
  double onset = 0.0;

  double energy() const;
};

struct DetectionEvent {
  double time = 0.0;
  double corr_coeff = 0.0;
};

inline constexpr double kChirpFade = 0.005;

// Linear FM sweep with a raised-cosine fade-in/out of kChirpFade seconds
// (clamped to half the duration).
Waveform gen_chirp(const ChirpSpec& spec, double sample_rate = kSampleRate);

// Cross-correlation of x with c divided by |c|^2. Output sample i is at the
// time where a copy of c starting there would line up with x, so a unit-gain
// delayed copy of c peaks at 1.0 at its start time.
Waveform matched_filter(const Waveform& x, const Waveform& c);

struct DetectorConfig {
  double threshold = 0.3;
  int decimation = 8;
  std::size_t fir_taps = 129;
};

// Streaming chirp detector: complex mix to the template band centre, FIR
// lowpass, decimation, then a normalized correlation coefficient against the
// identically processed template. Correlation is evaluated in fixed blocks of
// decimated samples at absolute stream positions, so any chunking of the same
// stream yields identical events.
class ChirpDetector {
 public:
  ChirpDetector(const ChirpSpec& spec, double sample_rate, DetectorConfig config = {});

  // The first call fixes the stream origin to chunk.t0; later chunks are
  // assumed contiguous.
  std::vector<DetectionEvent> push(const Waveform& chunk);
  std::vector<DetectionEvent> push(std::span<const double> chunk);
  // Evaluates the remaining complete windows and releases a pending peak.
  std::vector<DetectionEvent> flush();

  double template_duration() const;
  std::size_t template_length() const { return tmpl_.size(); }

 private:
  using Complex = std::complex<double>;

  Complex mix_and_filter(double x, bool emit);
  void run_blocks(bool final, std::vector<DetectionEvent>& out);
  void consider(std::size_t j, double rho, std::vector<DetectionEvent>& out);

  double sample_rate_;
  DetectorConfig config_;
  double centre_;
  std::vector<double> fir_;
  std::vector<Complex> history_;
  std::size_t history_pos_ = 0;
  Complex phasor_{1.0, 0.0};
  Complex phasor_step_;
  std::size_t n_ = 0;

  std::vector<Complex> tmpl_;
  double tmpl_norm_ = 0.0;
  std::size_t fft_size_ = 0;
  std::size_t block_ = 0;
  std::vector<Complex> tmpl_spec_;

  std::vector<Complex> dec_;
  std::size_t dec_base_ = 0;
  std::size_t next_j_ = 0;

  bool origin_set_ = false;
  double origin_ = 0.0;
  std::optional<DetectionEvent> pending_;
  std::size_t pending_j_ = 0;
};

std::vector<DetectionEvent> detect_chirp_stream(std::span<const Waveform> chunks, const ChirpSpec& spec,
                                                double threshold = 0.3);

class NoArrivalError : public Error {
 public:
  using Error::Error;
};

struct PickerConfig {
  // Defaults to 5 x median(|corr|) when unset.
  std::optional<double> h_min;
  double delta_t = 0.002;
  double growth = 2.0;
};

// Direct-path arrival time in corr's clock. Candidates are local maxima of
// |corr| above h_min, scanned in time order. A candidate is skipped when some
// later candidate is at least `growth` times taller (a sharp rise still to
// come means the current one is noise). The first surviving candidate opens a
// window of delta_t; the arrival is the parabolic-refined maximum of |corr|
// in that window, up to where |corr| first falls below half the candidate.
double pick_direct_path(const Waveform& corr, const PickerConfig& config = {});

inline constexpr double kDefaultRirLength = 0.3;

// Matched-filter output of `received` against `chirp`, cropped so tap 0 is the
// sample nearest `arrival` (received's clock). `onset` is the externally
// estimated time of flight stored on the result.
Rir extract_rir(const Waveform& received, const Waveform& chirp, double arrival, double onset,
                double length = kDefaultRirLength);

void write_events_csv(const std::filesystem::path& path, std::span<const DetectionEvent> events);

}  // namespace roomtwin
