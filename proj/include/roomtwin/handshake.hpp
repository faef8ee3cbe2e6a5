#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "roomtwin/geometry.hpp"
#include "roomtwin/scene.hpp"
#include "roomtwin/signals.hpp"

namespace roomtwin {

// local = global * (1 + drift_ppm * 1e-6) + offset
struct ClockModel {
  double offset = 0.0;
  double drift_ppm = 0.0;

  void validate() const;
  double rate() const { return 1.0 + drift_ppm * 1e-6; }
  double local(double global) const { return global * rate() + offset; }
  double global(double local) const { return (local - offset) / rate(); }
};

// t1, t4 in the Rx clock; t2, t3 in the Tx clock.
struct HandshakeRecord {
  double t1 = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double t4 = 0.0;
};

class InvalidExchangeError : public Error {
 public:
  using Error::Error;
};

// ((t4 - t1) - (t3 - t2)) / 2. Throws InvalidExchangeError when the record
// violates t4 > t1, t3 >= t2 or yields a negative time of flight.
double tof_from_record(const HandshakeRecord& rec);

// Piecewise-linear positions (slerped orientations) over sorted times;
// clamped outside the sampled range.
struct Trajectory {
  std::vector<double> times;
  std::vector<Pose> poses;

  static Trajectory fixed(const Pose& pose);
  Pose at(double t) const;
};

// Extra noise over [start, start + duration) global seconds, with power
// level_db above the exchange's direct-path chirp power. Used for fault
// injection.
struct NoiseBurst {
  double start = 0.0;
  double duration = 0.0;
  double level_db = 60.0;
};

struct SessionConfig {
  double duration = 20.0;  // seconds of global time
  double first_exchange = 0.25;
  double interval = 2.0;
  double latency_min = 0.05;
  double latency_max = 0.15;
  std::optional<double> snr_db = 20.0;  // unset: noiseless
  ChirpSpec c1 = kSyncChirp;
  ChirpSpec c2 = kMeasureChirp;
  int max_bounces = 3;
  double rir_length = kDefaultRirLength;
  Trajectory tx;
  Trajectory rx;
  std::vector<NoiseBurst> bursts;
  std::uint64_t seed = 1;

  void validate() const;
};

// Ground truth for one exchange. Global times plus the exact local
// timestamps each device would observe.
struct ExchangeTruth {
  int index = 0;
  double c1_emit_global = 0.0;
  double c2_emit_global = 0.0;
  double tof_forward = 0.0;  // c1, Rx -> Tx
  double tof_backward = 0.0;  // c2, Tx -> Rx
  double tof = 0.0;           // mean of the two
  double latency = 0.0;       // Tx-local t3 - t2
  HandshakeRecord record;     // exact timestamps, no detection error
  Pose tx_c1, rx_c1, tx_c2, rx_c2;
  double snr_sigma_tx = 0.0;  // noise std at Tx during this exchange
  double snr_sigma_rx = 0.0;
};

struct SessionPlan {
  std::vector<ExchangeTruth> exchanges;
};

// Schedule and truth without synthesizing audio.
SessionPlan plan_session(const Scene& scene, const SessionConfig& config, const ClockModel& rx_clock,
                         const ClockModel& tx_clock);

struct SessionRecording {
  Waveform rx;  // Rx clock
  Waveform tx;  // Tx clock
  SessionPlan plan;
  // Logged emission times: t1 per exchange (Rx clock), t3 per exchange (Tx clock).
  std::vector<double> t1_log;
  std::vector<double> t3_log;
};

// Throws InvalidArgument when a trajectory leaves the scene.
SessionRecording simulate_session(const Scene& scene, const SessionConfig& config, const ClockModel& rx_clock,
                                  const ClockModel& tx_clock);

struct ProtocolConfig {
  ChirpSpec c1 = kSyncChirp;
  ChirpSpec c2 = kMeasureChirp;
  DetectorConfig detector;
  PickerConfig picker;
  double interval = 2.0;
  double latency_max = 0.15;
  double pairing_margin = 0.05;
  double rir_length = kDefaultRirLength;
};

struct ExchangeResult {
  int index = 0;
  HandshakeRecord record;
  double tof = 0.0;
  Rir rir;
};

struct ProtocolReport {
  std::vector<ExchangeResult> exchanges;
  int attempted = 0;
  int dropped = 0;   // no matching detection for t2 or t4
  int invalid = 0;   // tof_from_record rejected the record
  std::size_t c1_detections = 0;
  std::size_t c2_detections = 0;
  double detection_rate() const {
    return attempted == 0 ? 1.0 : static_cast<double>(exchanges.size()) / attempted;
  }
};

// Arrival refinement: matched filter of `recording` against `chirp` around a
// coarse detection, then direct-path picking on the correlation envelope.
double refine_arrival(const Waveform& recording, const Waveform& chirp, double coarse, const PickerConfig& picker);

ProtocolReport run_protocol(const Waveform& rx_recording, const Waveform& tx_recording,
                            std::span<const double> t1_log, std::span<const double> t3_log,
                            const ProtocolConfig& config = {});

}  // namespace roomtwin
