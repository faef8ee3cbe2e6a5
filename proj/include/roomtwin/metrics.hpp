#pragma once

#include <span>
#include <vector>

#include "roomtwin/signals.hpp"

namespace roomtwin {

class InsufficientDecayError : public Error {
 public:
  using Error::Error;
};

// Backward-integrated energy decay. time[n] = n / fs relative to the RIR's
// onset; level in dB relative to total energy (-inf once the energy is spent).
struct DecayCurve {
  std::vector<double> time;
  std::vector<double> level;
};

DecayCurve schroeder(const Rir& rir);

// 60 dB decay time from a least-squares line over the -5..-35 dB range.
double t60(const Rir& rir);

inline constexpr double kC50Sentinel = 80.0;
// Early (first 50 ms after onset) to late energy ratio in dB, clamped to
// +-kC50Sentinel.
double c50(const Rir& rir);

// 6 x time to reach -10 dB.
double edt(const Rir& rir);

// Signals are zero-padded to a common length.
double env_err(std::span<const double> a, std::span<const double> b);
double amp_err(std::span<const double> a, std::span<const double> b);
double ms_stft_err(std::span<const double> a, std::span<const double> b);

struct MetricComparison {
  double env = 0.0;
  double amp = 0.0;
  double stft = 0.0;
  // Absolute differences; NaN when either RIR has too little decay.
  double t60 = 0.0;
  double c50 = 0.0;
  double edt = 0.0;
};

// Throws InvalidArgument on differing sample rates.
MetricComparison compare(const Rir& a, const Rir& b);

}  // namespace roomtwin
