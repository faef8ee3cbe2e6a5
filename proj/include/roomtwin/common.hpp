#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>

namespace roomtwin {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kSampleRate = 48000.0;
inline constexpr double kSpeedOfSound = 343.0;
inline constexpr double kPi = std::numbers::pi;

// Base class for every error raised by the library. The CLI maps these to
// exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violations on caller-supplied values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable input files.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline std::size_t samples_for(double seconds, double sample_rate) {
  return static_cast<std::size_t>(seconds * sample_rate + 0.5);
}

}  // namespace roomtwin
