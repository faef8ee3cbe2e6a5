#pragma once

#include <filesystem>
#include <vector>

namespace roomtwin::wav {

struct Audio {
  std::vector<double> samples;
  double sample_rate = 0.0;
};

// Writes 32-bit IEEE float mono.
void write(const std::filesystem::path& path, const std::vector<double>& samples, double sample_rate);

// Reads mono (or the first channel of multi-channel) 32-bit float or 16-bit
// PCM files. Throws FormatError on anything else.
Audio read(const std::filesystem::path& path);

}  // namespace roomtwin::wav
