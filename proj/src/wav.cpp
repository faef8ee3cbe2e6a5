#include "roomtwin/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "roomtwin/common.hpp"

namespace roomtwin::wav {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
std::uint32_t get_u32(const std::vector<char>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(in[at + i]);
  return v;
}
std::uint16_t get_u16(const std::vector<char>& in, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(in[at]) |
                                    (static_cast<std::uint8_t>(in[at + 1]) << 8));
}

}  // namespace

void write(const std::filesystem::path& path, const std::vector<double>& samples, double sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  std::vector<char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 3);  // IEEE float
  put_u16(out, 1);
  const auto rate = static_cast<std::uint32_t>(sample_rate + 0.5);
  put_u32(out, rate);
  put_u32(out, rate * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double s : samples) {
    const float f = static_cast<float>(s);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot open for writing: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Audio read(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open WAV file: " + path.string());
  std::vector<char> in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (in.size() < 12 || std::memcmp(in.data(), "RIFF", 4) != 0 ||
      std::memcmp(in.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file: " + path.string());
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= in.size()) {
    const std::uint32_t size = get_u32(in, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > in.size()) throw FormatError("truncated WAV chunk: " + path.string());
    if (std::memcmp(in.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("short fmt chunk: " + path.string());
      format = get_u16(in, body);
      channels = get_u16(in, body + 2);
      rate = get_u32(in, body + 4);
      bits = get_u16(in, body + 14);
      if (format == 0xFFFE && size >= 26) format = get_u16(in, body + 24);
      have_fmt = true;
    } else if (std::memcmp(in.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt: " + path.string());
      if (channels == 0 || rate == 0) throw FormatError("invalid WAV header: " + path.string());
      Audio audio;
      audio.sample_rate = rate;
      const std::size_t frame = static_cast<std::size_t>(channels) * (bits / 8);
      if (frame == 0) throw FormatError("invalid WAV frame size: " + path.string());
      const std::size_t frames = size / frame;
      audio.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        const std::size_t at = body + i * frame;
        if (format == 3 && bits == 32) {
          const std::uint32_t raw = get_u32(in, at);
          float f;
          std::memcpy(&f, &raw, 4);
          audio.samples[i] = f;
        } else if (format == 1 && bits == 16) {
          audio.samples[i] = static_cast<std::int16_t>(get_u16(in, at)) / 32768.0;
        } else {
          throw FormatError("unsupported WAV encoding (need float32 or pcm16): " + path.string());
        }
      }
      return audio;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError("WAV file has no data chunk: " + path.string());
}

}  // namespace roomtwin::wav
