#pragma once

// RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float,
// little-endian, any channel count.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdm/signal.hpp"

namespace vdm {

enum class SampleFormat { pcm16, float32 };

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
inline void put_tag(std::vector<unsigned char>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

}  // namespace detail

/// Parses a complete WAV file image.
inline Waveform decode_wav(const std::vector<unsigned char>& bytes, const std::string& name = "<memory>") {
  using detail::read_u16;
  using detail::read_u32;
  auto fail = [&](const std::string& why) { return WavError(name + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("malformed header (not RIFF/WAVE)");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Some writers leave a stale size on the final data chunk; accept what is there.
      if (std::memcmp(hdr, "data", 4) != 0) throw fail("malformed header (chunk overruns file)");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("malformed header (short fmt chunk)");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == 0xFFFE) {
        if (avail < 40) throw fail("malformed header (short extensible fmt)");
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
      have_data = true;
    }
    pos = body + avail + (avail & 1u);
  }
  if (!have_fmt) throw fail("malformed header (missing fmt chunk)");
  if (!have_data) throw fail("malformed header (missing data chunk)");
  if (channels == 0) throw fail("malformed header (zero channels)");
  if (rate == 0) throw fail("malformed header (zero sample rate)");

  std::size_t bytes_per_sample = 0;
  if (format == 1 && bits == 16)
    bytes_per_sample = 2;
  else if (format == 3 && bits == 32)
    bytes_per_sample = 4;
  else
    throw fail("unsupported codec (format " + std::to_string(format) + ", " + std::to_string(bits) + " bit)");

  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) throw fail("empty data chunk");

  Waveform w(static_cast<double>(rate), channels, frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + i * frame_bytes + c * bytes_per_sample;
      if (bytes_per_sample == 2) {
        const auto v = static_cast<std::int16_t>(read_u16(p));
        w.channels[c][i] = static_cast<double>(v) / 32768.0;
      } else {
        const float v = std::bit_cast<float>(read_u32(p));
        if (!std::isfinite(v)) throw fail("non-finite sample");
        w.channels[c][i] = static_cast<double>(v);
      }
    }
  }
  return w;
}

inline std::vector<unsigned char> encode_wav(const Waveform& w, SampleFormat fmt = SampleFormat::float32) {
  w.validate();
  const auto channels = static_cast<std::uint16_t>(w.num_channels());
  const std::uint16_t bits = fmt == SampleFormat::pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_size = static_cast<std::uint32_t>(w.length() * block);

  std::vector<unsigned char> b;
  b.reserve(44 + data_size);
  detail::put_tag(b, "RIFF");
  detail::put_u32(b, 36 + data_size);
  detail::put_tag(b, "WAVE");
  detail::put_tag(b, "fmt ");
  detail::put_u32(b, 16);
  detail::put_u16(b, fmt == SampleFormat::pcm16 ? 1 : 3);
  detail::put_u16(b, channels);
  detail::put_u32(b, rate);
  detail::put_u32(b, rate * block);
  detail::put_u16(b, block);
  detail::put_u16(b, bits);
  detail::put_tag(b, "data");
  detail::put_u32(b, data_size);
  for (std::size_t i = 0; i < w.length(); ++i) {
    for (const auto& ch : w.channels) {
      if (fmt == SampleFormat::pcm16) {
        const double s = std::clamp(std::round(ch[i] * 32768.0), -32768.0, 32767.0);
        detail::put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
      } else {
        detail::put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(ch[i])));
      }
    }
  }
  return b;
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(path + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

inline void write_wav(const std::string& path, const Waveform& w, SampleFormat fmt = SampleFormat::float32) {
  const auto bytes = encode_wav(w, fmt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WavError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WavError(path + ": write failed");
}

}  // namespace vdm
