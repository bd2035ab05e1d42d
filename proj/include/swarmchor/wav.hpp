#ifndef SWARMCHOR_WAV_HPP
#define SWARMCHOR_WAV_HPP

#include "swarmchor/core.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>

namespace swarmchor {

/// Mono audio normalized to [-1, 1].
struct AudioClip {
  int sample_rate = 22050;
  std::vector<double> samples;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }

  void validate() const {
    if (sample_rate <= 0) fail(ErrorCode::InvalidArgument, "sample rate must be positive");
    for (double s : samples)
      if (!std::isfinite(s)) fail(ErrorCode::InvalidArgument, "audio contains non-finite samples");
  }
};

namespace detail {

inline std::uint32_t read_le(std::span<const std::uint8_t> b, std::size_t off, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

inline void write_le(std::vector<std::uint8_t>& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

/// Decodes a RIFF/WAVE byte buffer. Supports 8/16/24-bit integer PCM and
/// 32-bit float, any channel count; channels are averaged into mono.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_le;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail(ErrorCode::ParseError, "not a RIFF/WAVE file");

  int format = 0, channels = 0, rate = 0, bits = 0;
  std::span<const std::uint8_t> data;
  bool have_fmt = false, have_data = false;

  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + off);
    const std::size_t size = read_le(bytes, off + 4, 4);
    const std::size_t body = off + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (avail < 16) fail(ErrorCode::ParseError, "truncated fmt chunk");
      format = static_cast<int>(read_le(bytes, body, 2));
      channels = static_cast<int>(read_le(bytes, body + 2, 2));
      rate = static_cast<int>(read_le(bytes, body + 4, 4));
      bits = static_cast<int>(read_le(bytes, body + 14, 2));
      // WAVE_FORMAT_EXTENSIBLE carries the real format in the sub-format GUID.
      if (format == 0xFFFE && avail >= 26) format = static_cast<int>(read_le(bytes, body + 24, 2));
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.subspan(body, avail);
      have_data = true;
    }
    off = body + size + (size & 1U);
  }
  if (!have_fmt || !have_data) fail(ErrorCode::ParseError, "missing fmt or data chunk");
  if (channels <= 0 || rate <= 0) fail(ErrorCode::ParseError, "invalid channel count or sample rate");

  const bool pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24);
  const bool flt = format == 3 && bits == 32;
  if (!pcm && !flt)
    fail(ErrorCode::ParseError, "unsupported WAV encoding (format " + std::to_string(format) +
                                    ", " + std::to_string(bits) + " bits)");

  const int width = bits / 8;
  const std::size_t frame_bytes = static_cast<std::size_t>(width) * channels;
  const std::size_t n = data.size() / frame_bytes;

  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t at = i * frame_bytes + static_cast<std::size_t>(c) * width;
      double v = 0.0;
      if (flt) {
        const std::uint32_t raw = read_le(data, at, 4);
        float f;
        std::memcpy(&f, &raw, sizeof f);
        v = f;
      } else if (bits == 8) {
        v = (static_cast<int>(data[at]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(read_le(data, at, 2)) / 32768.0;
      } else {
        std::int32_t s = static_cast<std::int32_t>(read_le(data, at, 3) << 8) >> 8;
        v = s / 8388608.0;
      }
      acc += v;
    }
    clip.samples[i] = std::clamp(acc / channels, -1.0, 1.0);
  }
  return clip;
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

/// 16-bit mono PCM encoding.
inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  using detail::write_le;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  write_le(out, 36 + 2 * n, 4);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  write_le(out, 16, 4);
  write_le(out, 1, 2);
  write_le(out, 1, 2);
  write_le(out, static_cast<std::uint32_t>(clip.sample_rate), 4);
  write_le(out, static_cast<std::uint32_t>(clip.sample_rate) * 2, 4);
  write_le(out, 2, 2);
  write_le(out, 16, 2);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  write_le(out, 2 * n, 4);
  for (double s : clip.samples) {
    const auto q = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
    write_le(out, static_cast<std::uint16_t>(q), 2);
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Click track: short decaying 1 kHz bursts at the given times.
inline AudioClip synth_click_track(std::span<const double> click_times, double duration,
                                   int sample_rate = 22050) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.assign(static_cast<std::size_t>(std::llround(duration * sample_rate)), 0.0);
  const int burst = sample_rate / 50;  // 20 ms
  for (double t : click_times) {
    const auto start = static_cast<long long>(std::llround(t * sample_rate));
    for (int i = 0; i < burst; ++i) {
      const long long at = start + i;
      if (at < 0 || at >= static_cast<long long>(clip.samples.size())) continue;
      const double env = std::exp(-static_cast<double>(i) / (burst / 6.0));
      clip.samples[static_cast<std::size_t>(at)] +=
          0.8 * env * std::sin(2.0 * M_PI * 1000.0 * i / sample_rate);
    }
  }
  return clip;
}

}  // namespace swarmchor

#endif  // SWARMCHOR_WAV_HPP
