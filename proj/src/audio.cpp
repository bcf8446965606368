#include "mmsm/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mmsm/errors.hpp"

namespace mmsm {
namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

std::int16_t to_pcm16(float x) {
  const float c = std::clamp(x, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::lround(c * 32767.0f));
}

}  // namespace

Waveform parse_wav(std::span<const std::uint8_t> b) {
  if (b.size() < 12 || !tag_is(b, 0, "RIFF") || !tag_is(b, 8, "WAVE"))
    throw FormatError("wav: missing RIFF/WAVE header");
  bool have_fmt = false;
  Waveform w;
  std::size_t at = 12;
  while (at + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b, at + 4);
    const std::size_t body = at + 8;
    if (size > b.size() - body) throw FormatError("wav: chunk runs past end of file");
    if (tag_is(b, at, "fmt ")) {
      if (size < 16) throw FormatError("wav: fmt chunk too short");
      const auto format = read_u16(b, body);
      const auto channels = read_u16(b, body + 2);
      const auto rate = read_u32(b, body + 4);
      const auto bits = read_u16(b, body + 14);
      if (format != 1) throw FormatError("wav: only PCM is supported (format " + std::to_string(format) + ")");
      if (channels != 1) throw FormatError("wav: expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw FormatError("wav: expected 16-bit samples, got " + std::to_string(bits));
      if (rate == 0) throw FormatError("wav: zero sample rate");
      w.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (tag_is(b, at, "data")) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      if (size % 2) throw FormatError("wav: odd data size for 16-bit samples");
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<float>(static_cast<std::int16_t>(read_u16(b, body + 2 * i))) / 32767.0f;
      return w;
    }
    at = body + size + (size & 1);
  }
  throw FormatError(have_fmt ? "wav: no data chunk" : "wav: truncated header");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("wav: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

std::vector<std::uint8_t> serialize_wav(const Waveform& w) {
  if (w.sample_rate <= 0) throw std::invalid_argument("wav: sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float x : w.samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto bytes = serialize_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("wav: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

float quantize_pcm16(float x) { return static_cast<float>(to_pcm16(x)) / 32767.0f; }

Waveform quantize(const Waveform& w) {
  Waveform q = w;
  for (auto& x : q.samples) x = quantize_pcm16(x);
  return q;
}

double signal_power(std::span<const float> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (float x : samples) acc += static_cast<double>(x) * x;
  return acc / static_cast<double>(samples.size());
}

NoisyWaveform add_awgn(const Waveform& w, double snr_db_target, Rng& rng) {
  NoisyWaveform out;
  out.waveform = w;
  out.noise.assign(w.samples.size(), 0.0);
  if (std::isinf(snr_db_target) && snr_db_target > 0) return out;

  const double ps = signal_power(w);
  if (!(ps > 0.0)) throw std::invalid_argument("add_awgn: signal power is zero, SNR undefined");
  const double target = ps / std::pow(10.0, snr_db_target / 10.0);

  double drawn = 0.0;
  for (auto& n : out.noise) {
    n = rng.normal();
    drawn += n * n;
  }
  drawn /= static_cast<double>(out.noise.size());
  const double scale = drawn > 0.0 ? std::sqrt(target / drawn) : 0.0;

  std::size_t clipped = 0;
  for (std::size_t i = 0; i < out.noise.size(); ++i) {
    out.noise[i] *= scale;
    const double y = static_cast<double>(w.samples[i]) + out.noise[i];
    if (y > 1.0 || y < -1.0) ++clipped;
    out.waveform.samples[i] = static_cast<float>(std::clamp(y, -1.0, 1.0));
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(out.noise.size());
  return out;
}

double snr_db(std::span<const float> signal, std::span<const double> noise) {
  double pn = 0.0;
  for (double n : noise) pn += n * n;
  pn /= static_cast<double>(noise.size());
  return 10.0 * std::log10(signal_power(signal) / pn);
}

}  // namespace mmsm
