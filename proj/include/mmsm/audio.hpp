#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmsm/random.hpp"

namespace mmsm {

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;  // nominally in [-1, 1]
  int sample_rate = kDefaultSampleRate;
};

/// Reads a mono 16-bit PCM RIFF/WAVE file. Anything else is a FormatError.
Waveform read_wav(const std::filesystem::path& path);
Waveform parse_wav(std::span<const std::uint8_t> bytes);

void write_wav(const std::filesystem::path& path, const Waveform& w);
std::vector<std::uint8_t> serialize_wav(const Waveform& w);

/// Value a sample takes after a write/read cycle.
float quantize_pcm16(float x);
Waveform quantize(const Waveform& w);

/// Mean squared sample value.
double signal_power(std::span<const float> samples);
inline double signal_power(const Waveform& w) { return signal_power(w.samples); }

inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

struct NoisyWaveform {
  Waveform waveform;          // signal + noise, clipped to [-1, 1]
  std::vector<double> noise;  // pre-clip noise actually added
  double clip_fraction = 0.0;
};

/// Adds white Gaussian noise so that P_signal / P_noise hits snr_db. The drawn
/// noise is rescaled to the exact target power before mixing. An infinite SNR
/// returns the input unchanged. Throws on an all-zero signal.
NoisyWaveform add_awgn(const Waveform& w, double snr_db, Rng& rng);

/// 10 log10(P_signal / P_noise).
double snr_db(std::span<const float> signal, std::span<const double> noise);

}  // namespace mmsm
