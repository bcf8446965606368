#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "mmsm/audio.hpp"
#include "mmsm/errors.hpp"
#include "mmsm/image.hpp"

using namespace mmsm;

namespace {

Waveform tone(std::size_t n, double amp = 0.5, double freq = 440.0) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / w.sample_rate));
  return w;
}

void put_u16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
  b[at] = v & 0xff;
  b[at + 1] = v >> 8;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("wav round trip is exact after quantization") {
  const auto w = tone(1600);
  const auto bytes = serialize_wav(w);
  CHECK(bytes.size() == 44 + 2 * w.samples.size());
  const auto back = parse_wav(bytes);
  CHECK(back.sample_rate == 16000);
  CHECK(back.samples == quantize(w).samples);
  CHECK(parse_wav(serialize_wav(back)).samples == back.samples);

  const auto path = std::filesystem::temp_directory_path() / "mmsm_test_roundtrip.wav";
  write_wav(path, w);
  CHECK(read_wav(path).samples == back.samples);
  std::filesystem::remove(path);
}

TEST_CASE("quantize_pcm16") {
  CHECK(quantize_pcm16(0.0f) == 0.0f);
  CHECK(quantize_pcm16(1.0f) == 1.0f);
  CHECK(quantize_pcm16(-1.0f) == -1.0f);
  CHECK(quantize_pcm16(2.0f) == 1.0f);
  CHECK(std::abs(quantize_pcm16(0.3f) - 0.3f) <= 0.5f / 32767.0f + 1e-7f);
}

TEST_CASE("malformed wav input") {
  auto good = serialize_wav(tone(100));
  SUBCASE("stereo") {
    put_u16(good, 22, 2);
    CHECK_THROWS_AS(parse_wav(good), FormatError);
  }
  SUBCASE("8-bit") {
    put_u16(good, 34, 8);
    CHECK_THROWS_AS(parse_wav(good), FormatError);
  }
  SUBCASE("float format") {
    put_u16(good, 20, 3);
    CHECK_THROWS_AS(parse_wav(good), FormatError);
  }
  SUBCASE("truncated header") {
    good.resize(30);
    CHECK_THROWS_AS(parse_wav(good), FormatError);
  }
  SUBCASE("not riff") {
    good[0] = 'X';
    CHECK_THROWS_AS(parse_wav(good), FormatError);
  }
  CHECK_THROWS_AS(read_wav("/nonexistent/file.wav"), std::exception);
}

TEST_CASE("awgn hits the requested snr") {
  const auto w = tone(16000);
  for (double snr : {20.0, 10.0, 5.0, 0.0, -5.0}) {
    Rng rng(9);
    const auto out = add_awgn(w, snr, rng);
    CHECK(std::abs(snr_db(w.samples, out.noise) - snr) <= 0.1);
    CHECK(out.waveform.samples.size() == w.samples.size());
    for (float x : out.waveform.samples) {
      CHECK(x >= -1.0f);
      CHECK(x <= 1.0f);
    }
  }
}

TEST_CASE("clean snr is a passthrough") {
  const auto w = tone(1000);
  Rng rng(1);
  const auto out = add_awgn(w, kCleanSnr, rng);
  CHECK(out.waveform.samples == w.samples);
  CHECK(out.clip_fraction == 0.0);
}

TEST_CASE("silent input is rejected") {
  Waveform w;
  w.samples.assign(100, 0.0f);
  Rng rng(1);
  CHECK_THROWS(add_awgn(w, 10.0, rng));
}

TEST_CASE("noise depends on seed and is reproducible") {
  const auto w = tone(16000);
  Rng a(1), b(2), c(1);
  const auto na = add_awgn(w, 10.0, a);
  const auto nb = add_awgn(w, 10.0, b);
  const auto nc = add_awgn(w, 10.0, c);
  CHECK(na.noise == nc.noise);
  CHECK(std::abs(correlation(na.noise, nb.noise)) < 0.05);
}

TEST_CASE("signal and noise powers add on long signals") {
  const auto w = tone(160000, 0.1);  // small amplitude, so no clipping
  Rng rng(4);
  const auto out = add_awgn(w, 5.0, rng);
  CHECK(out.clip_fraction == 0.0);
  const double ps = signal_power(w);
  double pn = 0.0;
  for (double x : out.noise) pn += x * x;
  pn /= out.noise.size();
  CHECK(std::abs(signal_power(out.waveform) - (ps + pn)) / (ps + pn) < 0.01);
}

TEST_CASE("loud input at low snr reports clipping") {
  const auto w = tone(16000, 0.99);
  Rng rng(5);
  const auto out = add_awgn(w, -5.0, rng);
  CHECK(out.clip_fraction > 0.0);
  CHECK(out.clip_fraction < 1.0);
}

TEST_CASE("pgm round trip") {
  GrayImage img(5, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i) / 14.0f;
  const auto back = parse_pgm(serialize_pgm(img));
  CHECK(back == quantize_8bit(img));
  CHECK(parse_pgm(serialize_pgm(back)) == back);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5f / 255 + 1e-6f);

  auto bytes = serialize_pgm(img);
  bytes[1] = '2';
  CHECK_THROWS_AS(parse_pgm(bytes), FormatError);
  bytes = serialize_pgm(img);
  bytes.pop_back();
  CHECK_THROWS_AS(parse_pgm(bytes), FormatError);
}
