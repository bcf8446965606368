#include "mmsm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

#include "mmsm/errors.hpp"

namespace mmsm {
namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

std::vector<std::uint8_t> serialize_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) out.push_back(to_byte(v));
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  const auto bytes = serialize_pgm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

GrayImage parse_pgm(std::span<const std::uint8_t> b) {
  std::size_t at = 0;
  auto skip_space = [&] {
    while (at < b.size()) {
      if (b[at] == '#') {
        while (at < b.size() && b[at] != '\n') ++at;
      } else if (std::isspace(b[at])) {
        ++at;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    if (at >= b.size() || !std::isdigit(b[at])) throw FormatError("pgm: malformed header");
    std::size_t v = 0;
    while (at < b.size() && std::isdigit(b[at])) v = v * 10 + (b[at++] - '0');
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw FormatError("pgm: expected binary P5 magic");
  at = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw FormatError("pgm: only maxval 255 is supported");
  if (at >= b.size() || !std::isspace(b[at])) throw FormatError("pgm: malformed header");
  ++at;
  if (b.size() - at < img.width * img.height) throw FormatError("pgm: truncated pixel data");
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(b[at + i]) / 255.0f;
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("pgm: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_pgm(bytes);
}

GrayImage quantize_8bit(const GrayImage& img) {
  GrayImage q = img;
  for (auto& v : q.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
  return q;
}

}  // namespace mmsm
