#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmsm/tensor.hpp"

namespace mmsm {

inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "MMSM", u32 version, u32 record count, then records.
/// A record is u32 name length, name bytes, u8 kind, and a kind-specific body:
///   kind 0 (tensor): u32 rank, rank x u64 dims, numel x f32, all little-endian
///   kind 1 (blob):   u64 byte length, raw bytes (used for JSON/text headers)
/// Record order is preserved, which makes save/load a bit-exact round trip.
struct Checkpoint {
  std::vector<std::pair<std::string, TensorF>> tensors;
  std::vector<std::pair<std::string, std::string>> blobs;

  const TensorF* find_tensor(std::string_view name) const;
  const std::string* find_blob(std::string_view name) const;

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace mmsm
