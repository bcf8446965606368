#include "mmsm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mmsm/errors.hpp"

namespace mmsm {
namespace {

enum class RecordKind : std::uint8_t { kTensor = 0, kBlob = 1 };

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float x) { le(std::bit_cast<std::uint32_t>(x)); }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (n > b_.size() - at_) throw FormatError("checkpoint: unexpected end of data");
  }
  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[at_ + i]) << (8 * i));
    at_ += sizeof(T);
    return v;
  }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + at_), n);
    at_ += n;
    return s;
  }
  bool done() const { return at_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t at_ = 0;
};

}  // namespace

const TensorF* Checkpoint::find_tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const std::string* Checkpoint::find_blob(std::string_view name) const {
  for (const auto& [n, b] : blobs)
    if (n == name) return &b;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le(kCheckpointVersion);
  w.le(static_cast<std::uint32_t>(blobs.size() + tensors.size()));
  for (const auto& [name, blob] : blobs) {
    w.str(name);
    w.le(static_cast<std::uint8_t>(RecordKind::kBlob));
    w.le(static_cast<std::uint64_t>(blob.size()));
    w.bytes(blob.data(), blob.size());
  }
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.le(static_cast<std::uint8_t>(RecordKind::kTensor));
    w.le(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape().dims()) w.le(static_cast<std::uint64_t>(d));
    for (float x : t.data()) w.f32(x);
  }
  return w.take();
}

Checkpoint Checkpoint::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const auto count = r.le<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.le<std::uint32_t>());
    const auto kind = r.le<std::uint8_t>();
    if (kind == static_cast<std::uint8_t>(RecordKind::kBlob)) {
      const auto n = r.le<std::uint64_t>();
      ck.blobs.emplace_back(std::move(name), r.str(static_cast<std::size_t>(n)));
    } else if (kind == static_cast<std::uint8_t>(RecordKind::kTensor)) {
      const auto rank = r.le<std::uint32_t>();
      if (rank > 4) throw FormatError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
      std::vector<std::size_t> dims(rank);
      for (auto& d : dims) d = static_cast<std::size_t>(r.le<std::uint64_t>());
      Shape shape(std::move(dims));
      r.need(shape.numel() * 4);
      std::vector<float> v(shape.numel());
      for (auto& x : v) x = r.f32();
      ck.tensors.emplace_back(std::move(name), TensorF(std::move(shape), std::move(v)));
    } else {
      throw FormatError("checkpoint: unknown record kind " + std::to_string(kind));
    }
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace mmsm
