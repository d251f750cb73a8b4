#include "cs3d/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cs3d {

namespace le {

namespace {
template <typename T>
void put(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError("unexpected end of stream");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}
}  // namespace

void put_u8(std::ostream& os, std::uint8_t v) { put(os, v); }
void put_u16(std::ostream& os, std::uint16_t v) { put(os, v); }
void put_u32(std::ostream& os, std::uint32_t v) { put(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put(os, v); }
void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<std::uint64_t>(v)); }
std::uint8_t get_u8(std::istream& is) { return get<std::uint8_t>(is); }
std::uint16_t get_u16(std::istream& is) { return get<std::uint16_t>(is); }
std::uint32_t get_u32(std::istream& is) { return get<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get<std::uint64_t>(is); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get<std::uint64_t>(is)); }

}  // namespace le

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic, sizeof(kTensorMagic));
  le::put_u32(os, kTensorVersion);
  le::put_u32(os, static_cast<std::uint32_t>(t.shape().rank()));
  for (auto d : t.shape().dims()) le::put_u64(os, d);
  for (double v : t.data()) le::put_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw FormatError("bad tensor magic");
  }
  const auto version = le::get_u32(is);
  if (version != kTensorVersion) {
    throw FormatError("unsupported tensor version " + std::to_string(version));
  }
  const auto rank = le::get_u32(is);
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) {
    d = le::get_u64(is);
    if (d == 0) throw FormatError("zero extent in tensor header");
  }
  Shape shape(dims);
  std::vector<double> data(shape.numel());
  for (auto& v : data) v = le::get_f64(is);
  return Tensor(shape, std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'S', '3', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  le::put_u32(os, kCheckpointVersion);
  le::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    le::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    le::put_u8(os, static_cast<std::uint8_t>(e.kind));
    write_tensor(os, e.tensor);
  }
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("bad checkpoint magic in " + path.string());
  }
  if (le::get_u32(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto count = le::get_u32(is);
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto len = le::get_u32(is);
    if (len > 4096) throw FormatError("implausible entry name length");
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw FormatError("truncated entry name");
    const auto kind = le::get_u8(is);
    if (kind > 1) throw FormatError("unknown entry kind " + std::to_string(kind));
    e.kind = static_cast<EntryKind>(kind);
    e.tensor = read_tensor(is);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace cs3d
