#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cs3d/tensor.hpp"

namespace cs3d {

// Tensor container: "CS3DTNSR", u32 version, u32 rank, u64 extents[rank],
// then the f64 payload. Everything little-endian.
inline constexpr char kTensorMagic[8] = {'C', 'S', '3', 'D', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

enum class EntryKind : std::uint8_t { kParameter = 0, kBuffer = 1 };

struct NamedTensor {
  std::string name;
  EntryKind kind = EntryKind::kParameter;
  Tensor tensor;
};

// Checkpoint: "CS3DCKPT", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, u8 kind, tensor container.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

namespace le {
void put_u8(std::ostream& os, std::uint8_t v);
void put_u16(std::ostream& os, std::uint16_t v);
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
std::uint8_t get_u8(std::istream& is);
std::uint16_t get_u16(std::istream& is);
std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
double get_f64(std::istream& is);
}  // namespace le

}  // namespace cs3d
