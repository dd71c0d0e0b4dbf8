#pragma once

#include <filesystem>
#include <iosfwd>

#include "hmhi/tensor.hpp"

namespace hmhi {

// Flat binary tensor container, all integers little-endian:
//   magic    8 bytes  "HMHITNSR"
//   version  u32      kTensorFormatVersion
//   dtype    u8       1 = float64
//   rank     u32
//   dims     u64 x rank
//   values   float64 bit patterns as u64, row-major
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

namespace le {
void put_u8(std::ostream& out, std::uint8_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
std::uint8_t get_u8(std::istream& in);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
}  // namespace le

}  // namespace hmhi
