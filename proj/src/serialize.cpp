#include "hmhi/serialize.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace hmhi {

namespace {

constexpr std::array<char, 8> kMagic = {'H', 'M', 'H', 'I', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kMaxRank = 16;

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("tensor container: unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

namespace le {
void put_u8(std::ostream& out, std::uint8_t v) { put_le(out, v); }
void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
std::uint8_t get_u8(std::istream& in) { return get_le<std::uint8_t>(in); }
std::uint32_t get_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
}  // namespace le

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  le::put_u32(out, kTensorFormatVersion);
  le::put_u8(out, kDtypeFloat64);
  const auto& shape = tensor.shape();
  le::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) le::put_u64(out, d);
  for (double v : tensor.data()) le::put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("tensor container: write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("tensor container: bad magic");
  const auto version = le::get_u32(in);
  if (version != kTensorFormatVersion) {
    throw IoError("tensor container: unsupported version " + std::to_string(version));
  }
  const auto dtype = le::get_u8(in);
  if (dtype != kDtypeFloat64) throw IoError("tensor container: unsupported dtype code " + std::to_string(dtype));
  const auto rank = le::get_u32(in);
  if (rank == 0 || rank > kMaxRank) throw IoError("tensor container: invalid rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = le::get_u64(in);
    if (d == 0 || d > (std::uint64_t{1} << 40) / count) throw IoError("tensor container: invalid dimension");
    count *= d;
  }
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(le::get_u64(in));
  return Tensor::from(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace hmhi
