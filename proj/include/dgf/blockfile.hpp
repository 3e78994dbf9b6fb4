#pragma once
// Raw-array container used for samples and checkpoints.
//
// Layout: magic "DGFS" | version u16 LE | H u32 LE | W u32 LE | blocks until
// EOF. Block: name_len u8 | name | dtype u8 (0=f64, 1=u16, 2=u8) | rank u8 |
// dims u32 LE each | payload little-endian row-major | crc32(payload) u32 LE.
// Everything is explicit little-endian; doubles travel as IEEE-754 bit
// patterns. Exact by design: load(save(x)) == x bit for bit.

#include <cstdint>
#include <string>
#include <vector>

namespace dgf::blockfile {

constexpr std::uint16_t kFormatVersion = 1;

enum class DType : std::uint8_t { f64 = 0, u16 = 1, u8 = 2 };

struct Array {
  std::string name;
  DType dtype = DType::f64;
  std::vector<int> dims;
  // exactly one of these is populated, per dtype
  std::vector<double> f64;
  std::vector<std::uint16_t> u16;
  std::vector<std::uint8_t> u8;

  std::size_t count() const;

  static Array of_f64(std::string name, std::vector<int> dims,
                      std::vector<double> data);
  static Array of_u16(std::string name, std::vector<int> dims,
                      std::vector<std::uint16_t> data);
  static Array of_u8(std::string name, std::vector<int> dims,
                     std::vector<std::uint8_t> data);
};

struct Container {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<Array> arrays;  // insertion order is preserved on disk

  const Array* find(const std::string& name) const;
  const Array& require(const std::string& name) const;  // IoError if absent
};

void write_file(const std::string& path, const Container& c);
Container read_file(const std::string& path);

std::uint32_t crc32(const void* data, std::size_t n);

}  // namespace dgf::blockfile
