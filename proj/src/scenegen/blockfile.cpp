#include <bit>
#include <cstring>
#include <fstream>

#include "dgf/blockfile.hpp"
#include "dgf/errors.hpp"

namespace dgf::blockfile {
namespace {

const char kMagic[4] = {'D', 'G', 'F', 'S'};

std::uint32_t crc_table_entry(std::uint32_t i) {
  std::uint32_t c = i;
  for (int k = 0; k < 8; ++k)
    c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
  return c;
}

const std::uint32_t* crc_table() {
  static std::uint32_t table[256];
  static const bool init = [] {
    for (std::uint32_t i = 0; i < 256; ++i) table[i] = crc_table_entry(i);
    return true;
  }();
  (void)init;
  return table;
}

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}
void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u16(std::string& out, std::uint16_t v) {
  put_u8(out, v & 0xff);
  put_u8(out, (v >> 8) & 0xff);
}
void put_u32(std::string& out, std::uint32_t v) {
  put_u16(out, v & 0xffff);
  put_u16(out, (v >> 16) & 0xffff);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t left;
  const std::string& path;

  void need(std::size_t n, const char* what) const {
    if (left < n)
      throw IoError(path + ": truncated while reading " + std::string(what));
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    --left;
    return *p++;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    left -= 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    p += 4;
    left -= 4;
    return v;
  }
  const std::uint8_t* raw(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* r = p;
    p += n;
    left -= n;
    return r;
  }
};

}  // namespace

std::uint32_t crc32(const void* data, std::size_t n) {
  const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
  const std::uint32_t* table = crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::size_t Array::count() const {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

namespace {
void check_dims(const Array& a, std::size_t have) {
  if (a.dims.empty() || a.dims.size() > 255)
    throw ContractViolation("array '" + a.name + "': bad rank " +
                            std::to_string(a.dims.size()));
  for (int d : a.dims)
    if (d <= 0)
      throw ContractViolation("array '" + a.name + "': non-positive dim");
  if (a.count() != have)
    throw ContractViolation("array '" + a.name + "': dims do not match data (" +
                            std::to_string(a.count()) + " vs " +
                            std::to_string(have) + ")");
  if (a.name.empty() || a.name.size() > 255)
    throw ContractViolation("array name must be 1..255 bytes");
}
}  // namespace

Array Array::of_f64(std::string name, std::vector<int> dims,
                    std::vector<double> data) {
  Array a;
  a.name = std::move(name);
  a.dtype = DType::f64;
  a.dims = std::move(dims);
  a.f64 = std::move(data);
  check_dims(a, a.f64.size());
  return a;
}
Array Array::of_u16(std::string name, std::vector<int> dims,
                    std::vector<std::uint16_t> data) {
  Array a;
  a.name = std::move(name);
  a.dtype = DType::u16;
  a.dims = std::move(dims);
  a.u16 = std::move(data);
  check_dims(a, a.u16.size());
  return a;
}
Array Array::of_u8(std::string name, std::vector<int> dims,
                   std::vector<std::uint8_t> data) {
  Array a;
  a.name = std::move(name);
  a.dtype = DType::u8;
  a.dims = std::move(dims);
  a.u8 = std::move(data);
  check_dims(a, a.u8.size());
  return a;
}

const Array* Container::find(const std::string& name) const {
  for (const Array& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const Array& Container::require(const std::string& name) const {
  if (const Array* a = find(name)) return *a;
  throw IoError("container is missing required array '" + name + "'");
}

void write_file(const std::string& path, const Container& c) {
  std::string out;
  put_bytes(out, kMagic, 4);
  put_u16(out, kFormatVersion);
  put_u32(out, c.height);
  put_u32(out, c.width);

  for (const Array& a : c.arrays) {
    put_u8(out, static_cast<std::uint8_t>(a.name.size()));
    put_bytes(out, a.name.data(), a.name.size());
    put_u8(out, static_cast<std::uint8_t>(a.dtype));
    put_u8(out, static_cast<std::uint8_t>(a.dims.size()));
    for (int d : a.dims) put_u32(out, static_cast<std::uint32_t>(d));

    std::string payload;
    switch (a.dtype) {
      case DType::f64:
        check_dims(a, a.f64.size());
        payload.reserve(a.f64.size() * 8);
        for (double v : a.f64) {
          const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
          put_u32(payload, static_cast<std::uint32_t>(bits & 0xffffffffu));
          put_u32(payload, static_cast<std::uint32_t>(bits >> 32));
        }
        break;
      case DType::u16:
        check_dims(a, a.u16.size());
        for (std::uint16_t v : a.u16) put_u16(payload, v);
        break;
      case DType::u8:
        check_dims(a, a.u8.size());
        payload.assign(a.u8.begin(), a.u8.end());
        break;
    }
    out += payload;
    put_u32(out, crc32(payload.data(), payload.size()));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

Container read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size(),
           path};

  const std::uint8_t* magic = r.raw(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": bad magic, not a DGFS file");
  const std::uint16_t version = r.u16("version");
  if (version != kFormatVersion)
    throw IoError(path + ": unsupported format version " +
                  std::to_string(version));

  Container c;
  c.height = r.u32("height");
  c.width = r.u32("width");

  while (r.left > 0) {
    Array a;
    const std::uint8_t name_len = r.u8("name length");
    if (name_len == 0) throw IoError(path + ": empty array name");
    const std::uint8_t* nm = r.raw(name_len, "name");
    a.name.assign(reinterpret_cast<const char*>(nm), name_len);
    const std::uint8_t dt = r.u8("dtype");
    if (dt > 2) throw IoError(path + ": unknown dtype tag " + std::to_string(dt));
    a.dtype = static_cast<DType>(dt);
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) throw IoError(path + ": zero-rank array");
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dim");
      if (d == 0) throw IoError(path + ": zero dim");
      a.dims.push_back(static_cast<int>(d));
      count *= d;
    }
    const std::size_t elem = a.dtype == DType::f64 ? 8 : a.dtype == DType::u16 ? 2 : 1;
    const std::uint8_t* payload = r.raw(count * elem, "payload");
    const std::uint32_t stored = r.u32("checksum");
    const std::uint32_t computed = crc32(payload, count * elem);
    if (stored != computed)
      throw IoError(path + ": checksum mismatch in array '" + a.name + "'");

    switch (a.dtype) {
      case DType::f64:
        a.f64.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
          std::uint64_t bits = 0;
          for (int b = 7; b >= 0; --b) bits = (bits << 8) | payload[i * 8 + b];
          a.f64[i] = std::bit_cast<double>(bits);
        }
        break;
      case DType::u16:
        a.u16.resize(count);
        for (std::size_t i = 0; i < count; ++i)
          a.u16[i] = static_cast<std::uint16_t>(payload[i * 2] |
                                                (payload[i * 2 + 1] << 8));
        break;
      case DType::u8:
        a.u8.assign(payload, payload + count);
        break;
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace dgf::blockfile
