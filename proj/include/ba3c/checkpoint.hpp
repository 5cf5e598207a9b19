#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ba3c/tensor.hpp"

namespace ba3c {

// Checkpoint record format, little-endian:
//   magic "BA3C" | format version u32 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, dtype u8 (0=F32, 1=F64),
//               rank u8, extents u32 each, raw scalar data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Dtype dtype = Dtype::F32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> raw;  // scalar data, little-endian

  template <typename T>
  static CheckpointRecord from_tensor(std::string name, const Tensor<T>& t) {
    CheckpointRecord r;
    r.name = std::move(name);
    r.dtype = dtype_of<T>::value;
    r.shape = t.shape();
    r.raw.resize(t.size() * sizeof(T));
    std::memcpy(r.raw.data(), t.data(), r.raw.size());
    return r;
  }

  template <typename T>
  Tensor<T> to_tensor(Layout layout = Layout::FLAT) const {
    if (dtype != dtype_of<T>::value) {
      throw std::runtime_error("checkpoint record '" + name + "': dtype mismatch");
    }
    Tensor<T> t(shape, layout);
    if (raw.size() != t.size() * sizeof(T)) {
      throw std::runtime_error("checkpoint record '" + name + "': size mismatch");
    }
    std::memcpy(t.data(), raw.data(), raw.size());
    return t;
  }

  std::size_t scalar_count() const {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }
};

namespace detail {

template <typename U>
void write_le(std::ostream& os, U v) {
  std::uint8_t buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = std::uint8_t((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  std::uint8_t buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const std::vector<CheckpointRecord>& records) {
  os.write("BA3C", 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint32_t>(os, std::uint32_t(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long");
    detail::write_le<std::uint16_t>(os, std::uint16_t(r.name.size()));
    os.write(r.name.data(), std::streamsize(r.name.size()));
    detail::write_le<std::uint8_t>(os, std::uint8_t(r.dtype));
    detail::write_le<std::uint8_t>(os, std::uint8_t(r.shape.size()));
    for (std::size_t e : r.shape) detail::write_le<std::uint32_t>(os, std::uint32_t(e));
    os.write(reinterpret_cast<const char*>(r.raw.data()), std::streamsize(r.raw.size()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline std::vector<CheckpointRecord> load_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "BA3C") {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  const auto count = detail::read_le<std::uint32_t>(is);
  std::vector<CheckpointRecord> records(count);
  for (auto& r : records) {
    const auto name_len = detail::read_le<std::uint16_t>(is);
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    const auto dtype = detail::read_le<std::uint8_t>(is);
    if (dtype > 1) throw std::runtime_error("checkpoint: bad dtype tag");
    r.dtype = Dtype(dtype);
    const auto rank = detail::read_le<std::uint8_t>(is);
    r.shape.resize(rank);
    for (auto& e : r.shape) e = detail::read_le<std::uint32_t>(is);
    const std::size_t bytes = r.scalar_count() * (r.dtype == Dtype::F32 ? 4 : 8);
    r.raw.resize(bytes);
    is.read(reinterpret_cast<char*>(r.raw.data()), std::streamsize(bytes));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  }
  return records;
}

inline void save_checkpoint_file(const std::string& path,
                                 const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  save_checkpoint(os, records);
}

inline std::vector<CheckpointRecord> load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return load_checkpoint(is);
}

}  // namespace ba3c
