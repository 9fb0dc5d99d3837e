// SPDX-License-Identifier: Apache-2.0

#include "avp/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace avp::io {
namespace {

constexpr char kMagic[4] = {'A', 'V', 'T', 'C'};
constexpr std::uint32_t kMaxNameLen = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = 1ull << 32;

[[noreturn]] void corrupt(const std::string& what) {
  throw std::runtime_error("tensor container: " + what);
}

void read_exact(std::istream& in, char* buf, std::size_t n) {
  in.read(buf, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) corrupt("truncated input");
}

}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::istream& in) {
  char b[4];
  read_exact(in, b, 4);
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[0])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[3])) << 24);
}

std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  const std::uint64_t hi = get_u32(in);
  return lo | (hi << 32);
}

float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint32_t len = get_u32(in);
  if (len > kMaxNameLen) corrupt("implausible string length");
  std::string s(len, '\0');
  if (len) read_exact(in, s.data(), len);
  return s;
}

void write_container(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    put_string(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    std::size_t n = 1;
    for (std::size_t d : t.shape) {
      put_u32(out, static_cast<std::uint32_t>(d));
      n *= d;
    }
    if (n != t.values.size()) {
      throw std::invalid_argument("tensor container: shape/value mismatch for '" + t.name + "'");
    }
    for (double v : t.values) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("tensor container: write failed");
}

std::vector<NamedTensor> read_container(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) corrupt("bad magic");
  const std::uint32_t version = get_u32(in);
  if (version != kContainerVersion) corrupt("unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = get_string(in);
    const std::uint32_t rank = get_u32(in);
    if (rank > kMaxRank) corrupt("implausible rank");
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = get_u32(in);
      t.shape.push_back(d);
      n *= d;
      if (n > kMaxElements) corrupt("implausible element count");
    }
    t.values.resize(n);
    for (std::uint64_t j = 0; j < n; ++j) t.values[j] = static_cast<double>(get_f32(in));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void write_container_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_container(f, tensors);
  f.flush();
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

std::vector<NamedTensor> read_container_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  return read_container(f);
}

}  // namespace avp::io
