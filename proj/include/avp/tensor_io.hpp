// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor binary container. Little-endian layout:
//   "AVTC" | u32 version | u32 count
//   per tensor: u32 name_len | name bytes | u32 rank | u32 dims[rank]
//               | f32 values[prod(dims)]
// Values are stored as 32-bit floats; readers widen back to double.

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace avp::io {

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;  // every element exactly representable as f32
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container(std::istream& in);

void write_container_file(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container_file(const std::string& path);

// Little-endian scalar helpers shared by the checkpoint format.
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
float get_f32(std::istream& in);
void put_string(std::ostream& out, const std::string& s);
std::string get_string(std::istream& in);

}  // namespace avp::io
