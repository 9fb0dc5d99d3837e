// SPDX-License-Identifier: Apache-2.0

#include "avp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace avp::train {
namespace {

constexpr char kMagic[4] = {'A', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(kMagic, 4);
  io::put_u32(f, ck.version);
  io::put_u64(f, ck.manifest_hash);
  io::put_u64(f, ck.seed);
  io::put_u32(f, ck.next_epoch);
  io::put_u64(f, ck.global_step);
  io::put_string(f, ck.meta.dump());
  io::write_container(f, ck.tensors);
  f.flush();
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  Checkpoint ck;
  ck.version = io::get_u32(f);
  if (ck.version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.manifest_hash = io::get_u64(f);
  ck.seed = io::get_u64(f);
  ck.next_epoch = io::get_u32(f);
  ck.global_step = io::get_u64(f);
  const std::string meta = io::get_string(f);
  try {
    ck.meta = nlohmann::ordered_json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad metadata: ") + e.what());
  }
  ck.tensors = io::read_container(f);
  return ck;
}

}  // namespace avp::train
