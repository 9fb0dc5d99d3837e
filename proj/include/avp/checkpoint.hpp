// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file. Little-endian layout:
//   "AVCK" | u32 version | u64 manifest_hash | u64 seed | u32 next_epoch
//   | u64 global_step | u32 meta_len | meta JSON bytes | tensor container
// Tensor names carry a section prefix: param/, velocity/, state/.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avp/tensor_io.hpp"

namespace avp::train {

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t manifest_hash = 0;
  std::uint64_t seed = 0;
  std::uint32_t next_epoch = 0;
  std::uint64_t global_step = 0;
  nlohmann::ordered_json meta;  // model config, ablation flags, class count
  std::vector<io::NamedTensor> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace avp::train
