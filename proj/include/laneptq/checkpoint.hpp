#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "laneptq/quant.hpp"
#include "laneptq/tensor.hpp"

namespace laneptq {

/// Flat binary checkpoint, little-endian throughout:
///   magic "LQCK", u32 version, u32 tensor count,
///   per tensor: u32 name length, name bytes, u32 rank, u64 extents, f64 data;
///   then a quantizer section: u32 spec count, per spec
///   (u32 name length, name, u32 bits, f64 scale, u8 target);
///   then u64 config hash, u64 seed.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  QuantTable quant;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace laneptq
