#pragma once

#include <map>
#include <string>

#include "fb/tensor.hpp"

namespace fb {

// Ordered map: serialization order is the key order, so identical contents
// always produce identical bytes.
using TensorMap = std::map<std::string, Tensor>;

// File layout: magic "FBCHKPT1", then per tensor: u64 name length, name bytes,
// u64 rank, u64 extents, row-major f32 data. All integers and floats are
// little-endian. Written atomically (temp file + rename).
void checkpoint_save(const std::string &path, const TensorMap &tensors);
TensorMap checkpoint_load(const std::string &path);

}  // namespace fb
