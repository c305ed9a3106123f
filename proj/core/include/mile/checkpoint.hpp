#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mile/tensor.hpp"

namespace mile {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Raw contents of a checkpoint file.
///
///   "MILO1"
///   u64 length, config JSON (UTF-8)
///   u32 count, then per tensor:
///     u32 name length, name, u32 rank, u64 dims[rank], f64 values[]
///   optional optimizer section:
///     "OPT1", u64 step, u32 count, tensors as above
///
/// All integers and floats are little-endian.
struct CheckpointFile {
  std::string config_json;
  std::vector<NamedTensor> tensors;
  std::optional<std::uint64_t> optimizer_step;
  std::vector<NamedTensor> optimizer_tensors;
};

void write_checkpoint_file(const std::string& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::string& path);

}  // namespace mile
