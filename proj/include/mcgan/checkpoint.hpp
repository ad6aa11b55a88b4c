#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcgan/nn.hpp"

namespace mcgan {

/// One file: a text manifest terminated by "end\n", followed by every array
/// as raw little-endian float64 values in manifest order (row-major).
struct Checkpoint {
  std::string description;
  std::uint64_t seed = 0;
  long iteration = 0;
  std::vector<std::pair<std::string, ParamStore>> stores;

  const ParamStore& store(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace mcgan
