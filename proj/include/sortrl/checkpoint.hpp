#pragma once

#include <string>

#include "sortrl/optim.hpp"

namespace sortrl {

// Length-prefixed binary container for named f64 tensors.
//
//   magic "SRTL" | version u32 | count u32 |
//   per entry: name_len u32 | name bytes | rank u32 | dims u64[] | f64 data[]
//
// All integers and floats are little-endian.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& params);

// Loads every entry; tensors come back without gradients.
ParamStore load_checkpoint(const std::string& path);

}  // namespace sortrl
