#pragma once

#include <stdexcept>
#include <string>

#include "lsvis/adam.hpp"

namespace lsvis::ckpt {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary format: magic "LFCK", u32 version=1, u32 entry count; per entry
// u32 name length + UTF-8 name, u32 rank, u32 dims, then raw little-endian
// f32 data. All integers little-endian.
void save_checkpoint(const nd::ParamMap<float>& params, const std::string& path);
nd::ParamMap<float> load_checkpoint(const std::string& path);

}  // namespace lsvis::ckpt
