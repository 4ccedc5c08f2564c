#pragma once

#include <string>
#include <vector>

#include "dml/tensor.hpp"

namespace dml {

// VPCK container: magic "VPCK", u32 version = 1, u32 entry count; per entry
// u16 name length, UTF-8 name, u8 rank, rank x u64 dims, u8 dtype (0 = f32
// little-endian), raw payload. All integers little-endian.
struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

}  // namespace dml
