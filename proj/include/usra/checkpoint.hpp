#pragma once

#include <string>
#include <vector>

#include "usra/models.hpp"
#include "usra/tensor.hpp"

namespace usra {

// Binary checkpoint layout (all integers little-endian):
//   magic "USRA1" (5 bytes)
//   u32 format version
//   u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 rank, u32 extent per axis,
//              raw little-endian f32 data
//   u32 CRC-32 of every preceding byte
// Run metadata rides along as scalar tensors under the "meta/" prefix.

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
    void add(const std::string& name, Tensor t) { entries.emplace_back(name, std::move(t)); }
    void add_meta(const std::string& key, float v) { add("meta/" + key, Tensor::scalar(v)); }
    float meta_or(const std::string& key, float fallback) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
/// Errors: unreadable file -> filesystem; bad magic/CRC/truncation -> corrupt_artifact.
CheckpointData load_checkpoint(const std::string& path);

/// All online + target parameters plus bundle metadata.
CheckpointData bundle_to_checkpoint(ModelBundle& bundle);
/// Rebuilds a bundle (q_input restored from metadata); every parameter must
/// be present with a matching shape.
ModelBundle bundle_from_checkpoint(const CheckpointData& data);

}  // namespace usra
