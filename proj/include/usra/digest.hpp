#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace usra {

/// Reflected CRC-32 (poly 0xEDB88320), as used by zip/png.
uint32_t crc32(const void* data, std::size_t len, uint32_t seed = 0);

/// SHA-1 hex digest of a byte buffer / file. Used to content-address
/// checkpoints in run manifests.
std::string sha1_hex(const void* data, std::size_t len);
std::string sha1_file_hex(const std::string& path);

}  // namespace usra
