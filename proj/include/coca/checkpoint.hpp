#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coca/tensor.hpp"

namespace coca {

// Checkpoint container, version 1. Little-endian throughout:
//
//   "COCACKPT"                       8 bytes
//   u32 version                      (= 1)
//   u64 payload_bytes
//   payload:
//     u32 meta_count, then per entry (sorted by key):  u32 len, key, u32 len, value
//     u32 tensor_count, then per tensor (in insertion order):
//         u32 len, name, u32 rank, u64 dims[rank], f32 values[prod(dims)]
//   u32 crc32(payload)
//
// Identical contents always serialize to identical bytes.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
    const std::string& get(const std::string& key) const;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Writes to <path>.partial, then renames over <path>.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(const std::string& bytes);

// Writes text to <path>.partial and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace coca
