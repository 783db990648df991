#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "r3/tensor.hpp"

namespace r3 {

/// Versioned binary container shared by every model kind.
///
/// Layout (little-endian): magic "R3CKPT\0\0", u32 version, u64 config
/// fingerprint, kind, u64 epoch, f64 best validation RMSE, u64 optimizer step,
/// config key/values, tensor count, then per tensor: name, u32 rank, u64 dims,
/// f64 data. Strings are u32 length + bytes. A trailing u64 FNV-1a checksum
/// covers everything before it.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string kind;  // "r3", "pmf", "stats"
    std::map<std::string, std::string> config;
    std::uint64_t epoch = 0;
    double best_valid_rmse = 0.0;
    std::uint64_t optimizer_steps = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    /// Stable hash of the normalized config key/values.
    std::uint64_t fingerprint() const;

    bool has(const std::string& name) const;
    /// LookupError naming the tensor when absent.
    const Tensor& tensor(const std::string& name) const;
    void add(std::string name, Tensor t);
    std::vector<std::string> tensor_names() const;
};

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t config_fingerprint(const std::map<std::string, std::string>& config);

std::string serialize_checkpoint(const Checkpoint& c);
/// CorruptionError on bad magic, version, checksum, fingerprint or truncation.
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling, then renames.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace r3
