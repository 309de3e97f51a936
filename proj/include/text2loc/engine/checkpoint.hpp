#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "text2loc/engine/adam.hpp"
#include "text2loc/engine/nn.hpp"
#include "text2loc/engine/tensor.hpp"

namespace text2loc::engine {

/*
 * Checkpoint file layout (all integers little-endian):
 *
 *   bytes 0-7   magic "T2LCKPT\0"
 *   u32         format version (kCheckpointVersion)
 *   u32         metadata entry count, then per entry: u32 len + key, u32 len + value
 *   u32         tensor count, then per tensor:
 *                 u32 len + name, u32 rank, u64 dims[rank], f64 values[prod(dims)]
 *   u32         CRC-32 of every preceding byte
 */
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint
{
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/* Throws CheckpointError on bad magic, version, checksum or truncation */
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/* Parameters plus, when given, the optimizer moments ("adam.m/<name>", "adam.v/<name>") */
Checkpoint make_checkpoint(const ParameterSet& params, const AdamState* adam,
                           std::map<std::string, std::string> metadata);

/* Copies every parameter value from the checkpoint; names and shapes must match exactly */
void restore_parameters(const Checkpoint& checkpoint, ParameterSet& params);
AdamState restore_adam(const Checkpoint& checkpoint, const ParameterSet& params);

} // namespace text2loc::engine
