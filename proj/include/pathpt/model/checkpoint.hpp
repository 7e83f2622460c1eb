#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "pathpt/tensor.hpp"

namespace pathpt::model {

// Layout: "PTCK", u32 version, u32 header length, JSON header, then for each
// tensor: u32 name length, name, u32 rows, u32 cols, rows*cols f32 values.
// All integers and floats little-endian.
struct CheckpointHeader {
    std::string kind;  // "pathpt", "abmil_gated", "mean_pool"
    std::size_t feature_dim = 0;
    std::size_t token_dim = 0;
    std::size_t context_length = 0;
    std::size_t num_classes = 0;
    std::size_t heads = 0;
    double tau = 0.0;
    bool use_spatial = false;
    bool use_learnable_prompts = false;

    friend bool operator==(const CheckpointHeader&, const CheckpointHeader&) = default;
};

struct Checkpoint {
    CheckpointHeader header;
    std::map<std::string, Matrix> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                      std::span<const Parameter* const> params);

// Throws LoadError on a malformed or truncated file.
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies tensors into params by name. Throws LoadError when the header
// differs from `expected` or a tensor is missing, extra or mis-shaped.
void restore_parameters(const Checkpoint& ckpt, const CheckpointHeader& expected, std::span<Parameter* const> params);

}  // namespace pathpt::model
