#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpfgvc/optim.hpp"
#include "mpfgvc/tensor.hpp"

namespace mpfgvc {

// Checkpoint file: "MPFG" magic, u32 version, u64 header length, JSON index
// header, then raw little-endian float64 payload. The header carries one
// (name, shape, offset, count) record per tensor plus an optional free-form
// "config" object for whoever wrote the file.
void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& params,
                     const std::string& config_json = "{}");

struct CheckpointRecord {
    std::string name;
    Shape shape;
    Tensor tensor;
};

struct Checkpoint {
    std::string config_json;
    std::vector<CheckpointRecord> records;

    const Tensor* find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values by name into the given parameters; every parameter must be
// present in the checkpoint with a matching shape.
void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params);

}  // namespace mpfgvc
