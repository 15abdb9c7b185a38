#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attnseg/tensor.hpp"

namespace attnseg {

// Flat tensor format: magic "ATNS", version u32, rank u32, extents as u64
// list, then the values as little-endian 64-bit reals.
void write_atns(std::ostream& os, const Tensor& t);
Tensor read_atns(std::istream& is);
void save_atns(const std::string& path, const Tensor& t);
Tensor load_atns(const std::string& path);

using NamedTensor = std::pair<std::string, Tensor>;

// Checkpoint: magic "ATCK", version u32, manifest length u64, manifest JSON
// ({"tensors": {name: {offset, shape}}, "config": {...}}), then the named
// tensors as consecutive ATNS records at the stated offsets.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& config);

struct CheckpointData {
    std::vector<NamedTensor> tensors;
    nlohmann::json config;

    const Tensor* find(const std::string& name) const;
};

CheckpointData load_checkpoint(const std::string& path);

} // namespace attnseg
