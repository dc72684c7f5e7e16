#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "ctcd/model_config.hpp"
#include "ctcd/optim.hpp"

namespace ctcd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Little-endian binary: "CTCD", u32 version, u32 count, tensors, JSON footer
/// with the model config, u64 footer offset.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const ModelConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace ctcd
