#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cdt/adam.hpp"

namespace cdt {

// A checkpoint is a directory holding manifest.json plus params.bin. The
// manifest records the format version, a kind tag ("diffusion" | "cd"), a
// config echo, and a name-sorted parameter index with shapes and byte
// offsets into params.bin (concatenated CDT1 blobs). Values round-trip
// bit-exactly.

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json manifest;
  ParamMap params; // loaded as trainable parameters (fresh leaf ids)
};

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                     const nlohmann::json& config_echo, const ParamMap& params);

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Convenience: load + kind check (io_error mentioning the path on mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& dir, const std::string& expect_kind);

} // namespace cdt
