#pragma once

#include <memory>
#include <string>

#include "mcan/model.hpp"
#include "mcan/text.hpp"

namespace mcan {

// Single-file archive: a text header with the run configuration and the
// vocabulary, followed by named tensors as shape lines plus raw little-endian
// 64-bit floats. A reloaded checkpoint reproduces scores bit-for-bit.
void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab);

struct LoadedCheckpoint {
    ModelConfig config;
    Vocabulary vocab;
    std::unique_ptr<Model> model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// String forms used by both the checkpoint header and the CLI.
std::string casts_to_string(const CastSet& casts);
CastSet casts_from_string(const std::string& text);
Compression compression_from_string(const std::string& text);
AffinityKind affinity_from_string(const std::string& text);

}  // namespace mcan
