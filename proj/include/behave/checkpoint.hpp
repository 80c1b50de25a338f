#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "behave/flow.hpp"
#include "behave/json_io.hpp"
#include "behave/nn.hpp"
#include "behave/training.hpp"

namespace behave {

inline constexpr int kCheckpointSchema = 1;

/// Writes `<path>` (JSON manifest) and `<path>.bin` (parameters as
/// little-endian f64, blocks in manifest order, each row-major).
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nn::ParameterStore& store,
                     const Json& hyperparams, const std::string& rng_state);

/// Reads the manifest. Throws MissingArtifact or FormatError.
Json read_manifest(const std::filesystem::path& path, const std::string& kind);

/// Fills `store` from the blob after checking names and shapes against the manifest.
void load_parameters(const std::filesystem::path& path, const Json& manifest, nn::ParameterStore& store);

std::filesystem::path blob_path(const std::filesystem::path& manifest);

std::string history_jsonl(const std::vector<VbbRecord>& history);
std::string history_jsonl(const std::vector<FlowRecord>& history);

}  // namespace behave
