#pragma once

#include "srr/model.hpp"

#include "json.hpp"

#include <filesystem>

namespace srr {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;

Json        to_json(ModelConfig const &c);
ModelConfig model_config_from_json(Json const &j, ModelConfig defaults = {});

/// Checkpoint layout (JSON):
///   { "format": "srr-checkpoint", "version": 1,
///     "config": {...ModelConfig...},
///     "params":  { name: {"rows": r, "cols": c, "data": [column-major]} },
///     "initial": { same as params, the init snapshot } }
Json  checkpoint_to_json(Model const &model);
Model checkpoint_from_json(Json const &j);

void  save_checkpoint(Model const &model, std::filesystem::path const &path);
Model load_checkpoint(std::filesystem::path const &path);

/// Writes to a sibling temporary and renames it over the target.
void write_file_atomic(std::filesystem::path const &path, std::string const &content);
std::string read_file(std::filesystem::path const &path);

} // namespace srr
