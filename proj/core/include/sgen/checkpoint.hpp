#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "sgen/numerics.hpp"

namespace sgen {

inline constexpr const char* kCheckpointVersion = "1";

// Parameter checkpoints are JSON: {"version", "format": "sgen-params", "meta": {...},
// "params": [{"name", "rows", "cols", "data": [...]}]}. Doubles are written with
// round-trip precision, so save/load is exact.
nlohmann::json params_to_json(const ParameterStore& params);
/// Overwrites values of `params` in place; names and shapes must match.
void params_from_json(const nlohmann::json& j, ParameterStore& params);
/// Builds a fresh store from the file contents (no layout required).
ParameterStore params_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const nlohmann::json& meta = nlohmann::json::object());
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace sgen
