#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctrlgs/trainer.hpp"

namespace ctrlgs {

/// Flat key/value view of TrainConfig; every key is always present.
nlohmann::json config_to_json(const TrainConfig& config);

/// Applies the keys present in `j` on top of `base`. Unknown keys and
/// ill-typed values raise kConfig.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Applies "key=value" overrides; the value is parsed as JSON, falling back to a string.
TrainConfig apply_overrides(TrainConfig config, const std::vector<std::string>& assignments);

/// Defaults, then the optional file, then the overrides; the result is validated.
TrainConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

void write_config(const std::filesystem::path& path, const TrainConfig& config);

}  // namespace ctrlgs
