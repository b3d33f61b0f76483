#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "reslt/trainer.hpp"

namespace reslt {

/// JSON form of a TrainConfig. Keys mirror the struct field names; `variant`
/// is either a preset name or an object overriding preset fields, and
/// `schedule` carries a `type` of "warmup_step" or "cosine".
nlohmann::ordered_json config_to_json(const TrainConfig& config);

/// Overlays keys present in `j` onto `base`. Unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = TrainConfig::desk_preset());
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = TrainConfig::desk_preset());

nlohmann::ordered_json variant_to_json(const VariantConfig& variant);
VariantConfig variant_from_json(const nlohmann::json& j);

}  // namespace reslt
