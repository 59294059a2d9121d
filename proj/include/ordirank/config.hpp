#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ordirank/pipeline.hpp"

namespace ordirank {

// Flat key=value text, one key per line, '#' starts a comment. Keys not present
// keep their defaults; unknown keys and malformed values throw ConfigError.
// Architecture keys are prefixed, e.g. stage1.blocks=8,16,32 or stage2.fc_size=256.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Every key, in a fixed order. parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const RunConfig& config);

// Applies one key=value assignment to `config`.
void apply_config_entry(RunConfig& config, std::string_view key, std::string_view value);

}  // namespace ordirank
