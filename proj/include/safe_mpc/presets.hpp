#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "safe_mpc/config.hpp"
#include "safe_mpc/presets_data.hpp"

namespace safe_mpc {

inline std::vector<std::string_view> preset_names() {
  std::vector<std::string_view> names;
  for (const auto& p : generated::kPresets) names.push_back(p.name);
  return names;
}

/// Text of a bundled preset; throws ConfigError for an unknown name.
inline std::string_view preset_text(std::string_view name) {
  for (const auto& p : generated::kPresets) {
    if (p.name == name) return p.text;
  }
  std::string known;
  for (const auto& p : generated::kPresets) known += (known.empty() ? "" : ", ") + std::string(p.name);
  throw ConfigError("unknown preset '" + std::string(name) + "' (available: " + known + ")");
}

inline ExperimentConfig load_preset(std::string_view name) { return parse_config(preset_text(name)); }

/// Loads `ref` as a file when one exists at that path, otherwise as a preset name.
inline ExperimentConfig load_config(const std::string& ref) {
  if (std::filesystem::is_regular_file(ref)) {
    try {
      return parse_config(read_text_file(ref));
    } catch (const ConfigError& e) {
      throw ConfigError(ref + ": " + e.what());
    }
  }
  return load_preset(ref);
}

}  // namespace safe_mpc
