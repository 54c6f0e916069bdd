#pragma once

#include <string>
#include <vector>

#include "usra/trainer.hpp"

namespace usra {

// Config files are flat UTF-8 `key = value` lines; `#` starts a comment.
// Unknown or duplicate keys are hard errors carrying the line number.

TrainConfig parse_config_text(const std::string& text, const std::string& source_name);
TrainConfig parse_config_file(const std::string& path);

/// Snapshot of every config key, one `key = value` per line, stable order.
std::string config_to_text(const TrainConfig& config);

/// key = value manifest, written to a temp file then renamed into place.
void write_manifest_atomic(const std::string& path, const std::vector<std::pair<std::string, std::string>>& fields);

}  // namespace usra
