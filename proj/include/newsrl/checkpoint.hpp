#pragma once

#include <string>

#include "newsrl/optim.hpp"

namespace newsrl {

// Checkpoint file: a single JSON document
//   { "format": "newsrl-checkpoint-v1",
//     "header": { ... caller-owned metadata ... },
//     "params": { "<name>": { "shape": [..], "values": [..] }, ... } }
// Doubles round-trip exactly through the JSON encoder, so a reloaded
// checkpoint reproduces forward passes bit-exactly.

std::string checkpoint_to_json(const ParamSet& params, const std::string& header_json);
void checkpoint_from_json(const std::string& text, ParamSet& params, std::string& header_json);

void save_checkpoint(const std::string& path, const ParamSet& params, const std::string& header_json);
// Returns the header JSON; fills params.
std::string load_checkpoint(const std::string& path, ParamSet& params);

} // namespace newsrl
