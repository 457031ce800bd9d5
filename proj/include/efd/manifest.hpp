#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace efd {

// Run provenance stamped into every artifact directory: command, config
// hash, seed, tool version, timestamps, output paths. Timestamps are the one
// field allowed to differ between reproducing runs.
nlohmann::json run_manifest_json(const std::string& command_line, const std::string& config_hash,
                                 std::uint64_t seed, const std::vector<std::string>& outputs);

// Writes <dir>/manifest (creating dir), unless the artifact already embeds
// its run block in a file of that name.
void write_run_manifest(const std::string& dir, const std::string& command_line,
                        const std::string& config_hash, std::uint64_t seed,
                        const std::vector<std::string>& outputs);

}  // namespace efd
