#include "efd/manifest.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "efd/common.hpp"

namespace efd {

using nlohmann::json;

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

json run_manifest_json(const std::string& command_line, const std::string& config_hash,
                       std::uint64_t seed, const std::vector<std::string>& outputs) {
    json j;
    j["command"] = command_line;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["tool"] = "efdrive";
    j["version"] = kVersion;
    j["created_utc"] = utc_now();
    j["outputs"] = outputs;
    return j;
}

void write_run_manifest(const std::string& dir, const std::string& command_line,
                        const std::string& config_hash, std::uint64_t seed,
                        const std::vector<std::string>& outputs) {
    std::filesystem::create_directories(dir);
    json j;
    j["run"] = run_manifest_json(command_line, config_hash, seed, outputs);
    std::ofstream out(std::filesystem::path(dir) / "manifest");
    if (!out) throw IoError("manifest: cannot write in " + dir);
    out << j.dump(2) << "\n";
}

}  // namespace efd
