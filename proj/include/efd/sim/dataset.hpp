#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efd/config.hpp"
#include "efd/sim/types.hpp"

namespace efd {

// On-disk layout (one directory per dataset):
//   manifest  json: format tag, config hash, sample count, tensor shapes,
//             endianness tag, plus the run manifest fields
//   labels    one json record per line: speed, command, target point,
//             waypoints, control, target speed, latent feature, image offsets
//   images    flat 32-bit little-endian floats, per sample main then side
struct DatasetSample {
    Observation obs;
    ExpertLabel label;
};

class DatasetWriter {
public:
    DatasetWriter(const std::string& dir, const Config& cfg, std::uint64_t seed,
                  const std::string& command_line);
    ~DatasetWriter();

    void add(const DatasetSample& s);
    void finalize();
    // Remove partial files (expert failure mid-collection).
    void abort();
    std::size_t count() const { return count_; }

private:
    std::string dir_;
    Config cfg_;
    std::uint64_t seed_;
    std::string command_line_;
    std::size_t count_ = 0;
    std::uint64_t image_bytes_ = 0;
    bool open_ = false;
    void* labels_ = nullptr;  // FILE*
    void* images_ = nullptr;  // FILE*
};

class DatasetReader {
public:
    explicit DatasetReader(const std::string& dir);

    std::size_t size() const { return records_.size(); }
    DatasetSample read(std::size_t i) const;
    const std::string& config_hash() const { return config_hash_; }
    int raster_cells() const { return raster_cells_; }

private:
    struct Record {
        double speed;
        int command;
        Vec2 target;
        std::vector<Vec2> waypoints;
        double throttle, steer, brake;
        double target_speed;
        std::array<double, 8> latent;
        std::uint64_t image_offset;
        std::uint64_t image_bytes;
    };
    std::string dir_;
    std::string config_hash_;
    int raster_cells_ = 64;
    std::size_t floats_per_view_ = 0;
    std::vector<Record> records_;
};

// Drive the expert over every route and record (observation, label) pairs at
// the sample rate. The expert must finish each route cleanly; any expert
// infraction or timeout aborts and removes the partial dataset.
std::size_t collect_dataset(const std::vector<Route>& routes, const Config& cfg,
                            const std::string& out_dir, std::uint64_t seed,
                            const std::string& command_line);

// Shared closed-loop wall: generous sim-time budget per route.
double route_time_limit(const Route& r, const SimConfig& cfg);

}  // namespace efd
