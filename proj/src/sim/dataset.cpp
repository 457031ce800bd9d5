#include "efd/sim/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efd/manifest.hpp"
#include "efd/sim/expert.hpp"
#include "json.hpp"

namespace efd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_little_endian() {
    const std::uint32_t probe = 1;
    if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
        throw IoError("dataset: this build assumes a little-endian host");
}

}  // namespace

DatasetWriter::DatasetWriter(const std::string& dir, const Config& cfg, std::uint64_t seed,
                             const std::string& command_line)
    : dir_(dir), cfg_(cfg), seed_(seed), command_line_(command_line) {
    check_little_endian();
    fs::create_directories(dir_);
    labels_ = std::fopen((fs::path(dir_) / "labels").string().c_str(), "wb");
    images_ = std::fopen((fs::path(dir_) / "images").string().c_str(), "wb");
    if (!labels_ || !images_) throw IoError("dataset: cannot create files in " + dir_);
    open_ = true;
}

DatasetWriter::~DatasetWriter() {
    if (open_) abort();
}

void DatasetWriter::add(const DatasetSample& s) {
    if (!open_) throw IoError("dataset: writer is closed");
    const std::size_t main_n = s.obs.main.size(), side_n = s.obs.side.size();
    const std::uint64_t bytes = static_cast<std::uint64_t>((main_n + side_n) * sizeof(float));
    json r;
    r["speed"] = s.obs.speed;
    r["command"] = static_cast<int>(s.obs.command);
    r["target"] = {s.obs.target.x, s.obs.target.y};
    json wps = json::array();
    for (const auto& w : s.label.waypoints) wps.push_back({w.x, w.y});
    r["waypoints"] = wps;
    r["control"] = {s.label.control.throttle, s.label.control.steer, s.label.control.brake};
    r["target_speed"] = s.label.target_speed;
    r["latent"] = s.label.latent;
    r["image_offset"] = image_bytes_;
    r["image_bytes"] = bytes;
    const std::string line = r.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), static_cast<std::FILE*>(labels_)) != line.size())
        throw IoError("dataset: label write failed");
    if (std::fwrite(s.obs.main.data(), sizeof(float), main_n, static_cast<std::FILE*>(images_)) !=
            main_n ||
        std::fwrite(s.obs.side.data(), sizeof(float), side_n, static_cast<std::FILE*>(images_)) !=
            side_n)
        throw IoError("dataset: image write failed");
    image_bytes_ += bytes;
    count_ += 1;
}

void DatasetWriter::finalize() {
    if (!open_) return;
    std::fclose(static_cast<std::FILE*>(labels_));
    std::fclose(static_cast<std::FILE*>(images_));
    open_ = false;
    const int n = cfg_.sim.raster_cells;
    json m;
    m["format"] = "efdrive-dataset-v1";
    m["config_hash"] = config_hash(cfg_);
    m["samples"] = count_;
    m["main_shape"] = {3, n, n};
    m["side_shape"] = {3, n, n};
    m["endianness"] = "little";
    m["dtype"] = "f32";
    m["waypoints"] = cfg_.model.waypoints;
    m["latent_dim"] = cfg_.model.latent_dim;
    m["run"] = run_manifest_json(command_line_, config_hash(cfg_), seed_,
                                 {dir_ + "/labels", dir_ + "/images"});
    std::ofstream out(fs::path(dir_) / "manifest");
    if (!out) throw IoError("dataset: cannot write manifest");
    out << m.dump(2) << "\n";
}

void DatasetWriter::abort() {
    if (open_) {
        std::fclose(static_cast<std::FILE*>(labels_));
        std::fclose(static_cast<std::FILE*>(images_));
        open_ = false;
    }
    std::error_code ec;
    fs::remove(fs::path(dir_) / "labels", ec);
    fs::remove(fs::path(dir_) / "images", ec);
    fs::remove(fs::path(dir_) / "manifest", ec);
}

DatasetReader::DatasetReader(const std::string& dir) : dir_(dir) {
    check_little_endian();
    std::ifstream mf(fs::path(dir_) / "manifest");
    if (!mf) throw IoError("dataset: missing manifest in " + dir);
    json m;
    try {
        mf >> m;
    } catch (const json::exception& e) {
        throw IoError(std::string("dataset: bad manifest: ") + e.what());
    }
    if (m.value("format", "") != std::string("efdrive-dataset-v1"))
        throw IoError("dataset: unknown format tag");
    if (m.value("endianness", "") != std::string("little") ||
        m.value("dtype", "") != std::string("f32"))
        throw IoError("dataset: unsupported encoding");
    config_hash_ = m.value("config_hash", "");
    const auto shape = m.at("main_shape").get<std::vector<int>>();
    raster_cells_ = shape.at(1);
    floats_per_view_ = static_cast<std::size_t>(shape.at(0)) * shape.at(1) * shape.at(2);
    const std::size_t expected = m.value("samples", std::size_t{0});

    std::ifstream lf(fs::path(dir_) / "labels");
    if (!lf) throw IoError("dataset: missing labels in " + dir);
    std::string line;
    while (std::getline(lf, line)) {
        if (line.empty()) continue;
        json r;
        try {
            r = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(std::string("dataset: bad label record: ") + e.what());
        }
        Record rec;
        rec.speed = r.at("speed").get<double>();
        rec.command = r.at("command").get<int>();
        rec.target = {r.at("target")[0].get<double>(), r.at("target")[1].get<double>()};
        for (const auto& w : r.at("waypoints"))
            rec.waypoints.push_back({w[0].get<double>(), w[1].get<double>()});
        rec.throttle = r.at("control")[0].get<double>();
        rec.steer = r.at("control")[1].get<double>();
        rec.brake = r.at("control")[2].get<double>();
        rec.target_speed = r.at("target_speed").get<double>();
        for (size_t i = 0; i < 8; ++i) rec.latent[i] = r.at("latent")[i].get<double>();
        rec.image_offset = r.at("image_offset").get<std::uint64_t>();
        rec.image_bytes = r.at("image_bytes").get<std::uint64_t>();
        records_.push_back(std::move(rec));
    }
    if (expected != records_.size())
        throw IoError("dataset: manifest count " + std::to_string(expected) +
                      " != label records " + std::to_string(records_.size()));
}

DatasetSample DatasetReader::read(std::size_t i) const {
    if (i >= records_.size()) throw IoError("dataset: sample index out of range");
    const Record& r = records_[i];
    DatasetSample s;
    s.obs.speed = r.speed;
    s.obs.command = static_cast<Command>(r.command);
    s.obs.target = r.target;
    s.obs.raster_cells = raster_cells_;
    s.label.waypoints = r.waypoints;
    s.label.control.throttle = r.throttle;
    s.label.control.steer = r.steer;
    s.label.control.brake = r.brake;
    s.label.target_speed = r.target_speed;
    s.label.latent = r.latent;

    std::ifstream im(fs::path(dir_) / "images", std::ios::binary);
    if (!im) throw IoError("dataset: missing images in " + dir_);
    im.seekg(static_cast<std::streamoff>(r.image_offset));
    s.obs.main.resize(floats_per_view_);
    s.obs.side.resize(floats_per_view_);
    im.read(reinterpret_cast<char*>(s.obs.main.data()),
            static_cast<std::streamsize>(floats_per_view_ * sizeof(float)));
    im.read(reinterpret_cast<char*>(s.obs.side.data()),
            static_cast<std::streamsize>(floats_per_view_ * sizeof(float)));
    if (!im) throw IoError("dataset: short image read at sample " + std::to_string(i));
    return s;
}

double route_time_limit(const Route& r, const SimConfig& cfg) {
    return 3.0 * r.length() / cfg.cruise_speed + 30.0 + 12.0 * r.lights.size() +
           8.0 * r.stop_signs.size() + 8.0 * r.actors.size();
}

std::size_t collect_dataset(const std::vector<Route>& routes, const Config& cfg,
                            const std::string& out_dir, std::uint64_t seed,
                            const std::string& command_line) {
    DatasetWriter writer(out_dir, cfg, seed, command_line);
    const SimConfig& sc = cfg.sim;
    const int control_every = std::max(1, static_cast<int>(std::llround(1.0 / (sc.dt * sc.control_hz))));
    const int sample_every = std::max(1, static_cast<int>(std::llround(1.0 / (sc.dt * sc.sample_hz))));
    for (const Route& route : routes) {
        World w = make_world(route, sc);
        ExpertDriver expert(sc);
        const double limit = route_time_limit(route, sc);
        ControlOutput ctrl;
        long tick = 0;
        while (!w.terminated && w.t < limit) {
            if (tick % control_every == 0) ctrl = expert.control(w);
            if (tick % sample_every == 0) {
                DatasetSample s;
                s.obs = observe(w);
                s.label.waypoints = expert.plan_waypoints(w, cfg.model.waypoints);
                s.label.control = ctrl;
                s.label.target_speed = expert.target_speed(w);
                s.label.latent = expert.latent(w);
                writer.add(s);
            }
            step(w, ctrl, sc.dt);
            ++tick;
        }
        bool clean = w.completed;
        for (const auto& inf : w.infractions)
            if (infraction_penalty(inf.type, sc.penalties) < 1.0) clean = false;
        if (!clean) {
            writer.abort();
            throw IoError("dataset: expert failed route '" + route.name +
                          "' (complete=" + std::to_string(w.completed) +
                          ", infractions=" + std::to_string(w.infractions.size()) + ")");
        }
    }
    writer.finalize();
    return writer.count();
}

}  // namespace efd
