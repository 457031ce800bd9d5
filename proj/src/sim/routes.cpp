#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efd/sim/types.hpp"
#include "json.hpp"

namespace efd {

using nlohmann::json;
namespace fs = std::filesystem;

std::string command_name(Command c) {
    switch (c) {
        case Command::Follow: return "follow";
        case Command::Left: return "left";
        case Command::Right: return "right";
        case Command::Straight: return "straight";
        case Command::ChangeLeft: return "change_left";
        case Command::ChangeRight: return "change_right";
    }
    return "follow";
}

Command command_from_name(const std::string& s) {
    for (int i = 0; i < 6; ++i)
        if (command_name(static_cast<Command>(i)) == s) return static_cast<Command>(i);
    throw IoError("route: unknown command '" + s + "'");
}

void Route::compute_arclengths() {
    arc_.assign(vertices.size(), 0.0);
    for (size_t i = 1; i < vertices.size(); ++i)
        arc_[i] = arc_[i - 1] + (vertices[i].p - vertices[i - 1].p).norm();
}

double Route::length() const { return arc_.empty() ? 0.0 : arc_.back(); }

Vec2 Route::point_at(double s) const {
    if (vertices.empty()) throw IoError("route: empty polyline");
    if (s <= 0) return vertices.front().p;
    if (s >= length()) return vertices.back().p;
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const size_t i = static_cast<size_t>(it - arc_.begin());
    const double seg = arc_[i] - arc_[i - 1];
    const double t = seg > 0 ? (s - arc_[i - 1]) / seg : 0.0;
    return vertices[i - 1].p + (vertices[i].p - vertices[i - 1].p) * t;
}

double Route::heading_at(double s) const {
    const double len = length();
    s = clamp(s, 0.0, len);
    size_t i = 1;
    if (s > 0) {
        const auto it = std::upper_bound(arc_.begin(), arc_.end(), std::min(s, len - 1e-9));
        i = static_cast<size_t>(it - arc_.begin());
        i = std::min(i, vertices.size() - 1);
    }
    const Vec2 d = vertices[i].p - vertices[i - 1].p;
    return std::atan2(d.y, d.x);
}

Command Route::command_at(double s) const {
    if (vertices.empty()) return Command::Follow;
    // Command of the next vertex ahead of s.
    for (size_t i = 0; i < arc_.size(); ++i)
        if (arc_[i] >= s) return vertices[i].cmd;
    return vertices.back().cmd;
}

std::pair<Vec2, Vec2> Route::stop_line_at(double s, double halfwidth) const {
    const Vec2 c = point_at(s);
    const double h = heading_at(s);
    const Vec2 n{-std::sin(h), std::cos(h)};
    return {c + n * halfwidth, c + n * (-halfwidth)};
}

Route route_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("route: parse failure: ") + e.what());
    }
    Route r;
    r.name = j.value("name", "route");
    r.seed = j.value("seed", 0ULL);
    if (!j.contains("vertices") || !j.at("vertices").is_array() || j.at("vertices").size() < 2)
        throw IoError("route: needs at least 2 vertices");
    for (const auto& v : j.at("vertices")) {
        RouteVertex rv;
        rv.p = {v.at("x").get<double>(), v.at("y").get<double>()};
        rv.cmd = command_from_name(v.value("cmd", "follow"));
        r.vertices.push_back(rv);
    }
    for (const auto& l : j.value("lights", json::array())) {
        TrafficLightSpec s;
        s.route_s = l.at("s").get<double>();
        s.green = l.value("green", 8.0);
        s.yellow = l.value("yellow", 3.0);
        s.red = l.value("red", 6.0);
        s.offset = l.value("offset", 0.0);
        r.lights.push_back(s);
    }
    for (const auto& l : j.value("stop_signs", json::array())) {
        StopSignSpec s;
        s.route_s = l.at("s").get<double>();
        r.stop_signs.push_back(s);
    }
    for (const auto& a : j.value("actors", json::array())) {
        ActorSpec s;
        const std::string kind = a.value("kind", "vehicle");
        s.kind = kind == "pedestrian" ? ActorKind::Pedestrian
                 : kind == "static"   ? ActorKind::Static
                                      : ActorKind::Vehicle;
        for (const auto& p : a.at("path"))
            s.path.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
        if (s.path.empty()) throw IoError("route: actor with empty path");
        s.speed = a.value("speed", 0.0);
        s.trigger_progress = a.value("trigger_progress", -1.0);
        s.trigger_time = a.value("trigger_time", -1.0);
        s.radius = a.value("radius", s.kind == ActorKind::Pedestrian ? 0.4 : 1.0);
        r.actors.push_back(s);
    }
    r.compute_arclengths();
    return r;
}

Route route_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("route: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    Route r = route_from_json_text(ss.str());
    if (r.name == "route") r.name = fs::path(path).stem().string();
    return r;
}

std::string route_to_json(const Route& r) {
    json j;
    j["name"] = r.name;
    j["seed"] = r.seed;
    json vs = json::array();
    for (const auto& v : r.vertices)
        vs.push_back({{"x", v.p.x}, {"y", v.p.y}, {"cmd", command_name(v.cmd)}});
    j["vertices"] = vs;
    json ls = json::array();
    for (const auto& l : r.lights)
        ls.push_back({{"s", l.route_s},
                      {"green", l.green},
                      {"yellow", l.yellow},
                      {"red", l.red},
                      {"offset", l.offset}});
    j["lights"] = ls;
    json ss = json::array();
    for (const auto& s : r.stop_signs) ss.push_back({{"s", s.route_s}});
    j["stop_signs"] = ss;
    json as = json::array();
    for (const auto& a : r.actors) {
        json p = json::array();
        for (const auto& v : a.path) p.push_back({{"x", v.x}, {"y", v.y}});
        as.push_back({{"kind", a.kind == ActorKind::Pedestrian ? "pedestrian"
                               : a.kind == ActorKind::Static  ? "static"
                                                              : "vehicle"},
                      {"path", p},
                      {"speed", a.speed},
                      {"trigger_progress", a.trigger_progress},
                      {"trigger_time", a.trigger_time},
                      {"radius", a.radius}});
    }
    j["actors"] = as;
    return j.dump(1);
}

std::vector<Route> load_routes(const std::string& dir_or_file) {
    std::vector<Route> out;
    fs::path p(dir_or_file);
    if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(p))
            if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back(route_from_file(f.string()));
    } else if (fs::exists(p)) {
        out.push_back(route_from_file(p.string()));
    } else {
        throw IoError("routes: no such file or directory: " + dir_or_file);
    }
    if (out.empty()) throw IoError("routes: no .json routes in " + dir_or_file);
    return out;
}

std::string infraction_name(InfractionType t) {
    switch (t) {
        case InfractionType::CollisionPedestrian: return "collision_pedestrian";
        case InfractionType::CollisionVehicle: return "collision_vehicle";
        case InfractionType::CollisionStatic: return "collision_static";
        case InfractionType::RedLight: return "red_light";
        case InfractionType::StopSign: return "stop_sign";
        case InfractionType::RouteDeviation: return "route_deviation";
        case InfractionType::Blocked: return "blocked";
    }
    return "unknown";
}

double infraction_penalty(InfractionType t, const InfractionPenalties& p) {
    switch (t) {
        case InfractionType::CollisionPedestrian: return p.pedestrian;
        case InfractionType::CollisionVehicle: return p.vehicle;
        case InfractionType::CollisionStatic: return p.static_obj;
        case InfractionType::RedLight: return p.red_light;
        case InfractionType::StopSign: return p.stop_sign;
        // Terminal events truncate RC but carry no multiplicative factor.
        case InfractionType::RouteDeviation:
        case InfractionType::Blocked: return 1.0;
    }
    return 1.0;
}

double driving_score(double rc, const std::vector<Infraction>& infractions,
                     const InfractionPenalties& p) {
    double ds = rc;
    for (const auto& inf : infractions) ds *= infraction_penalty(inf.type, p);
    return ds;
}

}  // namespace efd
