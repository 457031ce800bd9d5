// Writes the bundled route suites (routes/train, routes/holdout,
// routes/smoke). Fully deterministic; rerunning reproduces the same files.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "efd/rng.hpp"
#include "efd/sim/types.hpp"

namespace fs = std::filesystem;
using namespace efd;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Builder {
    std::vector<RouteVertex> verts;
    Vec2 pos{0, 0};
    double heading = 0;
    double arc = 0;
    struct StraightLeg {
        double s0, s1;
    };
    std::vector<StraightLeg> straights;

    Builder() { verts.push_back({pos, Command::Follow}); }

    void advance(double dist, Command cmd) {
        pos.x += dist * std::cos(heading);
        pos.y += dist * std::sin(heading);
        arc += dist;
        verts.push_back({pos, cmd});
    }

    void straight(double len, Command cmd = Command::Follow) {
        const double s0 = arc;
        double left = len;
        while (left > 1e-9) {
            const double d = std::min(5.0, left);
            advance(d, cmd);
            left -= d;
        }
        straights.push_back({s0 + 5.0, arc - 5.0});  // keep features off leg ends
    }

    void turn(double angle_rad, double radius) {
        const Command cmd = angle_rad > 0 ? Command::Left : Command::Right;
        // Announce the turn on the approach vertices.
        double marked = 0;
        for (size_t i = verts.size(); i-- > 1 && marked < 15.0;) {
            marked += (verts[i].p - verts[i - 1].p).norm();
            if (verts[i].cmd == Command::Follow) verts[i].cmd = cmd;
        }
        const double total = std::abs(angle_rad);
        const double step = 8.0 * kPi / 180.0;
        double done = 0;
        while (done < total - 1e-9) {
            const double a = std::min(step, total - done);
            heading += angle_rad > 0 ? a : -a;
            advance(radius * a, cmd);
            done += a;
        }
    }

    void lane_change(double offset, Command cmd) {
        // Two small heading nudges over ~18 m.
        const double ang = std::atan2(offset, 9.0);
        heading += ang;
        advance(std::sqrt(81.0 + offset * offset / 4.0), cmd);
        heading -= ang;
        advance(9.0, cmd);
    }

    Route finish(const std::string& name, std::uint64_t seed) {
        Route r;
        r.name = name;
        r.seed = seed;
        r.vertices = verts;
        r.compute_arclengths();
        return r;
    }
};

// Pick a point on a straight leg with margins from the route ends.
double pick_on_straight(Rng& rng, const Builder& b, double total, double lo_margin,
                        double hi_margin) {
    std::vector<std::pair<double, double>> cands;
    for (const auto& leg : b.straights) {
        const double lo = std::max(leg.s0, lo_margin);
        const double hi = std::min(leg.s1, total - hi_margin);
        if (hi - lo > 8.0) cands.push_back({lo, hi});
    }
    if (cands.empty()) return -1;
    const auto& c = cands[rng.uniform_int(static_cast<std::uint32_t>(cands.size()))];
    return rng.uniform(c.first + 4.0, c.second - 4.0);
}

void add_light(Route& r, Rng& rng, double s) {
    TrafficLightSpec l;
    l.route_s = s;
    l.green = 8;
    l.yellow = 3;
    l.red = 6;
    l.offset = rng.uniform(0.0, l.green + l.yellow + l.red);
    r.lights.push_back(l);
}

void add_pedestrian(Route& r, Rng& rng, double s) {
    const Vec2 p = r.point_at(s);
    const double h = r.heading_at(s);
    const Vec2 n{-std::sin(h), std::cos(h)};
    const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    ActorSpec a;
    a.kind = ActorKind::Pedestrian;
    a.path = {p + n * (8.0 * side), p + n * (-8.0 * side)};
    a.speed = 1.4;
    a.trigger_progress = s - 26.0;
    a.radius = 0.4;
    r.actors.push_back(a);
}

void add_crossing_vehicle(Route& r, Rng& rng, double s) {
    const Vec2 p = r.point_at(s);
    const double h = r.heading_at(s);
    const Vec2 n{-std::sin(h), std::cos(h)};
    const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    ActorSpec a;
    a.kind = ActorKind::Vehicle;
    a.path = {p + n * (14.0 * side), p + n * (-14.0 * side)};
    a.speed = 5.0;
    a.trigger_progress = s - 30.0;
    a.radius = 1.0;
    r.actors.push_back(a);
}

Route make_train_route(int idx) {
    const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(idx);
    Rng rng(seed);
    Builder b;
    b.straight(rng.uniform(26.0, 36.0));
    const int legs = 2 + static_cast<int>(rng.uniform_int(3));
    for (int i = 0; i < legs; ++i) {
        const double roll = rng.uniform();
        if (roll < 0.62) {
            const double ang = rng.uniform(25.0, 80.0) * kPi / 180.0 *
                               (rng.uniform() < 0.5 ? 1.0 : -1.0);
            b.turn(ang, rng.uniform(14.0, 22.0));
        } else if (roll < 0.80) {
            // Marked intersection, going straight.
            b.straight(12.0, Command::Straight);
        } else {
            const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
            b.lane_change(3.0 * side,
                          side > 0 ? Command::ChangeLeft : Command::ChangeRight);
        }
        b.straight(rng.uniform(26.0, 44.0));
    }
    b.straight(30.0);
    Route r = b.finish("train_" + std::to_string(idx), seed);
    const double total = r.length();

    if (rng.uniform() < 0.55) {
        const double s = pick_on_straight(rng, b, total, 45.0, 30.0);
        if (s > 0) add_light(r, rng, s);
    }
    const double actor_roll = rng.uniform();
    if (actor_roll < 0.22) {
        const double s = pick_on_straight(rng, b, total, 55.0, 28.0);
        if (s > 0) add_pedestrian(r, rng, s);
    } else if (actor_roll < 0.40) {
        const double s = pick_on_straight(rng, b, total, 60.0, 28.0);
        if (s > 0) add_crossing_vehicle(r, rng, s);
    }
    if (rng.uniform() < 0.18) {
        const double s = pick_on_straight(rng, b, total, 40.0, 26.0);
        bool clear = s > 0;
        for (const auto& l : r.lights)
            if (std::abs(l.route_s - s) < 35.0) clear = false;
        for (const auto& a : r.actors)
            if (std::abs(a.trigger_progress + 28.0 - s) < 40.0) clear = false;
        if (clear) r.stop_signs.push_back({s});
    }
    return r;
}

Route make_holdout_route(int idx) {
    const std::uint64_t seed = 9000 + static_cast<std::uint64_t>(idx);
    Rng rng(seed);
    Builder b;
    b.straight(rng.uniform(28.0, 36.0));
    const int legs = 2 + static_cast<int>(rng.uniform_int(2));
    for (int i = 0; i < legs; ++i) {
        const double ang =
            rng.uniform(25.0, 70.0) * kPi / 180.0 * (rng.uniform() < 0.5 ? 1.0 : -1.0);
        b.turn(ang, rng.uniform(15.0, 22.0));
        b.straight(rng.uniform(30.0, 45.0));
    }
    b.straight(30.0);
    return b.finish("holdout_" + std::to_string(idx), seed);
}

Route make_smoke(int idx) {
    Rng rng(500 + static_cast<std::uint64_t>(idx));
    Builder b;
    if (idx == 0) {
        b.straight(120.0);
        return b.finish("smoke_straight", 500);
    }
    if (idx == 1) {
        b.straight(50.0);
        b.turn(60.0 * kPi / 180.0, 18.0);
        b.straight(60.0);
        Route r = b.finish("smoke_turn_light", 501);
        add_light(r, rng, 35.0);
        return r;
    }
    b.straight(140.0);
    Route r = b.finish("smoke_ped", 502);
    add_pedestrian(r, rng, 70.0);
    return r;
}

void write_route(const fs::path& dir, const Route& r) {
    fs::create_directories(dir);
    std::ofstream f(dir / (r.name + ".json"));
    f << route_to_json(r) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    const std::string out = argc > 1 ? argv[1] : "routes";
    for (int i = 0; i < 50; ++i) write_route(fs::path(out) / "train", make_train_route(i));
    for (int i = 0; i < 5; ++i) write_route(fs::path(out) / "holdout", make_holdout_route(i));
    for (int i = 0; i < 3; ++i) write_route(fs::path(out) / "smoke", make_smoke(i));
    std::printf("wrote route suites under %s/ (50 train, 5 holdout, 3 smoke)\n", out.c_str());
    return 0;
}
