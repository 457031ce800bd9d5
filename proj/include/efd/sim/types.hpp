#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "efd/common.hpp"
#include "efd/config.hpp"
#include "efd/rng.hpp"

namespace efd {

struct Vec2 {
    double x = 0, y = 0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

inline double dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
    t = clamp(t, 0.0, 1.0);
    const Vec2 q = a + ab * t;
    return (p - q).norm();
}

inline bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
    auto cross = [](Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; };
    const double d1 = cross(q2 - q1, p1 - q1);
    const double d2 = cross(q2 - q1, p2 - q1);
    const double d3 = cross(p2 - p1, q1 - p1);
    const double d4 = cross(p2 - p1, q2 - p1);
    return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

// ---------------------------------------------------------------------------
// Routes
// ---------------------------------------------------------------------------
enum class Command : int {
    Follow = 0,
    Left = 1,
    Right = 2,
    Straight = 3,
    ChangeLeft = 4,
    ChangeRight = 5,
};

std::string command_name(Command c);
Command command_from_name(const std::string& s);

struct RouteVertex {
    Vec2 p;
    Command cmd = Command::Follow;
};

enum class LightPhase : int { Green = 0, Yellow = 1, Red = 2 };

struct TrafficLightSpec {
    double route_s = 0;         // stop line at this arclength
    double green = 8, yellow = 3, red = 6;
    double offset = 0;          // phase offset, seconds
};

struct StopSignSpec {
    double route_s = 0;
};

enum class ActorKind : int { Vehicle = 0, Pedestrian = 1, Static = 2 };

// Scripted actor: once triggered it walks its path at constant speed and
// despawns at the end. Static actors just sit at path[0].
struct ActorSpec {
    ActorKind kind = ActorKind::Vehicle;
    std::vector<Vec2> path;
    double speed = 0;
    double trigger_progress = -1;  // activate when ego arclength passes this
    double trigger_time = -1;      // or at this sim time (first one wins)
    double radius = 1.0;
};

struct Route {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<RouteVertex> vertices;
    std::vector<TrafficLightSpec> lights;
    std::vector<StopSignSpec> stop_signs;
    std::vector<ActorSpec> actors;

    double length() const;
    // Point / heading at arclength s (clamped to the polyline).
    Vec2 point_at(double s) const;
    double heading_at(double s) const;
    Command command_at(double s) const;
    // Stop-line segment perpendicular to the route at arclength s.
    std::pair<Vec2, Vec2> stop_line_at(double s, double halfwidth) const;
    void compute_arclengths();
    const std::vector<double>& arclengths() const { return arc_; }

private:
    std::vector<double> arc_;
};

Route route_from_json_text(const std::string& text);
Route route_from_file(const std::string& path);
std::string route_to_json(const Route& r);
// All *.json files in a directory, sorted by filename.
std::vector<Route> load_routes(const std::string& dir_or_file);

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------
struct EgoState {
    Vec2 pos;
    double heading = 0;  // CCW from +x
    double speed = 0;    // m/s, >= 0
};

struct ActorState {
    bool active = false, done = false;
    double path_s = 0;
    Vec2 pos;
    bool in_contact = false;  // collision debounce
};

enum class InfractionType : int {
    CollisionPedestrian = 0,
    CollisionVehicle = 1,
    CollisionStatic = 2,
    RedLight = 3,
    StopSign = 4,
    RouteDeviation = 5,  // terminal, no penalty factor
    Blocked = 6,         // terminal, no penalty factor
};

std::string infraction_name(InfractionType t);
double infraction_penalty(InfractionType t, const InfractionPenalties& p);

struct Infraction {
    InfractionType type;
    double time = 0;
    double route_s = 0;
};

struct World {
    Route route;
    SimConfig cfg;
    EgoState ego;
    std::vector<ActorState> actors;
    double t = 0;
    double progress_s = 0;        // monotone completed arclength
    double blocked_time = 0;
    std::vector<Infraction> infractions;
    std::vector<char> light_crossed;      // per light
    std::vector<char> sign_satisfied;     // per stop sign
    std::vector<char> sign_crossed;
    std::vector<double> sign_halt_time;   // accumulated standstill near line
    bool terminated = false;
    InfractionType terminal_reason = InfractionType::Blocked;
    bool completed = false;

    LightPhase light_phase(size_t i) const;
};

struct ControlOutput {
    double throttle = 0, steer = 0, brake = 0;
    enum class Source : int { Tracker = 0, Predicted = 1, Mixed = 2, External = 3 };
    Source source = Source::External;
    double prefer = 0;
};

World make_world(const Route& route, const SimConfig& cfg);
// Advance one tick: bicycle kinematics, scripted actors, lights, infraction
// detection. Throws NumericError on non-finite control.
void step(World& w, const ControlOutput& control, double dt);

// Distance from ego to the route polyline and the matched arclength.
double route_progress(const World& w);
double lateral_offset(const World& w);

// ---------------------------------------------------------------------------
// Observation / labels
// ---------------------------------------------------------------------------
struct Observation {
    std::vector<float> main;  // 3 x N x N, row-major, [0,1]
    std::vector<float> side;
    int raster_cells = 64;
    double speed = 0;
    Command command = Command::Follow;
    Vec2 target;  // ego frame, meters
};

struct ExpertLabel {
    std::vector<Vec2> waypoints;  // K, ego frame at waypoint_spacing marks
    ControlOutput control;
    double target_speed = 0;
    std::array<double, 8> latent{};  // privileged feature, each in [-1,1]
};

// Ego-frame semantic rasters: ch0 route corridor, ch1 actors, ch2
// lights/stop lines. Deterministic for a given world.
void render_views(const World& w, std::vector<float>& main_out, std::vector<float>& side_out);
Observation observe(const World& w);

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------
struct RouteResult {
    std::string route;
    double rc = 0;  // percent
    double ds = 0;
    bool completed = false;
    bool timed_out = false;
    std::vector<Infraction> infractions;
    double sim_seconds = 0;
};

struct EvalReport {
    std::vector<RouteResult> routes;
    double mean_ds = 0;
    double mean_rc = 0;
    std::vector<int> infraction_counts;  // indexed by InfractionType
};

double driving_score(double rc, const std::vector<Infraction>& infractions,
                     const InfractionPenalties& p);

}  // namespace efd
