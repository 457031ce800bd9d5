#include "efd/sim/expert.hpp"

#include <cmath>

namespace efd {

namespace {

double wrap_angle(double a) {
    while (a > 3.14159265358979323846) a -= 2 * 3.14159265358979323846;
    while (a < -3.14159265358979323846) a += 2 * 3.14159265358979323846;
    return a;
}

Vec2 to_ego(const EgoState& ego, Vec2 p) {
    const double ch = std::cos(ego.heading), sh = std::sin(ego.heading);
    const Vec2 d = p - ego.pos;
    return {ch * d.x + sh * d.y, -sh * d.x + ch * d.y};
}

}  // namespace

ExpertDriver::ExpertDriver(const SimConfig& cfg) : cfg_(cfg), pid_(PidState::from_config(cfg)) {
    // The expert plans every sim tick, not at the policy rate.
    pid_.dt = cfg.dt;
}

void ExpertDriver::reset() { pid_.reset(); }

double ExpertDriver::curve_limited_cruise(const World& w) const {
    const double s = w.progress_s;
    const double probe = 10.0;
    const double dh = std::abs(wrap_angle(w.route.heading_at(s + probe) - w.route.heading_at(s)));
    const double curvature = dh / probe;
    if (curvature < 1e-4) return cfg_.cruise_speed;
    const double v_curve = std::sqrt(cfg_.curve_slow_accel / curvature);
    return std::min(cfg_.cruise_speed, std::max(2.0, v_curve));
}

double ExpertDriver::halt_distance(const World& w) const {
    double nearest = 1e9;
    // Actors in (or about to enter) the forward corridor; halt well short.
    for (size_t i = 0; i < w.actors.size(); ++i) {
        if (!w.actors[i].active) continue;
        const ActorSpec& spec = w.route.actors[i];
        Vec2 probe = w.actors[i].pos;
        Vec2 ahead = probe;
        if (spec.kind != ActorKind::Static && spec.path.size() > 1) {
            // One-second anticipation along the actor's path direction.
            const Vec2 dir = spec.path.back() - spec.path.front();
            const double n = dir.norm();
            if (n > 0) ahead = probe + dir * (spec.speed / n);
        }
        for (Vec2 cand : {probe, ahead}) {
            const Vec2 rel = to_ego(w.ego, cand);
            if (rel.x > -1.0 && rel.x < cfg_.hazard_ahead &&
                std::abs(rel.y) < cfg_.hazard_halfwidth + spec.radius)
                nearest = std::min(nearest, std::max(0.0, rel.x - 4.5));
        }
    }
    // Lights: a non-green line ahead is a hazard unless stopping is
    // physically impossible even at full brake; that narrow pass-through
    // window only opens inside yellow, never from a braking approach.
    const double v = w.ego.speed;
    for (size_t i = 0; i < w.route.lights.size(); ++i) {
        const double d = w.route.lights[i].route_s - w.progress_s;
        if (d < cfg_.stop_line_margin * 0.5 || d > cfg_.light_ahead) continue;
        if (w.light_phase(i) == LightPhase::Green) continue;
        const double d_to_halt = d - cfg_.stop_line_margin;
        const bool cannot_stop = v >= 3.0 && d_to_halt < v * v / (2.0 * cfg_.b_max) - 0.3;
        if (!cannot_stop) nearest = std::min(nearest, std::max(0.0, d_to_halt));
    }
    // Unsatisfied stop signs always gate.
    for (size_t i = 0; i < w.route.stop_signs.size(); ++i) {
        if (w.sign_satisfied[i] || w.sign_crossed[i]) continue;
        const double d = w.route.stop_signs[i].route_s - w.progress_s;
        if (d < -0.5 || d > cfg_.light_ahead) continue;
        nearest = std::min(nearest, std::max(0.0, d - cfg_.stop_line_margin));
    }
    return nearest;
}

double ExpertDriver::target_speed(const World& w) const {
    if (halt_distance(w) < cfg_.hazard_ahead) return 0.0;
    return curve_limited_cruise(w);
}

double ExpertDriver::plan_speed(const World& w) const {
    const double hd = halt_distance(w);
    const double cruise = curve_limited_cruise(w);
    if (hd > 1e8) return cruise;
    // Gentle profile (1.8 m/s^2): braking starts early enough that the
    // longitudinal PID's lag still lands the stop inside the line margin.
    // The P termself-corrects hard when the ego is above the profile.
    const double v_stop = std::sqrt(2.0 * 1.8 * std::max(0.0, hd - 0.3));
    return std::min(cruise, v_stop);
}

ControlOutput ExpertDriver::drive_to(const World& w, double desired_speed, PidState& pid) const {
    ControlOutput out;
    out.source = ControlOutput::Source::External;
    const Vec2 aim = to_ego(w.ego, w.route.point_at(w.progress_s + cfg_.aim_lookahead));
    const double angle = std::atan2(aim.y, std::max(aim.x, 0.2));
    out.steer = clamp(pid.lat.step(angle, pid.dt), -1.0, 1.0);
    const double u = pid.lon.step(desired_speed - w.ego.speed, pid.dt);
    if (u >= 0) {
        out.throttle = clamp(u, 0.0, 1.0);
    } else {
        out.brake = clamp(-u, 0.0, 1.0);
    }
    if (desired_speed < 0.25) {
        out.throttle = 0;
        out.brake = std::max(out.brake, 0.8);
    }
    return out;
}

ControlOutput ExpertDriver::control(const World& w) {
    return drive_to(w, plan_speed(w), pid_);
}

std::vector<Vec2> ExpertDriver::plan_waypoints(const World& w, int horizon) const {
    World clone = w;
    PidState pid = pid_;
    ExpertDriver planner(cfg_);
    planner.pid_ = pid;
    const EgoState origin = w.ego;
    const int per_mark = std::max(1, static_cast<int>(std::llround(cfg_.waypoint_spacing / cfg_.dt)));
    std::vector<Vec2> out;
    for (int k = 0; k < horizon; ++k) {
        for (int i = 0; i < per_mark && !clone.terminated; ++i) {
            const ControlOutput c = planner.drive_to(clone, planner.plan_speed(clone),
                                                     planner.pid_);
            step(clone, c, cfg_.dt);
        }
        out.push_back(to_ego(origin, clone.ego.pos));
    }
    return out;
}

std::array<double, 8> ExpertDriver::latent(const World& w) const {
    std::array<double, 8> f{};
    auto unit = [](double x01) { return 2.0 * clamp(x01, 0.0, 1.0) - 1.0; };

    const double hd = halt_distance(w);
    f[0] = unit(std::min(hd, 20.0) / 20.0);

    double light_d = 30.0;
    double phase_v = 1.0;
    for (size_t i = 0; i < w.route.lights.size(); ++i) {
        const double d = w.route.lights[i].route_s - w.progress_s;
        if (d >= 0 && d < light_d) {
            light_d = d;
            const LightPhase ph = w.light_phase(i);
            phase_v = ph == LightPhase::Green ? 1.0 : ph == LightPhase::Yellow ? 0.0 : -1.0;
        }
    }
    f[1] = unit(light_d / 30.0);
    f[2] = phase_v;

    const double s = w.progress_s;
    const double dh = wrap_angle(w.route.heading_at(s + 10.0) - w.route.heading_at(s));
    f[3] = clamp(dh / 1.5707963267948966, -1.0, 1.0);

    f[4] = clamp((target_speed(w) - w.ego.speed) / cfg_.cruise_speed, -1.0, 1.0);

    // Signed lateral error: positive when ego sits left of the route.
    const Vec2 route_pt = w.route.point_at(s);
    const double rh = w.route.heading_at(s);
    const Vec2 off = w.ego.pos - route_pt;
    const double lat = -std::sin(rh) * off.x + std::cos(rh) * off.y;
    f[5] = clamp(lat / 3.0, -1.0, 1.0);

    f[6] = clamp(wrap_angle(rh - w.ego.heading) / 1.5707963267948966, -1.0, 1.0);

    const double ttc = std::min(hd, 40.0) / std::max(w.ego.speed, 0.5);
    f[7] = unit(std::min(ttc, 10.0) / 10.0);
    return f;
}

}  // namespace efd
