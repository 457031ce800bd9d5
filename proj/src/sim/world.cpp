#include <cmath>

#include "efd/sim/types.hpp"

namespace efd {

namespace {

// Arclength of p's projection onto the polyline, searched inside a window
// around the current progress so near-passing segments can't steal the match.
std::pair<double, double> project_windowed(const Route& r, Vec2 p, double around) {
    const auto& arc = r.arclengths();
    const auto& v = r.vertices;
    double best_d = 1e300, best_s = around;
    for (size_t i = 1; i < v.size(); ++i) {
        if (arc[i] < around - 15.0) continue;
        if (arc[i - 1] > around + 60.0) break;
        const Vec2 a = v[i - 1].p, b = v[i].p;
        const Vec2 ab = b - a;
        const double len2 = ab.dot(ab);
        double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
        t = clamp(t, 0.0, 1.0);
        const Vec2 q = a + ab * t;
        const double d = (p - q).norm();
        if (d < best_d) {
            best_d = d;
            best_s = arc[i - 1] + std::sqrt(len2) * t;
        }
    }
    return {best_s, best_d};
}

Vec2 path_point(const std::vector<Vec2>& path, double s, bool& past_end) {
    past_end = false;
    if (path.size() == 1) return path[0];
    double acc = 0;
    for (size_t i = 1; i < path.size(); ++i) {
        const double seg = (path[i] - path[i - 1]).norm();
        if (s <= acc + seg) {
            const double t = seg > 0 ? (s - acc) / seg : 0.0;
            return path[i - 1] + (path[i] - path[i - 1]) * t;
        }
        acc += seg;
    }
    past_end = true;
    return path.back();
}

}  // namespace

LightPhase World::light_phase(size_t i) const {
    const TrafficLightSpec& l = route.lights[i];
    const double cycle = l.green + l.yellow + l.red;
    double ph = std::fmod(t + l.offset, cycle);
    if (ph < 0) ph += cycle;
    if (ph < l.green) return LightPhase::Green;
    if (ph < l.green + l.yellow) return LightPhase::Yellow;
    return LightPhase::Red;
}

World make_world(const Route& route, const SimConfig& cfg) {
    World w;
    w.route = route;
    w.route.compute_arclengths();
    w.cfg = cfg;
    w.ego.pos = w.route.vertices.front().p;
    w.ego.heading = w.route.heading_at(0.0);
    w.ego.speed = 0;
    w.actors.resize(route.actors.size());
    for (size_t i = 0; i < route.actors.size(); ++i) {
        w.actors[i].pos = route.actors[i].path.front();
        const auto& spec = route.actors[i];
        if (spec.kind == ActorKind::Static ||
            (spec.trigger_progress < 0 && spec.trigger_time < 0))
            w.actors[i].active = true;
    }
    w.light_crossed.assign(route.lights.size(), 0);
    w.sign_satisfied.assign(route.stop_signs.size(), 0);
    w.sign_crossed.assign(route.stop_signs.size(), 0);
    w.sign_halt_time.assign(route.stop_signs.size(), 0.0);
    return w;
}

double route_progress(const World& w) {
    return project_windowed(w.route, w.ego.pos, w.progress_s).first;
}

double lateral_offset(const World& w) {
    return project_windowed(w.route, w.ego.pos, w.progress_s).second;
}

void step(World& w, const ControlOutput& control, double dt) {
    if (dt <= 0) throw ShapeError("step: dt must be positive");
    if (!std::isfinite(control.throttle) || !std::isfinite(control.steer) ||
        !std::isfinite(control.brake))
        throw NumericError("step: non-finite control input");
    const SimConfig& c = w.cfg;
    const double thr = clamp(control.throttle, 0.0, 1.0);
    const double brk = clamp(control.brake, 0.0, 1.0);
    const double str = clamp(control.steer, -1.0, 1.0);

    const Vec2 prev_pos = w.ego.pos;

    // Kinematic bicycle with quadratic drag.
    const double v = w.ego.speed;
    const double accel = c.a_max * thr - c.b_max * brk - c.drag * v * v;
    const double v_new = std::max(0.0, v + accel * dt);
    const double yaw_rate = (v / c.wheelbase) * std::tan(str * c.delta_max);
    w.ego.heading += yaw_rate * dt;
    w.ego.pos.x += v_new * std::cos(w.ego.heading) * dt;
    w.ego.pos.y += v_new * std::sin(w.ego.heading) * dt;
    w.ego.speed = v_new;
    w.t += dt;

    // Scripted actors.
    for (size_t i = 0; i < w.actors.size(); ++i) {
        const ActorSpec& spec = w.route.actors[i];
        ActorState& st = w.actors[i];
        if (st.done) continue;
        if (!st.active) {
            if ((spec.trigger_progress >= 0 && w.progress_s >= spec.trigger_progress) ||
                (spec.trigger_time >= 0 && w.t >= spec.trigger_time))
                st.active = true;
        }
        if (st.active && spec.kind != ActorKind::Static) {
            st.path_s += spec.speed * dt;
            bool past = false;
            st.pos = path_point(spec.path, st.path_s, past);
            if (past) {
                st.done = true;
                st.active = false;
            }
        }
    }

    // Progress (monotone credit).
    const auto [s_now, lateral] = project_windowed(w.route, w.ego.pos, w.progress_s);
    if (s_now > w.progress_s) w.progress_s = s_now;

    // Collisions, debounced per contact episode.
    for (size_t i = 0; i < w.actors.size(); ++i) {
        const ActorSpec& spec = w.route.actors[i];
        ActorState& st = w.actors[i];
        if (!st.active) continue;
        const double d = (w.ego.pos - st.pos).norm();
        if (d < c.ego_radius + spec.radius) {
            if (!st.in_contact) {
                st.in_contact = true;
                InfractionType ty = spec.kind == ActorKind::Pedestrian
                                        ? InfractionType::CollisionPedestrian
                                        : spec.kind == ActorKind::Static
                                              ? InfractionType::CollisionStatic
                                              : InfractionType::CollisionVehicle;
                w.infractions.push_back({ty, w.t, w.progress_s});
            }
        } else if (d > c.ego_radius + spec.radius + 0.5) {
            st.in_contact = false;
        }
    }

    // Red-light and stop-sign line crossings (ego center path vs stop line).
    for (size_t i = 0; i < w.route.lights.size(); ++i) {
        if (w.light_crossed[i]) continue;
        const auto [a, b] = w.route.stop_line_at(w.route.lights[i].route_s, 4.0);
        if (segments_intersect(prev_pos, w.ego.pos, a, b)) {
            w.light_crossed[i] = 1;
            if (w.light_phase(i) == LightPhase::Red)
                w.infractions.push_back({InfractionType::RedLight, w.t, w.progress_s});
        }
    }
    for (size_t i = 0; i < w.route.stop_signs.size(); ++i) {
        const double s_sign = w.route.stop_signs[i].route_s;
        if (!w.sign_satisfied[i] && w.progress_s < s_sign && s_sign - w.progress_s < 8.0 &&
            w.ego.speed < c.blocked_speed) {
            w.sign_halt_time[i] += dt;
            if (w.sign_halt_time[i] >= c.stop_halt_secs) w.sign_satisfied[i] = 1;
        }
        if (w.sign_crossed[i]) continue;
        const auto [a, b] = w.route.stop_line_at(s_sign, 4.0);
        if (segments_intersect(prev_pos, w.ego.pos, a, b)) {
            w.sign_crossed[i] = 1;
            if (!w.sign_satisfied[i])
                w.infractions.push_back({InfractionType::StopSign, w.t, w.progress_s});
        }
    }

    // Terminal conditions.
    if (lateral > c.offroute_limit) {
        w.infractions.push_back({InfractionType::RouteDeviation, w.t, w.progress_s});
        w.terminated = true;
        w.terminal_reason = InfractionType::RouteDeviation;
    }
    if (w.ego.speed < c.blocked_speed)
        w.blocked_time += dt;
    else
        w.blocked_time = 0;
    if (w.blocked_time > c.blocked_limit && !w.terminated) {
        w.infractions.push_back({InfractionType::Blocked, w.t, w.progress_s});
        w.terminated = true;
        w.terminal_reason = InfractionType::Blocked;
    }
    if (w.progress_s >= w.route.length() - c.route_done_margin) {
        w.completed = true;
        w.terminated = true;
    }
}

}  // namespace efd
