#include "efd/controller.hpp"

#include <cmath>

namespace efd {

double PidState::Axis::step(double error, double dt) {
    integral = efd::clamp(integral + error * dt, -clamp_abs, clamp_abs);
    const double deriv = primed ? (error - prev_error) / dt : 0.0;
    prev_error = error;
    primed = true;
    return kp * error + ki * integral + kd * deriv;
}

void PidState::Axis::reset() {
    integral = 0;
    prev_error = 0;
    primed = false;
}

PidState PidState::from_config(const SimConfig& cfg) {
    PidState p;
    p.lon.kp = cfg.lon_pid.kp;
    p.lon.ki = cfg.lon_pid.ki;
    p.lon.kd = cfg.lon_pid.kd;
    p.lat.kp = cfg.lat_pid.kp;
    p.lat.ki = cfg.lat_pid.ki;
    p.lat.kd = cfg.lat_pid.kd;
    p.lon.clamp_abs = cfg.pid_integral_clamp;
    p.lat.clamp_abs = cfg.pid_integral_clamp;
    p.dt = 1.0 / cfg.control_hz;
    return p;
}

void PidState::reset() {
    lon.reset();
    lat.reset();
}

ControlOutput track_waypoints(const std::vector<Vec2>& waypoints, double ego_speed, PidState& pid,
                              const SimConfig& cfg) {
    if (waypoints.size() < 2) throw ShapeError("track_waypoints: need at least 2 waypoints");
    const Vec2 wp1 = waypoints[0], wp2 = waypoints[1];
    const double desired_speed = (wp2 - wp1).norm() / cfg.waypoint_spacing;
    const Vec2 aim = (wp1 + wp2) * 0.5;

    ControlOutput out;
    out.source = ControlOutput::Source::Tracker;

    // Lateral: bearing to the aim point, left positive.
    const double angle = std::atan2(aim.y, std::max(aim.x, 0.2));
    out.steer = clamp(pid.lat.step(angle, pid.dt), -1.0, 1.0);

    // Longitudinal: PID on speed error; positive output drives the throttle,
    // negative the brake.
    const double u = pid.lon.step(desired_speed - ego_speed, pid.dt);
    if (u >= 0) {
        out.throttle = clamp(u, 0.0, 1.0);
        out.brake = 0;
    } else {
        out.throttle = 0;
        out.brake = clamp(-u, 0.0, 1.0);
    }
    // Near-zero desired speed is a hard stop request, not a PID suggestion;
    // the brake also holds at standstill.
    if (desired_speed < 0.25) {
        out.throttle = 0;
        out.brake = std::max(out.brake, 0.6);
    }
    return out;
}

ControlOutput mix_controls(const ControlOutput& pred, const ControlOutput& tracked,
                           double prefer_value, MixMode mode, double static_alpha) {
    if (!(prefer_value >= 0.0 && prefer_value <= 1.0))
        throw ShapeError("mix_controls: prefer outside [0,1]");
    const double a = mode == MixMode::Dynamic ? prefer_value : static_alpha;
    ControlOutput out;
    out.source = ControlOutput::Source::Mixed;
    out.prefer = a;
    out.throttle = a * pred.throttle + (1 - a) * tracked.throttle;
    out.steer = a * pred.steer + (1 - a) * tracked.steer;
    out.brake = a * pred.brake + (1 - a) * tracked.brake;
    out.throttle = clamp(out.throttle, 0.0, 1.0);
    out.steer = clamp(out.steer, -1.0, 1.0);
    out.brake = clamp(out.brake, 0.0, 1.0);
    // Coactivation rule: a firm brake wins over residual throttle.
    if (out.throttle > 0 && out.brake > 0.3) out.throttle = 0;
    return out;
}

}  // namespace efd
