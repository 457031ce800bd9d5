#pragma once

#include <vector>

#include "efd/config.hpp"
#include "efd/sim/types.hpp"

namespace efd {

// Longitudinal + lateral PID pair. One instance per episode; replaying a
// logged episode reproduces identical controls bit-for-bit.
struct PidState {
    struct Axis {
        double kp = 0, ki = 0, kd = 0;
        double integral = 0, prev_error = 0;
        double clamp_abs = 10.0;
        bool primed = false;

        double step(double error, double dt);
        void reset();
    };

    Axis lon, lat;
    double dt = 0.1;

    static PidState from_config(const SimConfig& cfg);
    void reset();
};

// Track predicted waypoints: desired speed from the spacing of the first two
// waypoints, steering from the bearing to their midpoint.
ControlOutput track_waypoints(const std::vector<Vec2>& waypoints, double ego_speed,
                              PidState& pid, const SimConfig& cfg);

// Channelwise convex blend of predicted and tracked controls. Dynamic mode
// uses the learned confidence; static mode uses a fixed alpha. High predicted
// control loss -> low prefer -> low weight on the predicted branch.
ControlOutput mix_controls(const ControlOutput& pred, const ControlOutput& tracked,
                           double prefer_value, MixMode mode, double static_alpha);

}  // namespace efd
