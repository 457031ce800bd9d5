#pragma once

#include <array>

#include "efd/controller.hpp"
#include "efd/sim/types.hpp"

namespace efd {

// Scripted privileged policy: reads the world directly (route geometry,
// light phases, actor states), gates its target speed on hazards, and tracks
// the route with the shared PID pair. Used as the demonstration source and
// as the oracle policy for closed-loop gates.
class ExpertDriver {
public:
    explicit ExpertDriver(const SimConfig& cfg);

    // Hazard-gated cruise target (0 when stopping for a light/actor/sign).
    // This is the supervision signal; the expert's own control tracks the
    // smooth braking profile of plan_speed instead.
    double target_speed(const World& w) const;

    // Comfort-braking speed toward the nearest halt point.
    double plan_speed(const World& w) const;

    // Control for the current instant; advances PID state.
    ControlOutput control(const World& w);

    // Ego-frame positions of the expert's own forward simulation at
    // waypoint-spacing marks.
    std::vector<Vec2> plan_waypoints(const World& w, int horizon) const;

    // 8-dim normalized privileged feature:
    // [hazard_dist, light_dist, light_phase, curvature, speed_err,
    //  lateral_err, heading_err, ttc_proxy], each in [-1, 1].
    std::array<double, 8> latent(const World& w) const;

    void reset();

private:
    double curve_limited_cruise(const World& w) const;
    // Distance to the nearest required halt point ahead (large when clear).
    double halt_distance(const World& w) const;
    ControlOutput drive_to(const World& w, double desired_speed, PidState& pid) const;

    SimConfig cfg_;
    PidState pid_;
};

}  // namespace efd
