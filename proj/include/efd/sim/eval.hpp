#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "efd/config.hpp"
#include "efd/sim/types.hpp"

namespace efd {

// Closed-loop policy. Non-privileged policies consume only the Observation;
// the expert adapter reads the world directly (that is its definition) and
// skips rendering entirely via needs_observation().
class Policy {
public:
    virtual ~Policy() = default;
    virtual void reset(const Route& route) { (void)route; }
    virtual bool needs_observation() const { return true; }
    virtual ControlOutput act(const Observation& obs, const World& privileged) = 0;
    virtual std::string name() const = 0;
};

std::unique_ptr<Policy> make_expert_policy(const SimConfig& cfg);
std::unique_ptr<Policy> make_zero_policy();
std::unique_ptr<Policy> make_random_policy(std::uint64_t seed);
// Full inference stack: model forward -> waypoint tracker + predicted
// control, blended with the learned confidence.
std::unique_ptr<Policy> make_model_policy(const Config& cfg, const std::string& ckpt_path);

// Run each route to completion/termination; RC is the completed arclength
// fraction, DS multiplies in the infraction penalties. A throwing policy
// scores the route at its failure point.
EvalReport evaluate(Policy& policy, const std::vector<Route>& routes, const SimConfig& cfg);

std::string report_to_json(const EvalReport& r, const std::string& policy_name);
std::string report_to_text(const EvalReport& r, const std::string& policy_name);

}  // namespace efd
