#include "efd/sim/eval.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "efd/checkpoint.hpp"
#include "efd/controller.hpp"
#include "efd/model.hpp"
#include "efd/sim/dataset.hpp"
#include "efd/sim/expert.hpp"
#include "json.hpp"

namespace efd {

using nlohmann::json;

namespace {

class ExpertPolicy final : public Policy {
public:
    explicit ExpertPolicy(const SimConfig& cfg) : cfg_(cfg), driver_(cfg) {}
    void reset(const Route&) override { driver_.reset(); }
    bool needs_observation() const override { return false; }
    ControlOutput act(const Observation&, const World& w) override { return driver_.control(w); }
    std::string name() const override { return "expert"; }

private:
    SimConfig cfg_;
    ExpertDriver driver_;
};

class ZeroPolicy final : public Policy {
public:
    bool needs_observation() const override { return false; }
    ControlOutput act(const Observation&, const World&) override { return {}; }
    std::string name() const override { return "zero"; }
};

class RandomPolicy final : public Policy {
public:
    explicit RandomPolicy(std::uint64_t seed) : seed_(seed), rng_(seed) {}
    void reset(const Route& r) override { rng_ = Rng(seed_ ^ fnv1a64(r.name)); }
    bool needs_observation() const override { return false; }
    ControlOutput act(const Observation&, const World&) override {
        ControlOutput c;
        c.throttle = rng_.uniform();
        c.steer = rng_.uniform(-1.0, 1.0);
        c.brake = rng_.uniform();
        return c;
    }
    std::string name() const override { return "random"; }

private:
    std::uint64_t seed_;
    Rng rng_;
};

class ModelPolicy final : public Policy {
public:
    ModelPolicy(const Config& cfg, const std::string& ckpt_path) : cfg_(cfg) {
        Rng init = Rng::substream(cfg.train.seed, "init");
        model_ = std::make_unique<DrivingModel<float>>(cfg.model, store_, init);
        load_checkpoint(ckpt_path, store_, nullptr);
        pid_ = PidState::from_config(cfg.sim);
    }

    void reset(const Route&) override { pid_.reset(); }

    ControlOutput act(const Observation& obs, const World&) override {
        Tape<float> tp;
        const auto inputs = DrivingModel<float>::make_inputs(obs, cfg_.model);
        const auto fwd = model_->forward(tp, inputs);
        const auto d = model_->decide(tp, fwd);
        ControlOutput pred = d.control;
        ControlOutput tracked = track_waypoints(d.waypoints, obs.speed, pid_, cfg_.sim);
        return mix_controls(pred, tracked, d.prefer, cfg_.model.mix_mode,
                            cfg_.model.static_alpha);
    }
    std::string name() const override { return "model"; }

private:
    Config cfg_;
    ParamStore<float> store_;
    std::unique_ptr<DrivingModel<float>> model_;
    PidState pid_;
};

}  // namespace

std::unique_ptr<Policy> make_expert_policy(const SimConfig& cfg) {
    return std::make_unique<ExpertPolicy>(cfg);
}
std::unique_ptr<Policy> make_zero_policy() { return std::make_unique<ZeroPolicy>(); }
std::unique_ptr<Policy> make_random_policy(std::uint64_t seed) {
    return std::make_unique<RandomPolicy>(seed);
}
std::unique_ptr<Policy> make_model_policy(const Config& cfg, const std::string& ckpt_path) {
    return std::make_unique<ModelPolicy>(cfg, ckpt_path);
}

EvalReport evaluate(Policy& policy, const std::vector<Route>& routes, const SimConfig& cfg) {
    EvalReport report;
    report.infraction_counts.assign(7, 0);
    const int control_every =
        std::max(1, static_cast<int>(std::llround(1.0 / (cfg.dt * cfg.control_hz))));
    for (const Route& route : routes) {
        World w = make_world(route, cfg);
        policy.reset(route);
        const double limit = route_time_limit(route, cfg);
        ControlOutput ctrl;
        long tick = 0;
        bool policy_failed = false;
        while (!w.terminated && w.t < limit) {
            if (tick % control_every == 0) {
                try {
                    Observation obs;
                    if (policy.needs_observation()) obs = observe(w);
                    ctrl = policy.act(obs, w);
                } catch (const std::exception&) {
                    policy_failed = true;
                    break;  // scored with RC at the failure point
                }
            }
            step(w, ctrl, cfg.dt);
            ++tick;
        }
        RouteResult rr;
        rr.route = route.name;
        rr.completed = w.completed;
        rr.timed_out = !w.terminated && !policy_failed;
        rr.sim_seconds = w.t;
        rr.infractions = w.infractions;
        rr.rc = w.completed ? 100.0
                            : 100.0 * clamp(w.progress_s / std::max(route.length(), 1e-9), 0.0, 1.0);
        rr.ds = driving_score(rr.rc, rr.infractions, cfg.penalties);
        for (const auto& inf : rr.infractions)
            report.infraction_counts[static_cast<size_t>(inf.type)] += 1;
        report.routes.push_back(std::move(rr));
    }
    double sum_ds = 0, sum_rc = 0;
    for (const auto& r : report.routes) {
        sum_ds += r.ds;
        sum_rc += r.rc;
    }
    const double n = std::max<size_t>(report.routes.size(), 1);
    report.mean_ds = sum_ds / n;
    report.mean_rc = sum_rc / n;
    return report;
}

std::string report_to_json(const EvalReport& r, const std::string& policy_name) {
    json j;
    j["policy"] = policy_name;
    j["mean_ds"] = r.mean_ds;
    j["mean_rc"] = r.mean_rc;
    json routes = json::array();
    for (const auto& rr : r.routes) {
        json inf = json::array();
        for (const auto& i : rr.infractions)
            inf.push_back({{"type", infraction_name(i.type)},
                           {"time", i.time},
                           {"route_s", i.route_s}});
        routes.push_back({{"route", rr.route},
                          {"rc", rr.rc},
                          {"ds", rr.ds},
                          {"completed", rr.completed},
                          {"timed_out", rr.timed_out},
                          {"sim_seconds", rr.sim_seconds},
                          {"infractions", inf}});
    }
    j["routes"] = routes;
    json counts;
    for (int t = 0; t < 7; ++t)
        counts[infraction_name(static_cast<InfractionType>(t))] =
            r.infraction_counts[static_cast<size_t>(t)];
    j["infraction_counts"] = counts;
    return j.dump(2);
}

std::string report_to_text(const EvalReport& r, const std::string& policy_name) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "policy: %s   mean DS %.2f   mean RC %.2f\n",
                  policy_name.c_str(), r.mean_ds, r.mean_rc);
    os << buf;
    os << "route                          RC      DS   done  infractions\n";
    for (const auto& rr : r.routes) {
        std::string inf;
        for (const auto& i : rr.infractions) {
            if (!inf.empty()) inf += ",";
            inf += infraction_name(i.type);
        }
        std::snprintf(buf, sizeof(buf), "%-28s %6.1f %7.2f  %-5s %s\n", rr.route.c_str(), rr.rc,
                      rr.ds, rr.completed ? "yes" : (rr.timed_out ? "time" : "no"), inf.c_str());
        os << buf;
    }
    return os.str();
}

}  // namespace efd
