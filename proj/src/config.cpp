#include "efd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace efd {

using nlohmann::json;

namespace {

// Tracks which keys were consumed; anything left over is a hard error.
class Strict {
public:
    Strict(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void parse_pid(const json* j, const char* where, PidGains& g) {
    if (!j) return;
    Strict s(*j, where);
    s.get("kp", g.kp);
    s.get("ki", g.ki);
    s.get("kd", g.kd);
    s.finish();
}

ReadoutMode parse_readout(const std::string& s) {
    if (s == "learnable_vector") return ReadoutMode::LearnableVector;
    if (s == "mean_pool") return ReadoutMode::MeanPool;
    throw ConfigError("model.readout: expected learnable_vector|mean_pool, got '" + s + "'");
}

MixMode parse_mix(const std::string& s) {
    if (s == "dynamic") return MixMode::Dynamic;
    if (s == "static_tcp") return MixMode::StaticTcp;
    throw ConfigError("model.mix_mode: expected dynamic|static_tcp, got '" + s + "'");
}

}  // namespace

std::string readout_name(ReadoutMode m) {
    return m == ReadoutMode::LearnableVector ? "learnable_vector" : "mean_pool";
}
std::string mix_name(MixMode m) { return m == MixMode::Dynamic ? "dynamic" : "static_tcp"; }

void ModelConfig::validate() const {
    if (image_size <= 0 || patch <= 0 || image_size % patch != 0)
        throw ConfigError("model: image_size must be a positive multiple of patch");
    const int stages_n = stages();
    if (stages_n < 1) throw ConfigError("model: need at least one backbone stage");
    if (side_dims.size() != main_dims.size() || stage_blocks.size() != main_dims.size() ||
        stage_groups.size() != main_dims.size())
        throw ConfigError("model: per-stage lists must have equal length");
    if (!fusion_stages.empty() && fusion_stages.size() != main_dims.size())
        throw ConfigError("model: fusion_stages length must match stage count");
    int grid = image_size / patch;
    for (int s = 0; s < stages_n; ++s) {
        if (main_dims[s] <= 0 || side_dims[s] <= 0 || stage_blocks[s] < 0 || stage_groups[s] < 1)
            throw ConfigError("model: non-positive stage parameter at stage " + std::to_string(s));
        if (main_dims[s] < side_dims[s])
            throw ConfigError("model: main dim must be >= side dim at stage " + std::to_string(s));
        if (main_dims[s] % stage_groups[s] != 0 || side_dims[s] % stage_groups[s] != 0)
            throw ConfigError("model: dims must divide by groups at stage " + std::to_string(s));
        if (s > 0 && grid % 2 != 0)
            throw ConfigError("model: token grid not divisible by 2 at stage " +
                              std::to_string(s));
        if (s > 0) grid /= 2;
        if (grid < 1) throw ConfigError("model: token grid vanished at stage " + std::to_string(s));
        if (fusion_at(s)) {
            if (main_dims[s] % fusion_heads != 0 || side_dims[s] % fusion_heads != 0)
                throw ConfigError("model: fusion dims must divide by fusion_heads at stage " +
                                  std::to_string(s));
        }
    }
    if (decoder_dim <= 0 || decoder_depth < 1 || decoder_heads < 1 || decoder_mlp_ratio < 1)
        throw ConfigError("model: invalid decoder dims/depth");
    if (decoder_dim % decoder_heads != 0)
        throw ConfigError("model: decoder_dim must divide by decoder_heads");
    if (waypoints < 2) throw ConfigError("model: waypoint horizon must be >= 2");
    if (gru_hidden < 1 || ctrl_hidden < 1 || speed_hidden < 1 || latent_dim < 1)
        throw ConfigError("model: invalid head dims");
    if (pred_init_std <= 0) throw ConfigError("model: pred_init_std must be positive");
    if (k_c <= 0 || k_w <= 0) throw ConfigError("model: k_c and k_w must be positive");
    if (static_alpha < 0 || static_alpha > 1)
        throw ConfigError("model: static_alpha must be in [0,1]");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (schedule.phase1_lr <= 0 || schedule.phase2_lr <= 0)
        throw ConfigError("train: learning rates must be positive");
    if (schedule.phase_epochs < 1 || schedule.halve_epochs < 1)
        throw ConfigError("train: schedule epochs must be >= 1");
    if (lambda_s < 0 || lambda_f < 0 || lambda_w < 0 || lambda_c < 0 || lambda_est < 0)
        throw ConfigError("train: loss weights must be >= 0");
    if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
}

void SimConfig::validate() const {
    if (dt <= 0) throw ConfigError("sim: dt must be positive");
    if (control_hz <= 0 || sample_hz <= 0) throw ConfigError("sim: rates must be positive");
    if (wheelbase <= 0 || a_max <= 0 || b_max <= 0 || delta_max <= 0)
        throw ConfigError("sim: vehicle parameters must be positive");
    if (cruise_speed <= 0 || waypoint_spacing <= 0)
        throw ConfigError("sim: cruise_speed and waypoint_spacing must be positive");
    if (raster_cells < 8) throw ConfigError("sim: raster_cells too small");
    auto pen_ok = [](double p) { return p > 0 && p <= 1; };
    if (!pen_ok(penalties.pedestrian) || !pen_ok(penalties.vehicle) ||
        !pen_ok(penalties.static_obj) || !pen_ok(penalties.red_light) ||
        !pen_ok(penalties.stop_sign))
        throw ConfigError("sim: penalties must be in (0,1]");
}

Config parse_config_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    Config c;
    Strict root(j, "config");
    if (const json* jm = root.child("model")) {
        Strict m(*jm, "model");
        m.get("image_size", c.model.image_size);
        m.get("in_channels", c.model.in_channels);
        m.get("patch", c.model.patch);
        m.get("main_dims", c.model.main_dims);
        m.get("side_dims", c.model.side_dims);
        m.get("stage_blocks", c.model.stage_blocks);
        m.get("stage_groups", c.model.stage_groups);
        m.get("backbone_mlp_ratio", c.model.backbone_mlp_ratio);
        m.get("fusion", c.model.fusion);
        m.get("fusion_stages", c.model.fusion_stages);
        m.get("fusion_heads", c.model.fusion_heads);
        m.get("decoder_dim", c.model.decoder_dim);
        m.get("decoder_depth", c.model.decoder_depth);
        m.get("decoder_heads", c.model.decoder_heads);
        m.get("decoder_mlp_ratio", c.model.decoder_mlp_ratio);
        m.get("residuals", c.model.residuals);
        if (m.has("readout")) {
            std::string s;
            m.get("readout", s);
            c.model.readout = parse_readout(s);
        }
        m.get("pred_init_std", c.model.pred_init_std);
        m.get("gru_hidden", c.model.gru_hidden);
        m.get("waypoints", c.model.waypoints);
        m.get("ctrl_hidden", c.model.ctrl_hidden);
        m.get("speed_hidden", c.model.speed_hidden);
        m.get("latent_dim", c.model.latent_dim);
        if (m.has("mix_mode")) {
            std::string s;
            m.get("mix_mode", s);
            c.model.mix_mode = parse_mix(s);
        }
        m.get("static_alpha", c.model.static_alpha);
        m.get("k_c", c.model.k_c);
        m.get("k_w", c.model.k_w);
        m.get("detach_estimator_inputs", c.model.detach_estimator_inputs);
        m.finish();
    }
    if (const json* jt = root.child("train")) {
        Strict t(*jt, "train");
        t.get("epochs", c.train.epochs);
        t.get("batch_size", c.train.batch_size);
        t.get("phase1_lr", c.train.schedule.phase1_lr);
        t.get("phase2_lr", c.train.schedule.phase2_lr);
        t.get("phase_epochs", c.train.schedule.phase_epochs);
        t.get("halve_epochs", c.train.schedule.halve_epochs);
        t.get("lambda_s", c.train.lambda_s);
        t.get("lambda_f", c.train.lambda_f);
        t.get("lambda_w", c.train.lambda_w);
        t.get("lambda_c", c.train.lambda_c);
        t.get("lambda_est", c.train.lambda_est);
        t.get("weight_decay", c.train.weight_decay);
        t.get("seed", c.train.seed);
        t.get("checkpoint_every", c.train.checkpoint_every);
        t.get("log_every", c.train.log_every);
        t.finish();
    }
    if (const json* js = root.child("sim")) {
        Strict s(*js, "sim");
        s.get("dt", c.sim.dt);
        s.get("control_hz", c.sim.control_hz);
        s.get("sample_hz", c.sim.sample_hz);
        s.get("wheelbase", c.sim.wheelbase);
        s.get("a_max", c.sim.a_max);
        s.get("b_max", c.sim.b_max);
        s.get("drag", c.sim.drag);
        s.get("delta_max", c.sim.delta_max);
        s.get("ego_radius", c.sim.ego_radius);
        s.get("cruise_speed", c.sim.cruise_speed);
        s.get("waypoint_spacing", c.sim.waypoint_spacing);
        parse_pid(s.child("lon_pid"), "sim.lon_pid", c.sim.lon_pid);
        parse_pid(s.child("lat_pid"), "sim.lat_pid", c.sim.lat_pid);
        s.get("pid_integral_clamp", c.sim.pid_integral_clamp);
        s.get("hazard_ahead", c.sim.hazard_ahead);
        s.get("hazard_halfwidth", c.sim.hazard_halfwidth);
        s.get("light_ahead", c.sim.light_ahead);
        s.get("stop_line_margin", c.sim.stop_line_margin);
        s.get("expert_brake_decel", c.sim.expert_brake_decel);
        s.get("curve_slow_accel", c.sim.curve_slow_accel);
        s.get("target_lookahead", c.sim.target_lookahead);
        s.get("aim_lookahead", c.sim.aim_lookahead);
        s.get("raster_cells", c.sim.raster_cells);
        s.get("main_forward", c.sim.main_forward);
        s.get("main_width", c.sim.main_width);
        s.get("side_width", c.sim.side_width);
        s.get("side_depth", c.sim.side_depth);
        s.get("corridor_halfwidth", c.sim.corridor_halfwidth);
        if (const json* jp = s.child("penalties")) {
            Strict p(*jp, "sim.penalties");
            p.get("pedestrian", c.sim.penalties.pedestrian);
            p.get("vehicle", c.sim.penalties.vehicle);
            p.get("static", c.sim.penalties.static_obj);
            p.get("red_light", c.sim.penalties.red_light);
            p.get("stop_sign", c.sim.penalties.stop_sign);
            p.finish();
        }
        s.get("offroute_limit", c.sim.offroute_limit);
        s.get("blocked_limit", c.sim.blocked_limit);
        s.get("blocked_speed", c.sim.blocked_speed);
        s.get("stop_halt_secs", c.sim.stop_halt_secs);
        s.get("route_done_margin", c.sim.route_done_margin);
        s.get("timeout_scale", c.sim.timeout_scale);
        s.finish();
    }
    root.finish();
    c.model.validate();
    c.train.validate();
    c.sim.validate();
    return c;
}

Config parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_to_json(const Config& c) {
    json j;
    json m;
    m["image_size"] = c.model.image_size;
    m["in_channels"] = c.model.in_channels;
    m["patch"] = c.model.patch;
    m["main_dims"] = c.model.main_dims;
    m["side_dims"] = c.model.side_dims;
    m["stage_blocks"] = c.model.stage_blocks;
    m["stage_groups"] = c.model.stage_groups;
    m["backbone_mlp_ratio"] = c.model.backbone_mlp_ratio;
    m["fusion"] = c.model.fusion;
    m["fusion_stages"] = c.model.fusion_stages;
    m["fusion_heads"] = c.model.fusion_heads;
    m["decoder_dim"] = c.model.decoder_dim;
    m["decoder_depth"] = c.model.decoder_depth;
    m["decoder_heads"] = c.model.decoder_heads;
    m["decoder_mlp_ratio"] = c.model.decoder_mlp_ratio;
    m["residuals"] = c.model.residuals;
    m["readout"] = readout_name(c.model.readout);
    m["pred_init_std"] = c.model.pred_init_std;
    m["gru_hidden"] = c.model.gru_hidden;
    m["waypoints"] = c.model.waypoints;
    m["ctrl_hidden"] = c.model.ctrl_hidden;
    m["speed_hidden"] = c.model.speed_hidden;
    m["latent_dim"] = c.model.latent_dim;
    m["mix_mode"] = mix_name(c.model.mix_mode);
    m["static_alpha"] = c.model.static_alpha;
    m["k_c"] = c.model.k_c;
    m["k_w"] = c.model.k_w;
    m["detach_estimator_inputs"] = c.model.detach_estimator_inputs;
    j["model"] = m;

    json t;
    t["epochs"] = c.train.epochs;
    t["batch_size"] = c.train.batch_size;
    t["phase1_lr"] = c.train.schedule.phase1_lr;
    t["phase2_lr"] = c.train.schedule.phase2_lr;
    t["phase_epochs"] = c.train.schedule.phase_epochs;
    t["halve_epochs"] = c.train.schedule.halve_epochs;
    t["lambda_s"] = c.train.lambda_s;
    t["lambda_f"] = c.train.lambda_f;
    t["lambda_w"] = c.train.lambda_w;
    t["lambda_c"] = c.train.lambda_c;
    t["lambda_est"] = c.train.lambda_est;
    t["weight_decay"] = c.train.weight_decay;
    t["seed"] = c.train.seed;
    t["checkpoint_every"] = c.train.checkpoint_every;
    t["log_every"] = c.train.log_every;
    j["train"] = t;

    json s;
    s["dt"] = c.sim.dt;
    s["control_hz"] = c.sim.control_hz;
    s["sample_hz"] = c.sim.sample_hz;
    s["wheelbase"] = c.sim.wheelbase;
    s["a_max"] = c.sim.a_max;
    s["b_max"] = c.sim.b_max;
    s["drag"] = c.sim.drag;
    s["delta_max"] = c.sim.delta_max;
    s["ego_radius"] = c.sim.ego_radius;
    s["cruise_speed"] = c.sim.cruise_speed;
    s["waypoint_spacing"] = c.sim.waypoint_spacing;
    s["lon_pid"] = {{"kp", c.sim.lon_pid.kp}, {"ki", c.sim.lon_pid.ki}, {"kd", c.sim.lon_pid.kd}};
    s["lat_pid"] = {{"kp", c.sim.lat_pid.kp}, {"ki", c.sim.lat_pid.ki}, {"kd", c.sim.lat_pid.kd}};
    s["pid_integral_clamp"] = c.sim.pid_integral_clamp;
    s["hazard_ahead"] = c.sim.hazard_ahead;
    s["hazard_halfwidth"] = c.sim.hazard_halfwidth;
    s["light_ahead"] = c.sim.light_ahead;
    s["stop_line_margin"] = c.sim.stop_line_margin;
    s["expert_brake_decel"] = c.sim.expert_brake_decel;
    s["curve_slow_accel"] = c.sim.curve_slow_accel;
    s["target_lookahead"] = c.sim.target_lookahead;
    s["aim_lookahead"] = c.sim.aim_lookahead;
    s["raster_cells"] = c.sim.raster_cells;
    s["main_forward"] = c.sim.main_forward;
    s["main_width"] = c.sim.main_width;
    s["side_width"] = c.sim.side_width;
    s["side_depth"] = c.sim.side_depth;
    s["corridor_halfwidth"] = c.sim.corridor_halfwidth;
    s["penalties"] = {{"pedestrian", c.sim.penalties.pedestrian},
                      {"vehicle", c.sim.penalties.vehicle},
                      {"static", c.sim.penalties.static_obj},
                      {"red_light", c.sim.penalties.red_light},
                      {"stop_sign", c.sim.penalties.stop_sign}};
    s["offroute_limit"] = c.sim.offroute_limit;
    s["blocked_limit"] = c.sim.blocked_limit;
    s["blocked_speed"] = c.sim.blocked_speed;
    s["stop_halt_secs"] = c.sim.stop_halt_secs;
    s["route_done_margin"] = c.sim.route_done_margin;
    s["timeout_scale"] = c.sim.timeout_scale;
    j["sim"] = s;
    return j.dump(2);
}

std::string config_hash(const Config& c) { return hex_u64(fnv1a64(config_to_json(c))); }

}  // namespace efd
