#pragma once

#include <string>
#include <vector>

#include "efd/common.hpp"
#include "efd/optim.hpp"

namespace efd {

enum class ReadoutMode { LearnableVector, MeanPool };
enum class MixMode { Dynamic, StaticTcp };

// Every architectural hyperparameter. Defaults are the desk-scale build; the
// full-scale recipe from the reference experiments is noted in the shipped
// config comments.
struct ModelConfig {
    int image_size = 64;   // square input rasters
    int in_channels = 3;
    int patch = 8;

    std::vector<int> main_dims = {16, 32, 64};  // per-stage embed dims, main/focus view
    std::vector<int> side_dims = {8, 16, 32};   // per-stage embed dims, side view
    std::vector<int> stage_blocks = {1, 1, 1};
    std::vector<int> stage_groups = {2, 2, 2};  // cascaded-group-attention groups
    int backbone_mlp_ratio = 2;

    bool fusion = true;                     // cross-attention fusion master switch
    std::vector<bool> fusion_stages = {};   // per-stage override; empty = all stages
    int fusion_heads = 2;

    int decoder_dim = 64;
    int decoder_depth = 8;
    int decoder_heads = 4;
    int decoder_mlp_ratio = 2;
    bool residuals = true;  // false = literal MLP(Attention(x)) blocks

    ReadoutMode readout = ReadoutMode::LearnableVector;
    double pred_init_std = 0.02;

    int gru_hidden = 64;
    int waypoints = 4;       // horizon K at 0.5 s spacing
    int ctrl_hidden = 64;
    int speed_hidden = 32;
    int latent_dim = 8;      // expert privileged feature size

    MixMode mix_mode = MixMode::Dynamic;
    double static_alpha = 0.5;
    double k_c = 1.0;
    double k_w = 1.0;
    bool detach_estimator_inputs = false;

    int n_commands = 6;  // follow/left/right/straight/change-left/change-right
    int n_meas_tokens = 3;
    int n_pred_tokens = 2;

    int stages() const { return static_cast<int>(main_dims.size()); }
    bool fusion_at(int stage) const {
        if (!fusion) return false;
        if (fusion_stages.empty()) return true;
        return fusion_stages[static_cast<size_t>(stage)];
    }
    // Tokens per stream at stage s: patch grid, then 2x2 merge per stage.
    int tokens_at(int stage) const {
        int g = image_size / patch;
        for (int s = 0; s < stage; ++s) g /= 2;
        return g * g;
    }
    int final_tokens() const { return tokens_at(stages() - 1); }
    int decoder_tokens() const { return n_pred_tokens + n_meas_tokens + 2 * final_tokens(); }

    void validate() const;
};

struct TrainConfig {
    int epochs = 12;
    int batch_size = 32;
    LrSchedule schedule;  // halving boundaries rescaled for desk runs
    double lambda_s = 1.0;
    double lambda_f = 1.0;
    double lambda_w = 1.0;
    double lambda_c = 1.0;
    double lambda_est = 1.0;
    double weight_decay = 1e-7;
    std::uint64_t seed = 0;
    int checkpoint_every = 4;  // epochs
    int log_every = 1;         // steps

    void validate() const;
};

struct PidGains {
    double kp = 1.0, ki = 0.0, kd = 0.0;
};

struct InfractionPenalties {
    double pedestrian = 0.50;
    double vehicle = 0.60;
    double static_obj = 0.65;
    double red_light = 0.70;
    double stop_sign = 0.80;
};

struct SimConfig {
    double dt = 0.05;
    double control_hz = 10.0;  // policy rate; held between ticks
    double sample_hz = 2.0;    // dataset collection rate

    // kinematic bicycle
    double wheelbase = 2.5;
    double a_max = 4.0;       // m/s^2 at full throttle
    double b_max = 8.0;       // m/s^2 at full brake
    double drag = 0.02;       // quadratic drag coefficient
    double delta_max = 0.6;   // max road-wheel angle, rad
    double ego_radius = 1.2;

    double cruise_speed = 6.0;
    double waypoint_spacing = 0.5;  // seconds between waypoints

    PidGains lon_pid{1.0, 0.05, 0.0};
    PidGains lat_pid{0.8, 0.0, 0.2};
    double pid_integral_clamp = 10.0;

    // expert hazard gates
    double hazard_ahead = 14.0;      // corridor length scanned for actors, m
    double hazard_halfwidth = 2.5;   // corridor half width, m
    double light_ahead = 18.0;       // start reacting to lights within this arc distance
    double stop_line_margin = 2.0;   // stop this far before the line
    double expert_brake_decel = 1.8; // comfort decel of the expert braking profile
    double curve_slow_accel = 3.0;   // lateral accel bound for curve slowdown
    double target_lookahead = 10.0;  // target-point arc distance, m
    double aim_lookahead = 6.0;      // expert steering aim distance, m

    // rasters
    int raster_cells = 64;
    double main_forward = 32.0;   // main window: [0, main_forward] x [-w/2, w/2]
    double main_width = 32.0;
    double side_width = 48.0;     // side window: lateral extent
    double side_depth = 24.0;     // side window: forward extent (centered back 1/3)
    double corridor_halfwidth = 3.0;

    // infractions / termination
    InfractionPenalties penalties;
    double offroute_limit = 30.0;
    double blocked_limit = 90.0;   // seconds below blocked_speed
    double blocked_speed = 0.1;
    double stop_halt_secs = 1.0;   // mandatory halt at stop signs
    double route_done_margin = 2.0;
    double timeout_scale = 2.0;    // timeout = len/timeout_scale_speed*scale... see eval

    void validate() const;
};

struct Config {
    ModelConfig model;
    TrainConfig train;
    SimConfig sim;
};

// Strict parse: unknown keys and type mismatches are ConfigErrors (a silent
// typo in an ablation flag would invalidate an experiment). Missing keys take
// the defaults above.
Config parse_config_file(const std::string& path);
Config parse_config_text(const std::string& text);

std::string config_to_json(const Config& c);
// Hash of the canonical serialized form; stamped into checkpoints, datasets
// and manifests.
std::string config_hash(const Config& c);

std::string readout_name(ReadoutMode m);
std::string mix_name(MixMode m);

}  // namespace efd
