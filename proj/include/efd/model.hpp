#pragma once

#include <vector>

#include "efd/backbone.hpp"
#include "efd/decoder.hpp"
#include "efd/heads.hpp"
#include "efd/sim/types.hpp"

namespace efd {

// Input normalization constants (raw units live in the simulator; the
// network sees these scales).
inline constexpr double kSpeedScale = 0.1;   // m/s -> ~[0,1]
inline constexpr double kTargetScale = 0.05; // m   -> ~[-1,1]

// Everything between rasters and control: two fused backbones, the
// decoder with prediction tokens, and the task heads.
template <class S>
class DrivingModel {
public:
    DrivingModel(const ModelConfig& cfg, ParamStore<S>& ps, Rng& init_rng) : cfg_(cfg) {
        cfg_.validate();
        backbone_ = Backbone<S>(cfg_, ps, init_rng);
        decoder_ = Decoder<S>(cfg_, ps, init_rng);
        wp_head_ = WaypointHead<S>::create(ps, cfg_, init_rng);
        ctrl_head_ = ControlHead<S>::create(ps, cfg_, init_rng);
        aux_ = AuxHeads<S>::create(ps, cfg_, init_rng);
        mixer_ = MixerParams<S>::create(ps, cfg_, init_rng);
    }

    struct Inputs {
        Tensor<S> main_patches;  // (T0 x p*p*C)
        Tensor<S> side_patches;
        Tensor<S> speed{Shape{1}};
        Tensor<S> command{Shape{1}};  // placeholder; resized in make_inputs
        Tensor<S> target{Shape{2}};
    };

    static Inputs make_inputs(const Observation& obs, const ModelConfig& cfg) {
        if (obs.raster_cells != cfg.image_size)
            throw ShapeError("model: observation raster " + std::to_string(obs.raster_cells) +
                             " does not match config image_size " +
                             std::to_string(cfg.image_size));
        Inputs in;
        std::vector<S> main_px(obs.main.begin(), obs.main.end());
        std::vector<S> side_px(obs.side.begin(), obs.side.end());
        in.main_patches = im2patches<S>(main_px, cfg.in_channels, cfg.image_size, cfg.patch);
        in.side_patches = im2patches<S>(side_px, cfg.in_channels, cfg.image_size, cfg.patch);
        in.speed = Tensor<S>({1}, {static_cast<S>(obs.speed * kSpeedScale)});
        std::vector<S> onehot(static_cast<size_t>(cfg.n_commands), S(0));
        onehot[static_cast<size_t>(obs.command)] = S(1);
        in.command = Tensor<S>({cfg.n_commands}, std::move(onehot));
        in.target = Tensor<S>({2}, {static_cast<S>(obs.target.x * kTargetScale),
                                    static_cast<S>(obs.target.y * kTargetScale)});
        return in;
    }

    struct Forward {
        Val waypoints;  // [K x 2]
        Val control;    // [1 x 3]
        Val speed;      // [1 x 1]
        Val feature;    // [1 x latent]
        LossEstimates<S> est;
        Val x_c, x_w;
        Val traj_feature, ctrl_feature;
        AttnTrace attn;
        TokenLayout layout;
        std::vector<StageRecord> stages;
    };

    Forward forward(Tape<S>& tp, const Inputs& in) const {
        Forward f;
        Val mp = tp.leaf(in.main_patches);
        Val sp = tp.leaf(in.side_patches);
        auto bb = backbone_.forward(tp, mp, sp);
        f.stages = bb.record;
        auto [seq, layout] = decoder_.build_token_sequence(
            tp, tp.leaf(in.speed), tp.leaf(in.command), tp.leaf(in.target), bb.side, bb.main);
        f.layout = layout;
        auto [features, trace] = decoder_.forward(tp, seq);
        f.attn = trace;
        auto ro = decoder_.readout(tp, features, layout, cfg_.readout);
        f.traj_feature = ro.traj_feature;
        f.ctrl_feature = ro.ctrl_feature;

        Val target_m = tp.leaf(in.target);
        auto wp = waypoint_rollout(tp, ro.traj_feature, target_m, wp_head_);
        f.waypoints = wp.waypoints;
        f.x_w = wp.final_hidden;
        auto cf = control_forward(tp, ro.ctrl_feature, ctrl_head_);
        f.control = cf.control;
        f.x_c = cf.hidden;
        f.speed = aux_.speed(tp, ro.ctrl_feature);
        f.feature = aux_.feature(tp, ro.traj_feature, ro.ctrl_feature);
        f.est = estimate_losses(tp, f.x_c, f.x_w, mixer_, cfg_.detach_estimator_inputs);
        return f;
    }

    // Plain-double view of a forward pass, for inference-side consumers.
    struct Decision {
        std::vector<Vec2> waypoints;
        ControlOutput control;
        double pred_speed = 0;
        double prefer = 0;
        double lt_c = 0, lt_w = 0;
    };

    Decision decide(Tape<S>& tp, const Forward& f) const {
        Decision d;
        auto wpv = tp.value(f.waypoints);
        const int K = static_cast<int>(tp.shape(f.waypoints)[0]);
        for (int k = 0; k < K; ++k)
            d.waypoints.push_back({static_cast<double>(wpv[static_cast<size_t>(2 * k)]),
                                   static_cast<double>(wpv[static_cast<size_t>(2 * k + 1)])});
        auto cv = tp.value(f.control);
        d.control.throttle = static_cast<double>(cv[0]);
        d.control.steer = static_cast<double>(cv[1]);
        d.control.brake = static_cast<double>(cv[2]);
        d.control.source = ControlOutput::Source::Predicted;
        d.pred_speed = static_cast<double>(tp.scalar(f.speed)) / kSpeedScale;
        d.lt_c = static_cast<double>(tp.scalar(f.est.lt_c));
        d.lt_w = static_cast<double>(tp.scalar(f.est.lt_w));
        d.prefer = prefer(d.lt_c, d.lt_w, cfg_.k_c, cfg_.k_w);
        d.control.prefer = d.prefer;
        return d;
    }

    // Labels as tape leaves. The speed target is scaled like the input so the
    // speed head learns in normalized units.
    LabelLeaves<S> label_leaves(Tape<S>& tp, const ExpertLabel& label) const {
        LabelLeaves<S> l;
        const int K = cfg_.waypoints;
        if (static_cast<int>(label.waypoints.size()) < K)
            throw ShapeError("label: fewer waypoints than the configured horizon");
        std::vector<S> wp;
        for (int k = 0; k < K; ++k) {
            wp.push_back(static_cast<S>(label.waypoints[static_cast<size_t>(k)].x));
            wp.push_back(static_cast<S>(label.waypoints[static_cast<size_t>(k)].y));
        }
        l.waypoints = tp.leaf(Tensor<S>({K, 2}, std::move(wp)));
        l.control = tp.leaf(Tensor<S>({1, 3}, {static_cast<S>(label.control.throttle),
                                               static_cast<S>(label.control.steer),
                                               static_cast<S>(label.control.brake)}));
        l.target_speed =
            tp.leaf(Tensor<S>({1}, {static_cast<S>(label.target_speed * kSpeedScale)}));
        std::vector<S> lat;
        for (double v : label.latent) lat.push_back(static_cast<S>(v));
        l.latent = tp.leaf(Tensor<S>({1, cfg_.latent_dim}, std::move(lat)));
        return l;
    }

    const ModelConfig& config() const { return cfg_; }

private:
    ModelConfig cfg_;
    Backbone<S> backbone_;
    Decoder<S> decoder_;
    WaypointHead<S> wp_head_;
    ControlHead<S> ctrl_head_;
    AuxHeads<S> aux_;
    MixerParams<S> mixer_;
};

}  // namespace efd
