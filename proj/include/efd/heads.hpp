#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "efd/attention.hpp"
#include "efd/config.hpp"

namespace efd {

// Confidence weight for the control branch. Algebraically
// 1 - exp(kc*lc) / (exp(kc*lc) + exp(kw*lw)), computed in the equivalent
// logistic form so large inputs saturate instead of overflowing.
inline double prefer(double lt_c, double lt_w, double k_c, double k_w) {
    const double z = k_w * lt_w - k_c * lt_c;
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// GRU-based waypoint head. hidden_0 is the (projected) trajectory feature;
// each step consumes [prev waypoint, target point] and emits a delta that is
// accumulated, so waypoints are cumulative positions from the ego origin.
template <class S>
struct WaypointHead {
    int hidden = 0, horizon = 4;
    Tensor<S>*in_proj_w = nullptr, *in_proj_b = nullptr;     // feature -> hidden
    Tensor<S>*wz = nullptr, *wr = nullptr, *wh = nullptr;    // [(hidden+4) x hidden]
    Tensor<S>*bz = nullptr, *br = nullptr, *bh = nullptr;
    Tensor<S>*out_w = nullptr, *out_b = nullptr;             // hidden -> 2

    static WaypointHead create(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
        WaypointHead h;
        h.hidden = cfg.gru_hidden;
        h.horizon = cfg.waypoints;
        const int D = cfg.decoder_dim, H = cfg.gru_hidden;
        h.in_proj_w = &ps.create("head.wp.in.w", {D, H}, ParamStore<S>::Init::FanIn, rng);
        h.in_proj_b = &ps.create("head.wp.in.b", {H}, ParamStore<S>::Init::Zeros, rng);
        h.wz = &ps.create("head.wp.gru.wz", {H + 4, H}, ParamStore<S>::Init::FanIn, rng);
        h.wr = &ps.create("head.wp.gru.wr", {H + 4, H}, ParamStore<S>::Init::FanIn, rng);
        h.wh = &ps.create("head.wp.gru.wh", {H + 4, H}, ParamStore<S>::Init::FanIn, rng);
        h.bz = &ps.create("head.wp.gru.bz", {H}, ParamStore<S>::Init::Zeros, rng);
        h.br = &ps.create("head.wp.gru.br", {H}, ParamStore<S>::Init::Zeros, rng);
        h.bh = &ps.create("head.wp.gru.bh", {H}, ParamStore<S>::Init::Zeros, rng);
        h.out_w = &ps.create("head.wp.out.w", {H, 2}, ParamStore<S>::Init::FanIn, rng);
        h.out_b = &ps.create("head.wp.out.b", {2}, ParamStore<S>::Init::Zeros, rng);
        return h;
    }
};

template <class S>
struct WaypointRollout {
    Val waypoints;      // [K x 2], ego frame
    Val final_hidden;   // X_w, [1 x hidden]
};

template <class S>
WaypointRollout<S> waypoint_rollout(Tape<S>& tp, Val traj_feature, Val target_point,
                                    const WaypointHead<S>& head) {
    Val h = tp.add(tp.matmul(traj_feature, tp.param(head.in_proj_w)), tp.param(head.in_proj_b));
    Val target = tp.reshape(target_point, {1, 2});
    Val wp = tp.constant({1, 2}, S(0));
    std::vector<Val> points;
    for (int k = 0; k < head.horizon; ++k) {
        Val x = tp.concat({wp, target}, 1);  // [1 x 4]
        Val hx = tp.concat({h, x}, 1);       // [1 x (hidden+4)]
        Val z = tp.sigmoid(tp.add(tp.matmul(hx, tp.param(head.wz)), tp.param(head.bz)));
        Val r = tp.sigmoid(tp.add(tp.matmul(hx, tp.param(head.wr)), tp.param(head.br)));
        Val rh = tp.concat({tp.mul(r, h), x}, 1);
        Val cand = tp.tanh_op(tp.add(tp.matmul(rh, tp.param(head.wh)), tp.param(head.bh)));
        // h' = (1-z) * h + z * cand
        Val keep = tp.mul(tp.affine_scalar(z, S(-1), S(1)), h);
        h = tp.add(keep, tp.mul(z, cand));
        Val delta = tp.add(tp.matmul(h, tp.param(head.out_w)), tp.param(head.out_b));
        wp = tp.add(wp, delta);
        points.push_back(wp);
    }
    return {tp.concat(points, 0), h};
}

// throttle/brake through sigmoid, steer through tanh; ranges hold by
// construction. X_c is the penultimate (hidden) activation.
template <class S>
struct ControlHead {
    int hidden = 0;
    Tensor<S>*w1 = nullptr, *b1 = nullptr;  // feature -> hidden
    Tensor<S>*w2 = nullptr, *b2 = nullptr;  // hidden -> 3

    static ControlHead create(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
        ControlHead h;
        h.hidden = cfg.ctrl_hidden;
        h.w1 = &ps.create("head.ctrl.w1", {cfg.decoder_dim, cfg.ctrl_hidden},
                          ParamStore<S>::Init::FanIn, rng);
        h.b1 = &ps.create("head.ctrl.b1", {cfg.ctrl_hidden}, ParamStore<S>::Init::Zeros, rng);
        h.w2 = &ps.create("head.ctrl.w2", {cfg.ctrl_hidden, 3}, ParamStore<S>::Init::FanIn, rng);
        h.b2 = &ps.create("head.ctrl.b2", {3}, ParamStore<S>::Init::Zeros, rng);
        return h;
    }
};

template <class S>
struct ControlForward {
    Val control;  // [1 x 3]: throttle, steer, brake
    Val hidden;   // X_c, [1 x hidden]
};

template <class S>
ControlForward<S> control_forward(Tape<S>& tp, Val ctrl_feature, const ControlHead<S>& head) {
    Val xc = tp.relu(tp.add(tp.matmul(ctrl_feature, tp.param(head.w1)), tp.param(head.b1)));
    Val pre = tp.add(tp.matmul(xc, tp.param(head.w2)), tp.param(head.b2));
    Val throttle = tp.sigmoid(tp.slice(pre, 1, 0, 1));
    Val steer = tp.tanh_op(tp.slice(pre, 1, 1, 2));
    Val brake = tp.sigmoid(tp.slice(pre, 1, 2, 3));
    return {tp.concat({throttle, steer, brake}, 1), xc};
}

// Auxiliary supervision heads: scalar speed and the projection matched
// against the expert's privileged feature.
template <class S>
struct AuxHeads {
    Tensor<S>*speed_w1 = nullptr, *speed_b1 = nullptr, *speed_w2 = nullptr, *speed_b2 = nullptr;
    Tensor<S>*feat_w = nullptr, *feat_b = nullptr;

    static AuxHeads create(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
        AuxHeads h;
        h.speed_w1 = &ps.create("head.speed.w1", {cfg.decoder_dim, cfg.speed_hidden},
                                ParamStore<S>::Init::FanIn, rng);
        h.speed_b1 = &ps.create("head.speed.b1", {cfg.speed_hidden}, ParamStore<S>::Init::Zeros, rng);
        h.speed_w2 = &ps.create("head.speed.w2", {cfg.speed_hidden, 1},
                                ParamStore<S>::Init::FanIn, rng);
        h.speed_b2 = &ps.create("head.speed.b2", {1}, ParamStore<S>::Init::Zeros, rng);
        h.feat_w = &ps.create("head.feat.w", {2 * cfg.decoder_dim, cfg.latent_dim},
                              ParamStore<S>::Init::FanIn, rng);
        h.feat_b = &ps.create("head.feat.b", {cfg.latent_dim}, ParamStore<S>::Init::Zeros, rng);
        return h;
    }

    Val speed(Tape<S>& tp, Val ctrl_feature) const {
        Val h = tp.relu(tp.add(tp.matmul(ctrl_feature, tp.param(speed_w1)), tp.param(speed_b1)));
        return tp.add(tp.matmul(h, tp.param(speed_w2)), tp.param(speed_b2));
    }
    Val feature(Tape<S>& tp, Val traj_feature, Val ctrl_feature) const {
        Val cat = tp.concat({traj_feature, ctrl_feature}, 1);
        return tp.add(tp.matmul(cat, tp.param(feat_w)), tp.param(feat_b));
    }
};

// Linear_1(X_c) and Linear_2(X_w): scalar estimates of the per-sample control
// and waypoint losses, trained against the detached actual losses.
template <class S>
struct MixerParams {
    Tensor<S>*lc_w = nullptr, *lc_b = nullptr;
    Tensor<S>*lw_w = nullptr, *lw_b = nullptr;
    double k_c = 1.0, k_w = 1.0;

    static MixerParams create(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
        MixerParams m;
        m.lc_w = &ps.create("head.est.lc.w", {cfg.ctrl_hidden, 1}, ParamStore<S>::Init::FanIn, rng);
        m.lc_b = &ps.create("head.est.lc.b", {1}, ParamStore<S>::Init::Zeros, rng);
        m.lw_w = &ps.create("head.est.lw.w", {cfg.gru_hidden, 1}, ParamStore<S>::Init::FanIn, rng);
        m.lw_b = &ps.create("head.est.lw.b", {1}, ParamStore<S>::Init::Zeros, rng);
        m.k_c = cfg.k_c;
        m.k_w = cfg.k_w;
        return m;
    }
};

template <class S>
struct LossEstimates {
    Val lt_c, lt_w;  // scalars
};

template <class S>
LossEstimates<S> estimate_losses(Tape<S>& tp, Val x_c, Val x_w, const MixerParams<S>& m,
                                 bool detach_inputs) {
    Val xc = detach_inputs ? tp.detach(x_c) : x_c;
    Val xw = detach_inputs ? tp.detach(x_w) : x_w;
    Val lc = tp.reshape(tp.add(tp.matmul(xc, tp.param(m.lc_w)), tp.param(m.lc_b)), {1});
    Val lw = tp.reshape(tp.add(tp.matmul(xw, tp.param(m.lw_w)), tp.param(m.lw_b)), {1});
    return {lc, lw};
}

// The four training losses plus the estimator term. All L1/L2 reductions are
// means over the compared elements.
template <class S>
struct LossBundle {
    Val L_s, L_f, L_w, L_c, L_est, total;
    double lambda_s = 1, lambda_f = 1, lambda_w = 1, lambda_c = 1, lambda_est = 1;

    double s(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(L_s)); }
    double f(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(L_f)); }
    double w(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(L_w)); }
    double c(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(L_c)); }
    double est(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(L_est)); }
    double sum(const Tape<S>& tp) const { return static_cast<double>(tp.scalar(total)); }
};

template <class S>
struct LabelLeaves {
    Val waypoints;     // [K x 2]
    Val control;       // [1 x 3]
    Val target_speed;  // [1]
    Val latent;        // [1 x latent_dim]
};

template <class S>
LossBundle<S> compute_losses(Tape<S>& tp, Val pred_waypoints, Val pred_control, Val pred_speed,
                             Val pred_feature, const LossEstimates<S>& est,
                             const LabelLeaves<S>& label, const TrainConfig& tc) {
    LossBundle<S> b;
    b.lambda_s = tc.lambda_s;
    b.lambda_f = tc.lambda_f;
    b.lambda_w = tc.lambda_w;
    b.lambda_c = tc.lambda_c;
    b.lambda_est = tc.lambda_est;
    b.L_w = tp.l1_distance(pred_waypoints, label.waypoints);
    b.L_c = tp.l1_distance(pred_control, label.control);
    b.L_s = tp.l1_distance(tp.reshape(pred_speed, {1}), label.target_speed);
    b.L_f = tp.sq_distance(pred_feature, label.latent);
    // Estimator targets are the detached actual losses; squared errors summed.
    Val ec = tp.sq_distance(est.lt_c, tp.detach(b.L_c));
    Val ew = tp.sq_distance(est.lt_w, tp.detach(b.L_w));
    b.L_est = tp.add(ec, ew);
    Val total = tp.constant({1}, S(0));
    auto acc = [&](Val term, double lambda) {
        if (lambda != 0.0) total = tp.add(total, tp.scale(term, static_cast<S>(lambda)));
    };
    acc(b.L_s, tc.lambda_s);
    acc(b.L_f, tc.lambda_f);
    acc(b.L_w, tc.lambda_w);
    acc(b.L_c, tc.lambda_c);
    acc(b.L_est, tc.lambda_est);
    b.total = total;
    return b;
}

}  // namespace efd
