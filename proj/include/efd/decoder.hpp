#pragma once

#include <string>
#include <vector>

#include "efd/attention.hpp"
#include "efd/config.hpp"

namespace efd {

// Fixed order of the decoder sequence: [pred | meas | side | main].
struct TokenLayout {
    int n_pred = 2, n_meas = 3, n_side = 0, n_main = 0;

    int total() const { return n_pred + n_meas + n_side + n_main; }
    int pred_end() const { return n_pred; }
    int meas_end() const { return n_pred + n_meas; }
    int side_end() const { return n_pred + n_meas + n_side; }
    std::vector<int> boundaries() const { return {pred_end(), meas_end(), side_end()}; }
};

// Per-layer, per-head post-softmax matrices captured on the forward pass.
struct AttnTrace {
    int depth = 0, heads = 0, tokens = 0;
    std::vector<Val> maps;  // depth*heads entries, each (T x T)

    Val at(int layer, int head) const {
        return maps[static_cast<size_t>(layer * heads + head)];
    }
};

template <class S>
class Decoder {
public:
    Decoder() = default;
    Decoder(const ModelConfig& cfg, ParamStore<S>& ps, Rng& rng) : cfg_(cfg) {
        const int D = cfg.decoder_dim;
        // Two task probes: token 0 feeds the waypoint head, token 1 the
        // control head. Gaussian init; the scale is config-exposed.
        pred_ = &ps.create("decoder.pred", {cfg.n_pred_tokens, D}, ParamStore<S>::Init::Gaussian,
                           rng, cfg.pred_init_std);
        speed_w_ = &ps.create("decoder.meas.speed.w", {1, D}, ParamStore<S>::Init::FanIn, rng);
        speed_b_ = &ps.create("decoder.meas.speed.b", {D}, ParamStore<S>::Init::Zeros, rng);
        cmd_w_ = &ps.create("decoder.meas.cmd.w", {cfg.n_commands, D}, ParamStore<S>::Init::FanIn,
                            rng);
        cmd_b_ = &ps.create("decoder.meas.cmd.b", {D}, ParamStore<S>::Init::Zeros, rng);
        target_w_ = &ps.create("decoder.meas.target.w", {2, D}, ParamStore<S>::Init::FanIn, rng);
        target_b_ = &ps.create("decoder.meas.target.b", {D}, ParamStore<S>::Init::Zeros, rng);
        side_proj_w_ = &ps.create("decoder.proj.side.w", {cfg.side_dims.back(), D},
                                  ParamStore<S>::Init::FanIn, rng);
        side_proj_b_ = &ps.create("decoder.proj.side.b", {D}, ParamStore<S>::Init::Zeros, rng);
        main_proj_w_ = &ps.create("decoder.proj.main.w", {cfg.main_dims.back(), D},
                                  ParamStore<S>::Init::FanIn, rng);
        main_proj_b_ = &ps.create("decoder.proj.main.b", {D}, ParamStore<S>::Init::Zeros, rng);
        for (int l = 0; l < cfg.decoder_depth; ++l)
            blocks_.push_back(BlockWeights<S>::create(ps, "decoder.layer" + std::to_string(l), D,
                                                      cfg.decoder_heads, cfg.decoder_mlp_ratio,
                                                      cfg.residuals, rng));
    }

    // speed / command / target are 1-d leaves ([1], [n_commands], [2]).
    std::pair<Val, TokenLayout> build_token_sequence(Tape<S>& tp, Val speed, Val command,
                                                     Val target, Val side_tokens,
                                                     Val main_tokens) const {
        const int D = cfg_.decoder_dim;
        auto embed1 = [&](Val x, Tensor<S>* w, Tensor<S>* b) {
            Val row = tp.reshape(x, {1, tp.shape(x)[0]});
            return tp.add(tp.matmul(row, tp.param(w)), tp.param(b));
        };
        Val meas_speed = embed1(speed, speed_w_, speed_b_);
        Val meas_cmd = embed1(command, cmd_w_, cmd_b_);
        Val meas_target = embed1(target, target_w_, target_b_);
        Val side = tp.add(tp.matmul(side_tokens, tp.param(side_proj_w_)), tp.param(side_proj_b_));
        Val main = tp.add(tp.matmul(main_tokens, tp.param(main_proj_w_)), tp.param(main_proj_b_));
        Val seq = tp.concat({tp.param(pred_), meas_speed, meas_cmd, meas_target, side, main}, 0);
        TokenLayout layout;
        layout.n_pred = cfg_.n_pred_tokens;
        layout.n_meas = cfg_.n_meas_tokens;
        layout.n_side = static_cast<int>(tp.shape(side)[0]);
        layout.n_main = static_cast<int>(tp.shape(main)[0]);
        if (tp.shape(seq)[0] != layout.total() || tp.shape(seq)[1] != D)
            throw ShapeError("decoder: token sequence shape " + tp.shape(seq).str());
        return {seq, layout};
    }

    // Full (non-causal) attention; every layer's maps are recorded.
    std::pair<Val, AttnTrace> forward(Tape<S>& tp, Val tokens) const {
        AttnTrace trace;
        trace.depth = cfg_.decoder_depth;
        trace.heads = cfg_.decoder_heads;
        trace.tokens = static_cast<int>(tp.shape(tokens)[0]);
        Val x = tokens;
        for (const auto& b : blocks_) {
            std::vector<Val> layer_maps;
            x = transformer_block(tp, x, b, &layer_maps);
            for (Val m : layer_maps) trace.maps.push_back(m);
        }
        return {x, trace};
    }

    struct Readout {
        Val traj_feature;  // [1 x D]
        Val ctrl_feature;  // [1 x D]
    };

    // learnable_vector: the two prediction-token features. mean_pool: the
    // ablation that averages the sensor tokens and feeds both heads.
    Readout readout(Tape<S>& tp, Val features, const TokenLayout& layout, ReadoutMode mode) const {
        if (mode == ReadoutMode::LearnableVector) {
            Val t0 = tp.slice(features, 0, 0, 1);
            Val t1 = tp.slice(features, 0, 1, 2);
            return {t0, t1};
        }
        Val sensors = tp.slice(features, 0, layout.pred_end(), layout.total());
        Val pooled = tp.reshape(tp.mean_rows(sensors), {1, tp.shape(features)[1]});
        return {pooled, pooled};
    }

private:
    ModelConfig cfg_;
    Tensor<S>* pred_ = nullptr;
    Tensor<S>*speed_w_ = nullptr, *speed_b_ = nullptr;
    Tensor<S>*cmd_w_ = nullptr, *cmd_b_ = nullptr;
    Tensor<S>*target_w_ = nullptr, *target_b_ = nullptr;
    Tensor<S>*side_proj_w_ = nullptr, *side_proj_b_ = nullptr;
    Tensor<S>*main_proj_w_ = nullptr, *main_proj_b_ = nullptr;
    std::vector<BlockWeights<S>> blocks_;
};

}  // namespace efd
