#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "efd/gradcheck.hpp"
#include "efd/model.hpp"

using namespace efd;

namespace {

TrainConfig unit_lambdas() {
    TrainConfig tc;
    tc.lambda_s = tc.lambda_f = tc.lambda_w = tc.lambda_c = tc.lambda_est = 1.0;
    return tc;
}

}  // namespace

TEST_CASE("patch extraction: 3x64x64 with p=8 yields 64 tokens") {
    std::vector<double> img(3 * 64 * 64, 0.25);
    auto t = im2patches<double>(img, 3, 64, 8);
    CHECK(t.shape == Shape{64, 192});
}

TEST_CASE("constant image gives identical tokens before the positional add") {
    std::vector<double> img(3 * 16 * 16, 0.0);
    auto patches = im2patches<double>(img, 3, 16, 8);
    ParamStore<double> ps;
    Rng wr(3);
    auto w = StreamWeights<double>::create(ps, "s", tiny_model_config(), {12}, wr);
    Tape<double> tp;
    Val tokens = tp.add(tp.matmul(tp.leaf(patches), tp.param(w.embed_w)), tp.param(w.embed_b));
    auto v = tp.value(tokens);
    for (int t = 1; t < 4; ++t)
        for (int c = 0; c < 12; ++c)
            CHECK(v[static_cast<size_t>(t * 12 + c)] == v[static_cast<size_t>(c)]);
}

TEST_CASE("identity projection reconstructs the flattened patch") {
    Rng rng(5);
    std::vector<double> img(3 * 16 * 16);
    for (auto& v : img) v = rng.uniform();
    const int p = 8, pdim = p * p * 3;
    auto patches = im2patches<double>(img, 3, 16, p);
    ParamStore<double> ps;
    Tensor<double>& w = ps.create("w", {pdim, pdim}, ParamStore<double>::Init::Zeros, rng);
    for (int i = 0; i < pdim; ++i) w.data[static_cast<size_t>(i * pdim + i)] = 1.0;
    Tape<double> tp;
    auto out = tp.value(tp.matmul(tp.leaf(patches), tp.param(&w)));
    for (size_t i = 0; i < patches.data.size(); ++i) CHECK(out[i] == patches.data[i]);
}

TEST_CASE("token counts follow the merge ladder 64 -> 16 -> 4") {
    ModelConfig cfg;
    cfg.image_size = 64;
    cfg.patch = 8;
    cfg.main_dims = {8, 12, 16};
    cfg.side_dims = {4, 8, 12};
    cfg.stage_blocks = {1, 1, 1};
    cfg.stage_groups = {2, 2, 2};
    cfg.fusion_heads = 2;
    cfg.decoder_dim = 16;
    cfg.decoder_depth = 1;
    cfg.decoder_heads = 2;
    cfg.gru_hidden = 8;
    cfg.ctrl_hidden = 8;
    cfg.speed_hidden = 4;
    cfg.validate();
    CHECK(cfg.tokens_at(0) == 64);
    CHECK(cfg.tokens_at(1) == 16);
    CHECK(cfg.tokens_at(2) == 4);

    ParamStore<float> ps;
    Rng init(1);
    Backbone<float> bb(cfg, ps, init);
    Rng rng(2);
    Tensor<float> mp({64, 192});
    Tensor<float> sp({64, 192});
    for (auto& v : mp.data) v = static_cast<float>(rng.uniform());
    for (auto& v : sp.data) v = static_cast<float>(rng.uniform());
    Tape<float> tp;
    auto res = bb.forward(tp, tp.leaf(mp), tp.leaf(sp));
    REQUIRE(res.record.size() == 3);
    const int want_tokens[3] = {64, 16, 4};
    for (int s = 0; s < 3; ++s) {
        CHECK(res.record[static_cast<size_t>(s)].main_tokens == want_tokens[s]);
        CHECK(res.record[static_cast<size_t>(s)].side_tokens == want_tokens[s]);
        CHECK(res.record[static_cast<size_t>(s)].main_dim == cfg.main_dims[static_cast<size_t>(s)]);
    }
    CHECK(tp.shape(res.main) == Shape{4, 16});
    CHECK(tp.shape(res.side) == Shape{4, 12});
}

TEST_CASE("zero-initialized fusion projections make fuse_stage an identity") {
    ParamStore<float> ps;
    Rng wr(9);
    auto fw = FusionWeights<float>::create(ps, "f", 8, 4, 2, wr);
    for (auto* t : {fw.main_q.wo, fw.main_q.wo_b, fw.side_q.wo, fw.side_q.wo_b})
        for (auto& v : t->data) v = 0;
    Rng rng(10);
    Tensor<float> m({3, 8}), s({5, 4});
    for (auto& v : m.data) v = static_cast<float>(rng.gaussian());
    for (auto& v : s.data) v = static_cast<float>(rng.gaussian());
    Tape<float> tp;
    ViewTokens<float> vt{tp.leaf(m), tp.leaf(s), 0};
    auto fused = fuse_stage(tp, vt, fw);
    auto mo = tp.value(fused.main);
    auto so = tp.value(fused.side);
    for (size_t i = 0; i < m.data.size(); ++i) CHECK(mo[i] == m.data[i]);
    for (size_t i = 0; i < s.data.size(); ++i) CHECK(so[i] == s.data[i]);
    CHECK(tp.shape(fused.main) == Shape{3, 8});
    CHECK(tp.shape(fused.side) == Shape{5, 4});
}

TEST_CASE("uniform side tokens add the same update to every main token") {
    ParamStore<double> ps;
    Rng wr(13);
    auto fw = FusionWeights<double>::create(ps, "f", 6, 4, 2, wr);
    Rng rng(14);
    Tensor<double> m({4, 6});
    for (auto& v : m.data) v = rng.gaussian();
    Tensor<double> s({3, 4});
    for (int c = 0; c < 4; ++c) {
        const double val = rng.gaussian();
        for (int r = 0; r < 3; ++r) s.data[static_cast<size_t>(r * 4 + c)] = val;
    }
    Tape<double> tp;
    Val mv = tp.leaf(m);
    ViewTokens<double> vt{mv, tp.leaf(s), 0};
    auto fused = fuse_stage(tp, vt, fw);
    auto out = tp.value(fused.main);
    std::vector<double> upd0(6);
    for (int c = 0; c < 6; ++c) upd0[static_cast<size_t>(c)] = out[static_cast<size_t>(c)] - m.data[static_cast<size_t>(c)];
    for (int r = 1; r < 4; ++r)
        for (int c = 0; c < 6; ++c)
            CHECK(out[static_cast<size_t>(r * 6 + c)] - m.data[static_cast<size_t>(r * 6 + c)] ==
                  doctest::Approx(upd0[static_cast<size_t>(c)]).epsilon(1e-9));
}

TEST_CASE("fusion disabled equals fusion with zeroed weights, and touches no other parameters") {
    ModelConfig on = tiny_model_config();
    ModelConfig off = on;
    off.fusion = false;

    ParamStore<float> ps_on, ps_off;
    Rng r_on = Rng::substream(3, "init");
    Rng r_off = Rng::substream(3, "init");
    DrivingModel<float> m_on(on, ps_on, r_on);
    DrivingModel<float> m_off(off, ps_off, r_off);

    // Parameter name sets differ only by the fusion blocks.
    auto names_on = ps_on.names();
    auto names_off = ps_off.names();
    for (const auto& n : names_off)
        CHECK(ps_on.find(n) != nullptr);
    for (const auto& n : names_on)
        if (!ps_off.find(n)) CHECK(n.find(".fuse") != std::string::npos);

    // Align shared parameters, zero the fusion ones, compare forwards.
    for (const auto& n : names_off)
        ps_off.at(n).data = ps_on.at(n).data;
    for (const auto& n : names_on)
        if (!ps_off.find(n))
            for (auto& v : ps_on.at(n).data) v = 0;

    Rng dr(77);
    Observation obs = synth_observation(dr, on);
    auto in_on = DrivingModel<float>::make_inputs(obs, on);
    Tape<float> t1, t2;
    auto f_on = m_on.forward(t1, in_on);
    auto f_off = m_off.forward(t2, in_on);
    auto a = t1.value(f_on.waypoints);
    auto b = t2.value(f_off.waypoints);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    auto ca = t1.value(f_on.control);
    auto cb = t2.value(f_off.control);
    for (size_t i = 0; i < ca.size(); ++i) CHECK(ca[i] == cb[i]);
}

TEST_CASE("token sequence layout: S=4, P=4 gives T=13 with boundaries 2,5,9") {
    ModelConfig cfg = tiny_model_config();  // 16x16 p=8 -> 4 tokens per stream
    ParamStore<float> ps;
    Rng init(1);
    DrivingModel<float> model(cfg, ps, init);
    Rng dr(2);
    Observation obs = synth_observation(dr, cfg);
    auto in = DrivingModel<float>::make_inputs(obs, cfg);
    Tape<float> tp;
    auto fwd = model.forward(tp, in);
    CHECK(fwd.layout.n_pred == 2);
    CHECK(fwd.layout.n_meas == 3);
    CHECK(fwd.layout.n_side == 4);
    CHECK(fwd.layout.n_main == 4);
    CHECK(fwd.layout.total() == 13);
    CHECK(fwd.layout.boundaries() == std::vector<int>{2, 5, 9});
    CHECK(fwd.attn.tokens == 13);
}

TEST_CASE("zero measurements produce bias-only measurement tokens") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng init(4);
    Decoder<double> dec(cfg, ps, init);
    Tape<double> tp;
    Val speed = tp.constant({1}, 0.0);
    Val cmd = tp.constant({cfg.n_commands}, 0.0);
    Val target = tp.constant({2}, 0.0);
    Rng rng(5);
    Tensor<double> side({4, cfg.side_dims.back()});
    Tensor<double> main({4, cfg.main_dims.back()});
    for (auto& v : side.data) v = rng.gaussian();
    for (auto& v : main.data) v = rng.gaussian();
    auto [seq, layout] = dec.build_token_sequence(tp, speed, cmd, target, tp.leaf(side),
                                                  tp.leaf(main));
    auto v = tp.value(seq);
    const Index D = cfg.decoder_dim;
    auto row = [&](int r, int c) { return v[static_cast<size_t>(r * D + c)]; };
    const auto& sb = ps.at("decoder.meas.speed.b");
    const auto& cb = ps.at("decoder.meas.cmd.b");
    const auto& tb = ps.at("decoder.meas.target.b");
    for (int c = 0; c < D; ++c) {
        CHECK(row(2, c) == sb.data[static_cast<size_t>(c)]);
        CHECK(row(3, c) == cb.data[static_cast<size_t>(c)]);
        CHECK(row(4, c) == tb.data[static_cast<size_t>(c)]);
    }
}

TEST_CASE("layout slicing recovers each source block") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<float> ps;
    Rng init(6);
    DrivingModel<float> model(cfg, ps, init);
    Rng dr(7);
    Observation obs = synth_observation(dr, cfg);
    auto in = DrivingModel<float>::make_inputs(obs, cfg);
    Tape<float> tp;
    auto fwd = model.forward(tp, in);
    const TokenLayout& lo = fwd.layout;
    CHECK(lo.pred_end() - 0 == lo.n_pred);
    CHECK(lo.meas_end() - lo.pred_end() == lo.n_meas);
    CHECK(lo.side_end() - lo.meas_end() == lo.n_side);
    CHECK(lo.total() - lo.side_end() == lo.n_main);
}

TEST_CASE("attention record has depth x heads x T x T with stochastic rows") {
    ModelConfig cfg = tiny_model_config();
    cfg.decoder_depth = 3;
    ParamStore<float> ps;
    Rng init(8);
    DrivingModel<float> model(cfg, ps, init);
    Rng dr(9);
    Observation obs = synth_observation(dr, cfg);
    auto in = DrivingModel<float>::make_inputs(obs, cfg);
    Tape<float> tp;
    auto fwd = model.forward(tp, in);
    CHECK(fwd.attn.depth == 3);
    CHECK(fwd.attn.heads == cfg.decoder_heads);
    CHECK(static_cast<int>(fwd.attn.maps.size()) == 3 * cfg.decoder_heads);
    const int T = fwd.attn.tokens;
    for (Val m : fwd.attn.maps) {
        CHECK(tp.shape(m) == Shape{T, T});
        auto v = tp.value(m);
        for (int r = 0; r < T; ++r) {
            double sum = 0;
            for (int c = 0; c < T; ++c) {
                sum += v[static_cast<size_t>(r * T + c)];
                CHECK(v[static_cast<size_t>(r * T + c)] > 0.0f);  // no causal mask
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("learnable readout returns prediction-token features; mean_pool averages sensors") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng init(10);
    Decoder<double> dec(cfg, ps, init);
    Rng rng(11);
    Tensor<double> features({13, cfg.decoder_dim});
    for (auto& v : features.data) v = rng.gaussian();
    TokenLayout layout;
    layout.n_side = 4;
    layout.n_main = 4;
    Tape<double> tp;
    Val f = tp.leaf(features);
    auto lv = dec.readout(tp, f, layout, ReadoutMode::LearnableVector);
    auto t0 = tp.value(lv.traj_feature);
    auto t1 = tp.value(lv.ctrl_feature);
    const Index D = cfg.decoder_dim;
    for (Index c = 0; c < D; ++c) {
        CHECK(t0[static_cast<size_t>(c)] == features.data[static_cast<size_t>(c)]);
        CHECK(t1[static_cast<size_t>(c)] == features.data[static_cast<size_t>(D + c)]);
    }
    auto mp = dec.readout(tp, f, layout, ReadoutMode::MeanPool);
    auto p0 = tp.value(mp.traj_feature);
    auto p1 = tp.value(mp.ctrl_feature);
    for (Index c = 0; c < D; ++c) {
        double mean = 0;
        for (int r = layout.pred_end(); r < layout.total(); ++r)
            mean += features.data[static_cast<size_t>(r * D + c)];
        mean /= (layout.total() - layout.pred_end());
        CHECK(p0[static_cast<size_t>(c)] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(p1[static_cast<size_t>(c)] == p0[static_cast<size_t>(c)]);
    }
    // The two modes disagree on random inputs.
    bool differ = false;
    for (Index c = 0; c < D; ++c)
        if (t0[static_cast<size_t>(c)] != p0[static_cast<size_t>(c)]) differ = true;
    CHECK(differ);
    // constant features pool to the constant
    Tensor<double> cfeat({13, cfg.decoder_dim}, 0.625);
    Val cf = tp.leaf(cfeat);
    auto cp = dec.readout(tp, cf, layout, ReadoutMode::MeanPool);
    for (Index c = 0; c < D; ++c)
        CHECK(tp.value(cp.traj_feature)[static_cast<size_t>(c)] == doctest::Approx(0.625));
}

TEST_CASE("prediction tokens do not touch sensor features when value paths are zeroed") {
    ModelConfig cfg = tiny_model_config();  // depth 1
    ParamStore<float> ps;
    Rng init(12);
    Decoder<float> dec(cfg, ps, init);
    for (int h = 0; h < cfg.decoder_heads; ++h)
        for (auto& v : ps.at("decoder.layer0.attn.h" + std::to_string(h) + ".wv").data) v = 0;
    Rng rng(14);
    Tensor<float> side({4, cfg.side_dims.back()});
    Tensor<float> main({4, cfg.main_dims.back()});
    for (auto& v : side.data) v = static_cast<float>(rng.gaussian());
    for (auto& v : main.data) v = static_cast<float>(rng.gaussian());
    Tensor<float> speed({1}, {0.4f});
    Tensor<float> cmd({cfg.n_commands}, 0.0f);
    cmd.data[2] = 1.0f;
    Tensor<float> target({2}, {0.5f, -0.2f});

    auto sensors_out = [&](float pred_fill) {
        for (auto& v : ps.at("decoder.pred").data) v = pred_fill;
        Tape<float> tp;
        auto [seq, layout] = dec.build_token_sequence(tp, tp.leaf(speed), tp.leaf(cmd),
                                                      tp.leaf(target), tp.leaf(side),
                                                      tp.leaf(main));
        auto [feat, trace] = dec.forward(tp, seq);
        auto v = tp.value(feat);
        const int D = cfg.decoder_dim;
        // rows 2..T are sensor tokens
        return std::vector<float>(v.begin() + 2 * D, v.end());
    };
    auto a = sensors_out(0.0f);
    auto b = sensors_out(0.9f);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("waypoint rollout with zero output affine stays at the origin") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng init(15);
    auto head = WaypointHead<double>::create(ps, cfg, init);
    for (auto& v : head.out_w->data) v = 0;
    for (auto& v : head.out_b->data) v = 0;
    Rng rng(16);
    Tensor<double> feat({1, cfg.decoder_dim});
    for (auto& v : feat.data) v = rng.gaussian();
    Tape<double> tp;
    auto roll = waypoint_rollout(tp, tp.leaf(feat), tp.constant({2}, std::vector<double>{4, 1}),
                                 head);
    auto wp = tp.value(roll.waypoints);
    CHECK(tp.shape(roll.waypoints) == Shape{cfg.waypoints, 2});
    for (double v : wp) CHECK(v == 0.0);
}

TEST_CASE("default waypoint horizon is 4") { CHECK(ModelConfig{}.waypoints == 4); }

TEST_CASE("control head: zero pre-activation gives (0.5, 0, 0.5)") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng init(17);
    auto head = ControlHead<double>::create(ps, cfg, init);
    for (auto* t : {head.w1, head.b1, head.w2, head.b2})
        for (auto& v : t->data) v = 0;
    Tape<double> tp;
    Tensor<double> feat({1, cfg.decoder_dim}, 0.3);
    auto cf = control_forward(tp, tp.leaf(feat), head);
    auto c = tp.value(cf.control);
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(0.0));
    CHECK(c[2] == doctest::Approx(0.5));
    CHECK(tp.shape(cf.hidden) == Shape{1, cfg.ctrl_hidden});
}

TEST_CASE("control outputs stay in range for random weights") {
    ModelConfig cfg = tiny_model_config();
    Rng rng(18);
    for (int trial = 0; trial < 1000; ++trial) {
        ParamStore<float> ps;
        Rng wr(rng.next_u32());
        auto head = ControlHead<float>::create(ps, cfg, wr);
        // FanIn leaves biases zero; randomize them too.
        for (auto& v : head.b1->data) v = static_cast<float>(wr.gaussian() * 2);
        for (auto& v : head.b2->data) v = static_cast<float>(wr.gaussian() * 2);
        Tensor<float> feat({1, cfg.decoder_dim});
        for (auto& v : feat.data) v = static_cast<float>(wr.gaussian() * 3);
        Tape<float> tp;
        auto cf = control_forward(tp, tp.leaf(feat), head);
        auto c = tp.value(cf.control);
        CHECK(c[0] >= 0.0f);
        CHECK(c[0] <= 1.0f);
        CHECK(c[1] >= -1.0f);
        CHECK(c[1] <= 1.0f);
        CHECK(c[2] >= 0.0f);
        CHECK(c[2] <= 1.0f);
    }
}

TEST_CASE("losses vanish when outputs equal labels") {
    TrainConfig tc = unit_lambdas();
    Tape<double> tp;
    Val wp = tp.constant({4, 2}, std::vector<double>{1, 0, 2, 0, 3, 1, 4, 1});
    Val ctrl = tp.constant({1, 3}, std::vector<double>{0.6, -0.1, 0.0});
    Val speed = tp.constant({1, 1}, 0.55);
    Val feat = tp.constant({1, 8}, 0.2);
    LabelLeaves<double> label;
    label.waypoints = tp.constant({4, 2}, std::vector<double>{1, 0, 2, 0, 3, 1, 4, 1});
    label.control = tp.constant({1, 3}, std::vector<double>{0.6, -0.1, 0.0});
    label.target_speed = tp.constant({1}, 0.55);
    label.latent = tp.constant({1, 8}, 0.2);
    MixerParams<double> m;
    ParamStore<double> ps;
    Rng wr(19);
    m.lc_w = &ps.create("lcw", {3, 1}, ParamStore<double>::Init::Zeros, wr);
    m.lc_b = &ps.create("lcb", {1}, ParamStore<double>::Init::Zeros, wr);
    m.lw_w = &ps.create("lww", {3, 1}, ParamStore<double>::Init::Zeros, wr);
    m.lw_b = &ps.create("lwb", {1}, ParamStore<double>::Init::Zeros, wr);
    Val xc = tp.constant({1, 3}, 0.0);
    auto est = estimate_losses(tp, xc, xc, m, false);
    auto bundle = compute_losses(tp, wp, ctrl, speed, feat, est, label, tc);
    CHECK(bundle.s(tp) == doctest::Approx(0.0));
    CHECK(bundle.f(tp) == doctest::Approx(0.0));
    CHECK(bundle.w(tp) == doctest::Approx(0.0));
    CHECK(bundle.c(tp) == doctest::Approx(0.0));
}

TEST_CASE("single waypoint off by (0.3, 0.4) contributes 0.35 under the mean convention") {
    Tape<double> tp;
    Val pred = tp.constant({1, 2}, std::vector<double>{0.3, 0.4});
    Val label = tp.constant({1, 2}, std::vector<double>{0.0, 0.0});
    CHECK(static_cast<double>(tp.scalar(tp.l1_distance(pred, label))) ==
          doctest::Approx(0.35).epsilon(1e-12));
}

TEST_CASE("zero estimator weights return the biases") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng wr(20);
    auto m = MixerParams<double>::create(ps, cfg, wr);
    for (auto& v : m.lc_w->data) v = 0;
    for (auto& v : m.lw_w->data) v = 0;
    m.lc_b->data[0] = 0.37;
    m.lw_b->data[0] = -0.11;
    Tape<double> tp;
    Val xc = tp.constant({1, cfg.ctrl_hidden}, 1.0);
    Val xw = tp.constant({1, cfg.gru_hidden}, -2.0);
    auto est = estimate_losses(tp, xc, xw, m, false);
    CHECK(tp.scalar(est.lt_c) == doctest::Approx(0.37));
    CHECK(tp.scalar(est.lt_w) == doctest::Approx(-0.11));
}

TEST_CASE("estimator overfits a single sample") {
    ModelConfig cfg = tiny_model_config();
    ParamStore<double> ps;
    Rng wr(21);
    auto m = MixerParams<double>::create(ps, cfg, wr);
    Rng rng(22);
    Tensor<double> xc({1, cfg.ctrl_hidden});
    Tensor<double> xw({1, cfg.gru_hidden});
    for (auto& v : xc.data) v = rng.gaussian();
    for (auto& v : xw.data) v = rng.gaussian();
    const double target_c = 0.42, target_w = 1.7;
    AdamState<double> adam;
    adam.weight_decay = 0;
    auto params = ps.tensors();
    adam.reset(params);
    double lc = 0, lw = 0;
    for (int step = 0; step < 400; ++step) {
        ps.zero_grads();
        Tape<double> tp;
        auto est = estimate_losses(tp, tp.leaf(xc), tp.leaf(xw), m, false);
        Val loss = tp.add(tp.sq_distance(est.lt_c, tp.constant({1}, target_c)),
                          tp.sq_distance(est.lt_w, tp.constant({1}, target_w)));
        tp.backward(loss);
        adam_step(params, adam, 1e-2);
        lc = tp.scalar(est.lt_c);
        lw = tp.scalar(est.lt_w);
    }
    CHECK(std::abs(lc - target_c) < 0.01);
    CHECK(std::abs(lw - target_w) < 0.01);
}

TEST_CASE("estimator loss sends no gradient into the rest of the model when inputs are detached") {
    ModelConfig cfg = tiny_model_config();
    cfg.detach_estimator_inputs = true;
    TrainConfig tc = unit_lambdas();
    tc.lambda_s = tc.lambda_f = tc.lambda_w = tc.lambda_c = 0.0;  // L_est only
    ParamStore<double> ps;
    Rng init = Rng::substream(5, "init");
    DrivingModel<double> model(cfg, ps, init);
    Rng dr(23);
    Observation obs = synth_observation(dr, cfg);
    ExpertLabel label = synth_label(dr, cfg);
    auto in = DrivingModel<double>::make_inputs(obs, cfg);
    ps.zero_grads();
    Tape<double> tp;
    auto fwd = model.forward(tp, in);
    auto leaves = model.label_leaves(tp, label);
    auto bundle = compute_losses(tp, fwd.waypoints, fwd.control, fwd.speed, fwd.feature, fwd.est,
                                 leaves, tc);
    tp.backward(bundle.total);
    for (size_t i = 0; i < ps.count(); ++i) {
        const auto& name = ps.name_of(i);
        const auto& t = ps.tensor_of(i);
        double norm = 0;
        for (double g : t.grad) norm += std::abs(g);
        if (name.find("head.est") != std::string::npos)
            CHECK(norm > 0);
        else
            CHECK(norm == 0.0);
    }
}

TEST_CASE("prefer: symmetry, limits, and the hand-computed logistic point") {
    CHECK(prefer(0.8, 0.8, 1.3, 1.3) == 0.5);  // exact
    CHECK(prefer(1e6, 0.0, 1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(prefer(0.0, 1e6, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(prefer(0.0, std::log(3.0), 1.0, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("prefer is strictly monotone in both arguments") {
    // Sampled grid plus the sign of the analytic derivative.
    for (int i = 0; i < 50; ++i) {
        const double lc = -2.0 + 0.08 * i;
        CHECK(prefer(lc + 0.04, 0.3, 1.2, 0.9) < prefer(lc, 0.3, 1.2, 0.9));
        CHECK(prefer(0.3, lc + 0.04, 1.2, 0.9) > prefer(0.3, lc, 1.2, 0.9));
        // d/dlc = -kc * sigma' < 0 and d/dlw = +kw * sigma' > 0 always.
        const double z = 0.9 * 0.3 - 1.2 * lc;
        const double sig = 1.0 / (1.0 + std::exp(-z));
        CHECK(-1.2 * sig * (1 - sig) < 0);
        CHECK(0.9 * sig * (1 - sig) > 0);
    }
}

TEST_CASE("whole-model reverse gradients match finite differences at tiny dims") {
    TrainConfig tc = unit_lambdas();
    ModelGcReport rep = model_gradcheck(tiny_model_config(), tc, 1);
    INFO("worst " << rep.worst_rel << " at " << rep.worst_param);
    CHECK(rep.pass);
    CHECK(rep.n_scalars > 10000);
}
