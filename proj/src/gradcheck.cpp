#include "efd/gradcheck.hpp"

#include "efd/backbone.hpp"

namespace efd {

namespace {

// Probe loss: squared distance to a fixed random target, so every output
// element influences the scalar.
Val probe(Tape<double>& tp, Val out, Rng& rng) {
    Tensor<double> target(tp.shape(out));
    for (auto& v : target.data) v = rng.uniform(-1.0, 1.0);
    return tp.sq_distance(out, tp.leaf(target));
}

// FD check of a structure with weights living in a ParamStore: reverse-mode
// grads accumulate into the store, finite differences perturb each scalar.
GcResult check_structure(const std::string& name, ParamStore<double>& ps,
                         std::vector<Tensor<double>>& inputs,
                         const std::function<Val(Tape<double>&, const std::vector<Val>&)>& fwd) {
    GcResult res;
    res.name = name;
    for (auto& t : inputs) t.requires_grad = true;

    auto loss_of = [&]() {
        Tape<double> tp;
        std::vector<Val> leaves;
        for (const auto& t : inputs) leaves.push_back(tp.leaf(t));
        return static_cast<double>(tp.scalar(fwd(tp, leaves)));
    };

    ps.zero_grads();
    std::vector<std::vector<double>> input_grads;
    {
        Tape<double> tp;
        std::vector<Val> leaves;
        for (const auto& t : inputs) leaves.push_back(tp.leaf(t));
        Val loss = fwd(tp, leaves);
        tp.backward(loss);
        for (Val l : leaves) {
            auto g = tp.grad(l);
            input_grads.emplace_back(g.begin(), g.end());
        }
    }

    auto fd_sweep = [&](double* slot, double analytic) {
        const double keep = *slot;
        *slot = keep + kGcStep;
        const double lp = loss_of();
        *slot = keep - kGcStep;
        const double lm = loss_of();
        *slot = keep;
        const double fd = (lp - lm) / (2 * kGcStep);
        res.worst_rel = std::max(res.worst_rel, gc_rel_err(analytic, fd));
        res.checked += 1;
    };

    for (size_t i = 0; i < ps.count(); ++i) {
        Tensor<double>& p = ps.tensor_of(i);
        for (size_t j = 0; j < p.data.size(); ++j) fd_sweep(&p.data[j], p.grad[j]);
    }
    for (size_t t = 0; t < inputs.size(); ++t)
        for (size_t j = 0; j < inputs[t].data.size(); ++j)
            fd_sweep(&inputs[t].data[j],
                     input_grads[t].empty() ? 0.0 : input_grads[t][j]);
    res.pass = res.worst_rel < kGcTol;
    return res;
}

}  // namespace

std::vector<GcResult> gradcheck_primitives(std::uint64_t seed) {
    std::vector<GcResult> out;
    auto one = [&](const std::string& name,
                   std::function<std::vector<Tensor<double>>(Rng&)> gen,
                   std::function<Val(Tape<double>&, const std::vector<Val>&)> build) {
        out.push_back(gc_check(name, gen, build, 20, seed));
    };

    one("matmul",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {4, 2})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.matmul(v[0], v[1]), pr);
        });
    one("add",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.add(v[0], v[1]), pr);
        });
    one("add_broadcast",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.add(v[0], v[1]), pr);
        });
    one("mul",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.mul(v[0], v[1]), pr);
        });
    one("mul_broadcast",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.mul(v[0], v[1]), pr);
        });
    one("scale",
        [](Rng& r) { return std::vector{gc_tensor(r, {2, 5})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.scale(v[0], 1.7), pr);
        });
    one("affine_scalar",
        [](Rng& r) { return std::vector{gc_tensor(r, {2, 5})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.affine_scalar(v[0], -0.8, 0.3), pr);
        });
    one("concat_rows",
        [](Rng& r) { return std::vector{gc_tensor(r, {2, 3}), gc_tensor(r, {4, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.concat({v[0], v[1]}, 0), pr);
        });
    one("concat_cols",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 2}), gc_tensor(r, {3, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.concat({v[0], v[1]}, 1), pr);
        });
    one("slice_rows",
        [](Rng& r) { return std::vector{gc_tensor(r, {5, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.slice(v[0], 0, 1, 4), pr);
        });
    one("slice_cols",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 5})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.slice(v[0], 1, 2, 5), pr);
        });
    one("reshape",
        [](Rng& r) { return std::vector{gc_tensor(r, {4, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.reshape(v[0], {2, 6}), pr);
        });
    one("transpose",
        [](Rng& r) { return std::vector{gc_tensor(r, {4, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.transpose(v[0]), pr);
        });
    one("gather_rows",
        [](Rng& r) { return std::vector{gc_tensor(r, {5, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.gather_rows(v[0], {4, 0, 2, 0}), pr);
        });
    one("mean_all",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.mean_all(v[0]), pr);
        });
    one("mean_rows",
        [](Rng& r) { return std::vector{gc_tensor(r, {4, 3})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.mean_rows(v[0]), pr);
        });
    one("relu",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}, /*margin=*/0.05)}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.relu(v[0]), pr);
        });
    one("gelu",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.gelu(v[0]), pr);
        });
    one("sigmoid",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.sigmoid(v[0]), pr);
        });
    one("tanh",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.tanh_op(v[0]), pr);
        });
    one("layer_norm",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 6})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.layer_norm(v[0]), pr);
        });
    one("softmax",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 5})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            Rng pr(7);
            return probe(tp, tp.softmax(v[0]), pr);
        });
    one("l1_distance",
        [](Rng& r) {
            // Keep |a-b| away from the kink.
            auto a = gc_tensor(r, {3, 4});
            auto b = gc_tensor(r, {3, 4});
            for (size_t i = 0; i < a.data.size(); ++i) {
                const double d = a.data[i] - b.data[i];
                if (std::abs(d) < 0.05) a.data[i] += d >= 0 ? 0.1 : -0.1;
            }
            return std::vector{a, b};
        },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            return tp.l1_distance(v[0], v[1]);
        });
    one("sq_distance",
        [](Rng& r) { return std::vector{gc_tensor(r, {3, 4}), gc_tensor(r, {3, 4})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            return tp.sq_distance(v[0], v[1]);
        });
    one("softmax_cross",
        [](Rng& r) { return std::vector{gc_tensor(r, {2, 5}), gc_tensor(r, {2, 5})}; },
        [](Tape<double>& tp, const std::vector<Val>& v) {
            return tp.sq_distance(tp.softmax(v[0]), v[1]);
        });
    return out;
}

std::vector<GcResult> gradcheck_blocks(std::uint64_t seed) {
    std::vector<GcResult> out;
    Rng gen(seed * 31 + 5);

    {
        ParamStore<double> ps;
        Rng wr(seed + 1);
        auto w = BlockWeights<double>::create(ps, "b", 8, 2, 2, true, wr);
        std::vector<Tensor<double>> inputs{gc_tensor(gen, {4, 8})};
        out.push_back(check_structure(
            "transformer_block", ps, inputs,
            [&w](Tape<double>& tp, const std::vector<Val>& v) {
                Rng pr(7);
                return probe(tp, transformer_block(tp, v[0], w), pr);
            }));
    }
    {
        ParamStore<double> ps;
        Rng wr(seed + 2);
        auto w = CgaBlockWeights<double>::create(ps, "c", 8, 2, 2, true, wr);
        std::vector<Tensor<double>> inputs{gc_tensor(gen, {5, 8})};
        out.push_back(check_structure(
            "cga_block", ps, inputs,
            [&w](Tape<double>& tp, const std::vector<Val>& v) {
                Rng pr(7);
                return probe(tp, cga_block(tp, v[0], w), pr);
            }));
    }
    {
        ParamStore<double> ps;
        Rng wr(seed + 3);
        auto w = FusionWeights<double>::create(ps, "f", 8, 4, 2, wr);
        std::vector<Tensor<double>> inputs{gc_tensor(gen, {3, 8}), gc_tensor(gen, {4, 4})};
        out.push_back(check_structure(
            "fuse_stage", ps, inputs,
            [&w](Tape<double>& tp, const std::vector<Val>& v) {
                ViewTokens<double> vt{v[0], v[1], 0};
                auto fused = fuse_stage(tp, vt, w);
                Rng pr(7);
                Val pm = probe(tp, fused.main, pr);
                Val pside = probe(tp, fused.side, pr);
                return tp.add(pm, pside);
            }));
    }
    {
        ParamStore<double> ps;
        Rng wr(seed + 4);
        ModelConfig mc = tiny_model_config();
        mc.gru_hidden = 8;
        mc.decoder_dim = 8;
        mc.waypoints = 3;
        auto head = WaypointHead<double>::create(ps, mc, wr);
        std::vector<Tensor<double>> inputs{gc_tensor(gen, {1, 8}), gc_tensor(gen, {2})};
        out.push_back(check_structure(
            "waypoint_rollout", ps, inputs,
            [&head](Tape<double>& tp, const std::vector<Val>& v) {
                auto roll = waypoint_rollout(tp, v[0], v[1], head);
                Rng pr(7);
                Val pw = probe(tp, roll.waypoints, pr);
                Val ph = probe(tp, roll.final_hidden, pr);
                return tp.add(pw, ph);
            }));
    }
    {
        ParamStore<double> ps;
        Rng wr(seed + 5);
        ModelConfig mc = tiny_model_config();
        mc.decoder_dim = 8;
        mc.ctrl_hidden = 6;
        auto head = ControlHead<double>::create(ps, mc, wr);
        MixerParams<double> mix;
        mix.lc_w = &ps.create("est.w", {6, 1}, ParamStore<double>::Init::FanIn, wr);
        mix.lc_b = &ps.create("est.b", {1}, ParamStore<double>::Init::Zeros, wr);
        std::vector<Tensor<double>> inputs{gc_tensor(gen, {1, 8}, 0.1)};
        out.push_back(check_structure(
            "control_head_estimator", ps, inputs,
            [&head, &mix](Tape<double>& tp, const std::vector<Val>& v) {
                auto cf = control_forward(tp, v[0], head);
                Val est = tp.add(tp.matmul(cf.hidden, tp.param(mix.lc_w)), tp.param(mix.lc_b));
                Rng pr(7);
                Val pc = probe(tp, cf.control, pr);
                return tp.add(pc, tp.sq_distance(tp.reshape(est, {1}), tp.constant({1}, 0.25)));
            }));
    }
    return out;
}

ModelConfig tiny_model_config() {
    ModelConfig m;
    m.image_size = 16;
    m.patch = 8;
    m.main_dims = {12};
    m.side_dims = {8};
    m.stage_blocks = {1};
    m.stage_groups = {2};
    m.backbone_mlp_ratio = 2;
    m.fusion = true;
    m.fusion_heads = 2;
    m.decoder_dim = 16;
    m.decoder_depth = 1;
    m.decoder_heads = 2;
    m.decoder_mlp_ratio = 2;
    m.gru_hidden = 16;
    m.waypoints = 2;
    m.ctrl_hidden = 16;
    m.speed_hidden = 8;
    return m;
}

}  // namespace efd
