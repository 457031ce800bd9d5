#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "efd/model.hpp"

namespace efd {

// Central finite differences in f64 (f32 differences are too noisy to verify
// a 1e-4 relative bound). rel = |g - fd| / max(|g|, |fd|, 1e-5): the floor
// turns near-zero comparisons into an absolute gate at 1e-9, well above the
// ~1e-11 cancellation noise of f64 central differences at h=1e-5.
inline double gc_rel_err(double g, double fd) {
    const double denom = std::max({std::abs(g), std::abs(fd), 1e-5});
    return std::abs(g - fd) / denom;
}

inline constexpr double kGcStep = 1e-5;
inline constexpr double kGcTol = 1e-4;

struct GcResult {
    std::string name;
    double worst_rel = 0;
    int checked = 0;
    bool pass = true;
};

// Generic FD property: `build` maps leaf handles to a scalar loss; inputs are
// regenerated per seed by `gen`. Every element of every input is perturbed.
inline GcResult gc_check(const std::string& name,
                         const std::function<std::vector<Tensor<double>>(Rng&)>& gen,
                         const std::function<Val(Tape<double>&, const std::vector<Val>&)>& build,
                         int seeds = 20, std::uint64_t seed0 = 1234) {
    GcResult res;
    res.name = name;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(seed0 + static_cast<std::uint64_t>(s) * 7919);
        std::vector<Tensor<double>> inputs = gen(rng);
        for (auto& t : inputs) t.requires_grad = true;

        auto eval = [&](const std::vector<Tensor<double>>& ins) {
            Tape<double> tp;
            std::vector<Val> leaves;
            for (const auto& t : ins) leaves.push_back(tp.leaf(t));
            return static_cast<double>(tp.scalar(build(tp, leaves)));
        };

        Tape<double> tp;
        std::vector<Val> leaves;
        for (auto& t : inputs) leaves.push_back(tp.leaf(t));
        Val loss = build(tp, leaves);
        tp.backward(loss);
        std::vector<std::vector<double>> grads;
        for (Val l : leaves) {
            auto g = tp.grad(l);
            grads.emplace_back(g.begin(), g.end());
        }

        for (size_t ti = 0; ti < inputs.size(); ++ti) {
            for (size_t j = 0; j < inputs[ti].data.size(); ++j) {
                std::vector<Tensor<double>> mut = inputs;
                mut[ti].data[j] += kGcStep;
                const double lp = eval(mut);
                mut[ti].data[j] -= 2 * kGcStep;
                const double lm = eval(mut);
                const double fd = (lp - lm) / (2 * kGcStep);
                const double g = grads[ti].empty() ? 0.0 : grads[ti][j];
                const double rel = gc_rel_err(g, fd);
                res.worst_rel = std::max(res.worst_rel, rel);
                res.checked += 1;
            }
        }
    }
    res.pass = res.worst_rel < kGcTol;
    return res;
}

// Random tensors with values in [-1, 1]; `margin` pushes every element away
// from 0 (kinked ops: relu, l1).
inline Tensor<double> gc_tensor(Rng& rng, Shape sh, double margin = 0.0) {
    Tensor<double> t(sh);
    for (auto& v : t.data) {
        v = rng.uniform(-1.0, 1.0);
        if (margin > 0) v += v >= 0 ? margin : -margin;
    }
    return t;
}

// Every registered tape primitive, with a squared-distance probe so the loss
// is sensitive to each output element.
std::vector<GcResult> gradcheck_primitives(std::uint64_t seed);

// Composite structures: transformer block, cascaded group attention, fusion,
// GRU rollout, control head.
std::vector<GcResult> gradcheck_blocks(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic data (shared by gradcheck, audits, and invariance sweeps)
// ---------------------------------------------------------------------------
inline Observation synth_observation(Rng& rng, const ModelConfig& cfg) {
    Observation o;
    o.raster_cells = cfg.image_size;
    const size_t n = static_cast<size_t>(3) * cfg.image_size * cfg.image_size;
    o.main.resize(n);
    o.side.resize(n);
    for (auto& v : o.main) v = static_cast<float>(rng.uniform());
    for (auto& v : o.side) v = static_cast<float>(rng.uniform());
    o.speed = rng.uniform(0.0, 8.0);
    o.command = static_cast<Command>(rng.uniform_int(6));
    o.target = {rng.uniform(2.0, 15.0), rng.uniform(-8.0, 8.0)};
    return o;
}

inline ExpertLabel synth_label(Rng& rng, const ModelConfig& cfg) {
    ExpertLabel l;
    for (int k = 0; k < cfg.waypoints; ++k)
        l.waypoints.push_back({(k + 1) * rng.uniform(0.5, 2.5), rng.uniform(-2.0, 2.0)});
    l.control.throttle = rng.uniform(0.2, 0.8);
    l.control.steer = rng.uniform(-0.6, 0.6);
    l.control.brake = rng.uniform(0.2, 0.8);
    l.target_speed = rng.uniform(0.0, 8.0);
    for (auto& v : l.latent) v = rng.uniform(-1.0, 1.0);
    return l;
}

// ---------------------------------------------------------------------------
// Whole-model check: every parameter of the total loss against central
// differences on one synthetic sample.
// ---------------------------------------------------------------------------
struct ModelGcEntry {
    std::string param;
    double worst_rel = 0;
};

struct ModelGcReport {
    Index n_scalars = 0;
    double worst_rel = 0;
    std::string worst_param;
    std::vector<ModelGcEntry> per_param;
    bool pass = false;
    double seconds = 0;
};

inline ModelGcReport model_gradcheck(const ModelConfig& mcfg, const TrainConfig& tcfg,
                                     std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    ParamStore<double> store;
    Rng init = Rng::substream(seed, "init");
    DrivingModel<double> model(mcfg, store, init);

    Rng data_rng = Rng::substream(seed, "gradcheck-data");
    const Observation obs = synth_observation(data_rng, mcfg);
    const ExpertLabel label = synth_label(data_rng, mcfg);
    const auto inputs = DrivingModel<double>::make_inputs(obs, mcfg);

    // The estimator terms train against DETACHED actual losses. The
    // differentiable function whose gradient the training step computes is
    // therefore the one with those targets frozen at their current values;
    // finite differences must probe that same function, so the targets are
    // pinned once here.
    double est_target_c = 0, est_target_w = 0;
    {
        Tape<double> tp;
        auto fwd = model.forward(tp, inputs);
        auto leaves = model.label_leaves(tp, label);
        auto bundle = compute_losses(tp, fwd.waypoints, fwd.control, fwd.speed, fwd.feature,
                                     fwd.est, leaves, tcfg);
        est_target_c = static_cast<double>(tp.scalar(bundle.L_c));
        est_target_w = static_cast<double>(tp.scalar(bundle.L_w));
    }

    auto loss_of = [&]() {
        Tape<double> tp;
        auto fwd = model.forward(tp, inputs);
        auto leaves = model.label_leaves(tp, label);
        auto bundle =
            compute_losses(tp, fwd.waypoints, fwd.control, fwd.speed, fwd.feature, fwd.est,
                           leaves, tcfg);
        Val frozen_est = tp.add(tp.sq_distance(fwd.est.lt_c, tp.constant({1}, est_target_c)),
                                tp.sq_distance(fwd.est.lt_w, tp.constant({1}, est_target_w)));
        Val total = tp.constant({1}, 0.0);
        auto acc = [&](Val term, double lambda) {
            if (lambda != 0.0) total = tp.add(total, tp.scale(term, lambda));
        };
        acc(bundle.L_s, tcfg.lambda_s);
        acc(bundle.L_f, tcfg.lambda_f);
        acc(bundle.L_w, tcfg.lambda_w);
        acc(bundle.L_c, tcfg.lambda_c);
        acc(frozen_est, tcfg.lambda_est);
        return std::pair<double, Val>(static_cast<double>(tp.scalar(total)), total);
    };

    // Reverse-mode gradients once. At the unperturbed point the frozen-target
    // total has exactly the training gradient (detach makes the targets
    // constants in backward).
    store.zero_grads();
    {
        Tape<double> tp;
        auto fwd = model.forward(tp, inputs);
        auto leaves = model.label_leaves(tp, label);
        auto bundle = compute_losses(tp, fwd.waypoints, fwd.control, fwd.speed, fwd.feature,
                                     fwd.est, leaves, tcfg);
        tp.backward(bundle.total);
    }

    ModelGcReport rep;
    for (size_t i = 0; i < store.count(); ++i) {
        Tensor<double>& p = store.tensor_of(i);
        ModelGcEntry entry;
        entry.param = store.name_of(i);
        for (size_t j = 0; j < p.data.size(); ++j) {
            const double keep = p.data[j];
            p.data[j] = keep + kGcStep;
            const double lp = loss_of().first;
            p.data[j] = keep - kGcStep;
            const double lm = loss_of().first;
            p.data[j] = keep;
            const double fd = (lp - lm) / (2 * kGcStep);
            const double rel = gc_rel_err(p.grad[j], fd);
            entry.worst_rel = std::max(entry.worst_rel, rel);
            rep.n_scalars += 1;
        }
        if (entry.worst_rel > rep.worst_rel) {
            rep.worst_rel = entry.worst_rel;
            rep.worst_param = entry.param;
        }
        rep.per_param.push_back(std::move(entry));
    }
    rep.pass = rep.worst_rel < kGcTol;
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// Tiny configuration used by the gradcheck and overfit suites.
ModelConfig tiny_model_config();

}  // namespace efd
