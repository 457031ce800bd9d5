#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "efd/tensor.hpp"

namespace efd {

// Stepwise-halving two-phase schedule. Base rate for the first phase, then a
// second base for the epochs after it; each base is halved every
// `halve_epochs` epochs within its phase. The second phase extrapolates past
// its nominal end so long runs keep decaying.
struct LrSchedule {
    double phase1_lr = 5e-4;
    double phase2_lr = 1e-4;
    int phase_epochs = 60;
    int halve_epochs = 30;
};

inline double lr_at(int epoch, const LrSchedule& s) {
    if (epoch < 0) throw ShapeError("lr_at: negative epoch");
    if (epoch < s.phase_epochs)
        return s.phase1_lr * std::pow(0.5, epoch / s.halve_epochs);
    const int e2 = epoch - s.phase_epochs;
    return s.phase2_lr * std::pow(0.5, e2 / s.halve_epochs);
}

// Adam with decoupled weight decay. Moment buffers are kept per parameter,
// parallel to the tensor list handed to adam_step.
template <class S>
struct AdamState {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-7;
    std::int64_t step = 0;
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;

    void reset(const std::vector<Tensor<S>*>& params) {
        step = 0;
        m.assign(params.size(), {});
        v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            m[i].assign(params[i]->data.size(), S(0));
            v[i].assign(params[i]->data.size(), S(0));
        }
    }
};

template <class S>
void adam_step(const std::vector<Tensor<S>*>& params, AdamState<S>& st, double lr) {
    if (lr <= 0) throw ShapeError("adam_step: lr must be positive");
    if (st.m.size() != params.size()) st.reset(params);
    st.step += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<S>& p = *params[i];
        if (st.m[i].size() != p.data.size())
            throw ShapeError("adam_step: moment/param shape mismatch on entry " +
                             std::to_string(i));
        p.ensure_grad();
        for (size_t j = 0; j < p.data.size(); ++j) {
            const double g = static_cast<double>(p.grad[j]);
            double mj = st.beta1 * static_cast<double>(st.m[i][j]) + (1.0 - st.beta1) * g;
            double vj = st.beta2 * static_cast<double>(st.v[i][j]) + (1.0 - st.beta2) * g * g;
            st.m[i][j] = static_cast<S>(mj);
            st.v[i][j] = static_cast<S>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            double x = static_cast<double>(p.data[j]);
            x -= lr * (mhat / (std::sqrt(vhat) + st.eps) + st.weight_decay * x);
            p.data[j] = static_cast<S>(x);
        }
    }
}

}  // namespace efd
