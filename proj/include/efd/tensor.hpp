#pragma once

#include <cmath>
#include <vector>

#include "efd/common.hpp"

namespace efd {

// Plain n-d array, row-major. The sole numeric currency between modules.
// Gradients live in `grad` (same extent as `data`) when the tensor is a
// trainable parameter; `Tape::backward` accumulates into it.
template <class S>
struct Tensor {
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;  // empty, or data.size()

    Tensor() = default;
    explicit Tensor(Shape sh, S fill = S(0))
        : shape(std::move(sh)), data(static_cast<size_t>(shape.numel()), fill) {}
    Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
        if (static_cast<Index>(data.size()) != shape.numel())
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape.str());
    }

    Index numel() const { return shape.numel(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), S(0));
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

}  // namespace efd
