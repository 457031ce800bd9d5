#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "efd/rng.hpp"
#include "efd/tensor.hpp"

namespace efd {

// Ordered, named parameter set. Creation order is the serialization order and
// the RNG consumption order, so a fixed seed yields the same initial weights
// in both precision modes.
template <class S>
class ParamStore {
public:
    enum class Init { Zeros, Ones, Gaussian, FanIn };

    Tensor<S>& create(const std::string& name, Shape shape, Init init, Rng& rng,
                      double stddev = 0.02) {
        if (index_.count(name)) throw ConfigError("param store: duplicate name " + name);
        auto t = std::make_unique<Tensor<S>>(std::move(shape));
        t->requires_grad = true;
        switch (init) {
            case Init::Zeros:
                break;
            case Init::Ones:
                for (S& v : t->data) v = S(1);
                break;
            case Init::Gaussian:
                for (S& v : t->data) v = static_cast<S>(rng.gaussian() * stddev);
                break;
            case Init::FanIn: {
                // Gaussian scaled by 1/sqrt(fan_in); fan_in = first extent of
                // a matrix, full size of a vector.
                const double fan =
                    t->shape.rank() >= 2 ? static_cast<double>(t->shape[0])
                                         : static_cast<double>(t->shape.numel());
                const double sd = 1.0 / std::sqrt(fan > 0 ? fan : 1.0);
                for (S& v : t->data) v = static_cast<S>(rng.gaussian() * sd);
                break;
            }
        }
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(t)});
        return *entries_.back().tensor;
    }

    Tensor<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : entries_[it->second].tensor.get();
    }
    const Tensor<S>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : entries_[it->second].tensor.get();
    }
    Tensor<S>& at(const std::string& name) {
        Tensor<S>* t = find(name);
        if (!t) throw ConfigError("param store: unknown name " + name);
        return *t;
    }

    size_t count() const { return entries_.size(); }
    Index scalar_count() const {
        Index n = 0;
        for (const auto& e : entries_) n += e.tensor->numel();
        return n;
    }

    std::vector<Tensor<S>*> tensors() {
        std::vector<Tensor<S>*> out;
        out.reserve(entries_.size());
        for (auto& e : entries_) out.push_back(e.tensor.get());
        return out;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }
    const std::string& name_of(size_t i) const { return entries_[i].name; }
    Tensor<S>& tensor_of(size_t i) { return *entries_[i].tensor; }
    const Tensor<S>& tensor_of(size_t i) const { return *entries_[i].tensor; }

    void zero_grads() {
        for (auto& e : entries_) {
            e.tensor->ensure_grad();
            e.tensor->zero_grad();
        }
    }

private:
    struct Entry {
        std::string name;
        std::unique_ptr<Tensor<S>> tensor;  // stable address for Tape::param
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace efd
