#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "g2v/rng.hpp"
#include "g2v/tape.hpp"
#include "g2v/tensor.hpp"

namespace g2v::num {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    // Adam moment state, allocated by the optimizer on first use.
    Tensor<T> m, v;
};

// Named parameter set. Creation order is the canonical order for
// serialization and for gradient reductions, so equal construction sequences
// give bit-identical artifacts.
template <typename T>
class ParamStore {
public:
    Param<T>& create(const std::string& name, Shape shape) {
        require(index_.find(name) == index_.end(), "duplicate parameter name: ", name);
        params_.push_back(Param<T>{name, Tensor<T>(std::move(shape)), Tensor<T>{}, {}, {}});
        Param<T>& p = params_.back();
        p.grad = Tensor<T>(p.value.shape);
        index_[name] = params_.size() - 1;
        return p;
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: ", name);
        return params_[it->second];
    }
    const Param<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: ", name);
        return params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }
    size_t size() const { return params_.size(); }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
    }

    int64_t total_values() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

private:
    // deque-like stability is not needed: params are created before any
    // pointer to them is taken by a tape binding, and bindings are per-step.
    std::vector<Param<T>> params_;
    std::unordered_map<std::string, size_t> index_;
};

// He-style fan-in uniform init on [-sqrt(6/fan_in), +sqrt(6/fan_in)].
template <typename T>
void init_he_uniform(Tensor<T>& t, int fan_in, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
}

// Per-step binding of parameters into a tape. After backward(), harvest()
// adds each leaf gradient into its parameter's grad buffer in binding order.
template <typename T>
class Binder {
public:
    explicit Binder(Tape<T>& tape) : tape_(tape) {}

    typename Tape<T>::Id bind(Param<T>& p) {
        auto id = tape_.leaf(&p.value);
        bound_.emplace_back(&p, id);
        return id;
    }

    void harvest() {
        for (auto& [p, id] : bound_) {
            const Tensor<T>& g = tape_.grad(id);
            T* dst = p->grad.ptr();
            const T* src = g.ptr();
            for (int64_t i = 0; i < g.size(); ++i) dst[i] += src[i];
        }
    }

private:
    Tape<T>& tape_;
    std::vector<std::pair<Param<T>*, typename Tape<T>::Id>> bound_;
};

}  // namespace g2v::num
