#pragma once

#include <cmath>

#include "g2v/params.hpp"

namespace g2v::num {

enum class OptKind { Sgd, Adam };

// Gradient-descent step over a ParamStore. A step with learning_rate == 0
// leaves every parameter bit-identical (moment state may still advance).
template <typename T>
class Optimizer {
public:
    OptKind kind = OptKind::Adam;
    T learning_rate = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    static Optimizer sgd(T lr) {
        Optimizer o;
        o.kind = OptKind::Sgd;
        o.learning_rate = lr;
        return o;
    }
    static Optimizer adam(T lr = T(1e-3)) {
        Optimizer o;
        o.kind = OptKind::Adam;
        o.learning_rate = lr;
        return o;
    }

    void step(ParamStore<T>& store) {
        ++t_;
        for (auto& p : store.all()) {
            if (kind == OptKind::Sgd) {
                T* w = p.value.ptr();
                const T* g = p.grad.ptr();
                for (int64_t i = 0; i < p.value.size(); ++i) w[i] -= learning_rate * g[i];
                continue;
            }
            if (p.m.size() != p.value.size()) {
                p.m = Tensor<T>(p.value.shape);
                p.v = Tensor<T>(p.value.shape);
            }
            T* w = p.value.ptr();
            const T* g = p.grad.ptr();
            T* m = p.m.ptr();
            T* v = p.v.ptr();
            const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), t_));
            const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), t_));
            for (int64_t i = 0; i < p.value.size(); ++i) {
                m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
                v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                w[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
    }

    long step_count() const { return t_; }

private:
    long t_ = 0;
};

}  // namespace g2v::num
