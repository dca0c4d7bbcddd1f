#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "g2v/common.hpp"

namespace g2v::num {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// When enabled, every op output is scanned for NaN/Inf and rejected.
// Off by default: training loops run unchecked, tests and the selftest
// battery turn it on.
inline bool& checked_mode() {
    static bool enabled = false;
    return enabled;
}

// Dense row-major tensor. Values are immutable by convention once an op has
// produced them; gradient buffers are the only mutated storage.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        require(static_cast<int64_t>(data.size()) == numel(shape),
                "tensor data size ", data.size(), " does not match shape ", shape_str(shape));
    }

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
void check_finite(const Tensor<T>& t, const char* op_name) {
    if (checked_mode() && !t.all_finite())
        fail("non-finite value produced by ", op_name, " with shape ", shape_str(t.shape));
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace g2v::num
