#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "g2v/tensor.hpp"

namespace g2v::num {

enum class Pad { Same, Valid };

// Output extent and top/left padding for one spatial axis.
struct ConvAxis {
    int out = 0;
    int pad = 0;
};

inline ConvAxis conv_axis(int in, int k, int stride, Pad pad) {
    ConvAxis a;
    if (pad == Pad::Valid) {
        require(in >= k, "conv2d: input extent ", in, " smaller than kernel ", k);
        a.out = (in - k) / stride + 1;
        a.pad = 0;
    } else {
        a.out = (in + stride - 1) / stride;
        int total = std::max(0, (a.out - 1) * stride + k - in);
        a.pad = total / 2;
    }
    return a;
}

// Reverse-mode tape. Nodes are appended in evaluation order, so walking the
// list backwards is a reverse topological traversal. A tape is confined to
// one execution context; parameters live outside it and are referenced by
// leaf nodes, with gradients harvested after backward().
template <typename T>
class Tape {
public:
    using Id = int;

    struct Node {
        Tensor<T> val;               // owned value (unused for external leaves)
        const Tensor<T>* ext = nullptr;  // external value (parameters)
        Tensor<T> grad;              // allocated iff needs_grad
        bool needs_grad = false;
        std::function<void(Tape&, Node&)> back;  // null for leaves/constants
    };

    // Constant input; never receives a gradient.
    Id input(Tensor<T> v) {
        return push(std::move(v), nullptr, false, nullptr);
    }

    // Differentiable leaf referencing external storage (a parameter).
    Id leaf(const Tensor<T>* v) {
        return push(Tensor<T>{}, v, true, nullptr);
    }

    const Tensor<T>& value(Id id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.ext ? *n.ext : n.val;
    }

    Tensor<T>& grad(Id id) { return nodes_[static_cast<size_t>(id)].grad; }
    bool needs_grad(Id id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t node_count() const { return nodes_.size(); }

    // ---- ops ----

    // x: [N,H,W,Ci], w: [kh,kw,Ci,Co], b: [Co] or -1 for none.
    Id conv2d(Id x, Id w, Id b, int stride, Pad pad) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        require(stride >= 1, "conv2d: stride must be >= 1, got ", stride);
        require(xv.rank() == 4, "conv2d: input must be NHWC, got ", shape_str(xv.shape));
        require(wv.rank() == 4, "conv2d: kernel must be [kh,kw,Ci,Co], got ", shape_str(wv.shape));
        require(xv.dim(3) == wv.dim(2), "conv2d: channel mismatch between input ",
                shape_str(xv.shape), " and kernel ", shape_str(wv.shape));
        const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ci = xv.dim(3);
        const int kh = wv.dim(0), kw = wv.dim(1), Co = wv.dim(3);
        ConvAxis ay = conv_axis(H, kh, stride, pad);
        ConvAxis ax = conv_axis(W, kw, stride, pad);
        const T* bias = nullptr;
        if (b >= 0) {
            const Tensor<T>& bv = value(b);
            require(bv.size() == Co, "conv2d: bias shape ", shape_str(bv.shape),
                    " does not match kernel ", shape_str(wv.shape));
            bias = bv.ptr();
        }
        Tensor<T> out({N, ay.out, ax.out, Co});
        conv2d_forward(xv.ptr(), wv.ptr(), bias, out.ptr(), N, H, W, Ci, kh, kw, Co,
                       stride, ay, ax);
        check_finite(out, "conv2d");
        bool ng = needs_grad(x) || needs_grad(w) || (b >= 0 && needs_grad(b));
        auto back = [x, w, b, stride, ay, ax](Tape& t, Node& self) {
            const Tensor<T>& xv2 = t.value(x);
            const Tensor<T>& wv2 = t.value(w);
            const int N2 = xv2.dim(0), H2 = xv2.dim(1), W2 = xv2.dim(2), Ci2 = xv2.dim(3);
            const int kh2 = wv2.dim(0), kw2 = wv2.dim(1), Co2 = wv2.dim(3);
            if (t.needs_grad(x))
                conv2d_backward_input(t.grad(x).ptr(), wv2.ptr(), self.grad.ptr(), N2, H2,
                                      W2, Ci2, kh2, kw2, Co2, stride, ay, ax);
            if (t.needs_grad(w))
                conv2d_backward_kernel(xv2.ptr(), t.grad(w).ptr(), self.grad.ptr(), N2, H2,
                                       W2, Ci2, kh2, kw2, Co2, stride, ay, ax);
            if (b >= 0 && t.needs_grad(b)) {
                T* __restrict__ db = t.grad(b).ptr();
                const T* __restrict__ g = self.grad.ptr();
                const int64_t points = static_cast<int64_t>(N2) * ay.out * ax.out;
                for (int64_t i = 0; i < points; ++i) {
                    const T* gp = g + i * Co2;
                    for (int co = 0; co < Co2; ++co) db[co] += gp[co];
                }
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    Id relu(Id x) {
        const Tensor<T>& xv = value(x);
        Tensor<T> out(xv.shape);
        const T* in = xv.ptr();
        T* o = out.ptr();
        for (int64_t i = 0; i < xv.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
        check_finite(out, "relu");
        bool ng = needs_grad(x);
        auto back = [x](Tape& t, Node& self) {
            const T* in2 = t.value(x).ptr();
            T* dx = t.grad(x).ptr();
            const T* dy = self.grad.ptr();
            int64_t n = self.grad.size();
            for (int64_t i = 0; i < n; ++i)
                if (in2[i] > T(0)) dx[i] += dy[i];
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // NHWC -> NC, each channel averaged over all spatial positions.
    Id global_mean_pool(Id x) {
        const Tensor<T>& xv = value(x);
        require(xv.rank() == 4, "global_mean_pool: input must be NHWC, got ",
                shape_str(xv.shape));
        const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
        require(H >= 1 && W >= 1, "global_mean_pool: empty spatial map ", shape_str(xv.shape));
        Tensor<T> out({N, C});
        const T inv = T(1) / static_cast<T>(H * W);
        const T* __restrict__ in = xv.ptr();
        for (int n = 0; n < N; ++n) {
            T* __restrict__ op = out.ptr() + static_cast<int64_t>(n) * C;
            const T* base = in + static_cast<int64_t>(n) * H * W * C;
            for (int i = 0; i < H * W; ++i) {
                const T* __restrict__ p = base + static_cast<int64_t>(i) * C;
                for (int c = 0; c < C; ++c) op[c] += p[c];
            }
            for (int c = 0; c < C; ++c) op[c] *= inv;
        }
        check_finite(out, "global_mean_pool");
        bool ng = needs_grad(x);
        auto back = [x, H, W, C](Tape& t, Node& self) {
            T* __restrict__ dx = t.grad(x).ptr();
            const T* __restrict__ dy = self.grad.ptr();
            const T inv2 = T(1) / static_cast<T>(H * W);
            int N2 = self.grad.dim(0);
            for (int n = 0; n < N2; ++n) {
                const T* dyr = dy + static_cast<int64_t>(n) * C;
                T* base = dx + static_cast<int64_t>(n) * H * W * C;
                for (int i = 0; i < H * W; ++i) {
                    T* __restrict__ p = base + static_cast<int64_t>(i) * C;
                    for (int c = 0; c < C; ++c) p[c] += dyr[c] * inv2;
                }
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // x[N,K] * w[K,M] + b[M]
    Id linear(Id x, Id w, Id b) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0),
                "linear: shape mismatch between input ", shape_str(xv.shape),
                " and weight ", shape_str(wv.shape));
        const int N = xv.dim(0), K = xv.dim(1), M = wv.dim(1);
        Tensor<T> out({N, M});
        if (b >= 0) {
            const Tensor<T>& bv = value(b);
            require(bv.size() == M, "linear: bias shape ", shape_str(bv.shape),
                    " does not match weight ", shape_str(wv.shape));
            for (int n = 0; n < N; ++n)
                std::copy(bv.ptr(), bv.ptr() + M, out.ptr() + static_cast<int64_t>(n) * M);
        }
        const T* xp = xv.ptr();
        const T* wp = wv.ptr();
        T* op = out.ptr();
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k) {
                T xv_nk = xp[static_cast<int64_t>(n) * K + k];
                if (xv_nk == T(0)) continue;
                const T* wrow = wp + static_cast<int64_t>(k) * M;
                T* __restrict__ orow = op + static_cast<int64_t>(n) * M;
                for (int m = 0; m < M; ++m) orow[m] += xv_nk * wrow[m];
            }
        check_finite(out, "linear");
        bool ng = needs_grad(x) || needs_grad(w) || (b >= 0 && needs_grad(b));
        auto back = [x, w, b, N, K, M](Tape& t, Node& self) {
            const T* dy = self.grad.ptr();
            const T* xp2 = t.value(x).ptr();
            const T* wp2 = t.value(w).ptr();
            if (t.needs_grad(x)) {
                T* dx = t.grad(x).ptr();
                for (int n = 0; n < N; ++n)
                    for (int k = 0; k < K; ++k) {
                        const T* wrow = wp2 + static_cast<int64_t>(k) * M;
                        const T* dyrow = dy + static_cast<int64_t>(n) * M;
                        T acc = 0;
                        for (int m = 0; m < M; ++m) acc += dyrow[m] * wrow[m];
                        dx[static_cast<int64_t>(n) * K + k] += acc;
                    }
            }
            if (t.needs_grad(w)) {
                T* dw = t.grad(w).ptr();
                for (int n = 0; n < N; ++n)
                    for (int k = 0; k < K; ++k) {
                        T xv_nk = xp2[static_cast<int64_t>(n) * K + k];
                        if (xv_nk == T(0)) continue;
                        const T* dyrow = dy + static_cast<int64_t>(n) * M;
                        T* dwrow = dw + static_cast<int64_t>(k) * M;
                        for (int m = 0; m < M; ++m) dwrow[m] += xv_nk * dyrow[m];
                    }
            }
            if (b >= 0 && t.needs_grad(b)) {
                T* db = t.grad(b).ptr();
                for (int n = 0; n < N; ++n) {
                    const T* dyrow = dy + static_cast<int64_t>(n) * M;
                    for (int m = 0; m < M; ++m) db[m] += dyrow[m];
                }
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // a[N,K] * b[M,K]^T -> [N,M]
    Id matmul_nt(Id a, Id b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
                "matmul_nt: shape mismatch between ", shape_str(av.shape), " and ",
                shape_str(bv.shape));
        const int N = av.dim(0), K = av.dim(1), M = bv.dim(0);
        Tensor<T> out({N, M});
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) {
                const T* ap = av.ptr() + static_cast<int64_t>(n) * K;
                const T* bp = bv.ptr() + static_cast<int64_t>(m) * K;
                T acc = 0;
                for (int k = 0; k < K; ++k) acc += ap[k] * bp[k];
                out.data[static_cast<size_t>(n * M + m)] = acc;
            }
        check_finite(out, "matmul_nt");
        bool ng = needs_grad(a) || needs_grad(b);
        auto back = [a, b, N, K, M](Tape& t, Node& self) {
            const T* dy = self.grad.ptr();
            const T* ap2 = t.value(a).ptr();
            const T* bp2 = t.value(b).ptr();
            if (t.needs_grad(a)) {
                T* da = t.grad(a).ptr();
                for (int n = 0; n < N; ++n)
                    for (int m = 0; m < M; ++m) {
                        T g = dy[n * M + m];
                        if (g == T(0)) continue;
                        const T* bp = bp2 + static_cast<int64_t>(m) * K;
                        T* dap = da + static_cast<int64_t>(n) * K;
                        for (int k = 0; k < K; ++k) dap[k] += g * bp[k];
                    }
            }
            if (t.needs_grad(b)) {
                T* db = t.grad(b).ptr();
                for (int n = 0; n < N; ++n)
                    for (int m = 0; m < M; ++m) {
                        T g = dy[n * M + m];
                        if (g == T(0)) continue;
                        const T* ap = ap2 + static_cast<int64_t>(n) * K;
                        T* dbp = db + static_cast<int64_t>(m) * K;
                        for (int k = 0; k < K; ++k) dbp[k] += g * ap[k];
                    }
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // Row-wise softmax cross-entropy against the diagonal:
    //   sum_i ( logsumexp(row_i) - logits[i][i] ).
    // Logits are shifted by the row max before exponentiation.
    Id softmax_xent_diag(Id logits) {
        const Tensor<T>& lv = value(logits);
        require(lv.rank() == 2 && lv.dim(0) == lv.dim(1),
                "softmax_xent_diag: logits must be square, got ", shape_str(lv.shape));
        const int B = lv.dim(0);
        Tensor<T> probs({B, B});
        T total = 0;
        for (int i = 0; i < B; ++i) {
            const T* row = lv.ptr() + static_cast<int64_t>(i) * B;
            T mx = row[0];
            for (int j = 1; j < B; ++j) mx = std::max(mx, row[j]);
            T sum = 0;
            T* prow = probs.ptr() + static_cast<int64_t>(i) * B;
            for (int j = 0; j < B; ++j) {
                prow[j] = std::exp(row[j] - mx);
                sum += prow[j];
            }
            T inv = T(1) / sum;
            for (int j = 0; j < B; ++j) prow[j] *= inv;
            total += std::log(sum) + mx - row[i];
        }
        Tensor<T> out({1});
        out.data[0] = total;
        check_finite(out, "softmax_xent_diag");
        bool ng = needs_grad(logits);
        auto back = [logits, B, probs = std::move(probs)](Tape& t, Node& self) {
            T g = self.grad.data[0];
            T* dl = t.grad(logits).ptr();
            const T* p = probs.ptr();
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < B; ++j)
                    dl[i * B + j] += g * (p[i * B + j] - (i == j ? T(1) : T(0)));
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    Id sum_squares(Id x) {
        const Tensor<T>& xv = value(x);
        T acc = 0;
        for (int64_t i = 0; i < xv.size(); ++i) acc += xv.data[static_cast<size_t>(i)] * xv.data[static_cast<size_t>(i)];
        Tensor<T> out({1});
        out.data[0] = acc;
        check_finite(out, "sum_squares");
        bool ng = needs_grad(x);
        auto back = [x](Tape& t, Node& self) {
            T g = self.grad.data[0];
            const T* in = t.value(x).ptr();
            T* dx = t.grad(x).ptr();
            int64_t n = t.value(x).size();
            for (int64_t i = 0; i < n; ++i) dx[i] += g * T(2) * in[i];
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // Mean squared error against a constant target.
    Id mse(Id pred, Tensor<T> target) {
        const Tensor<T>& pv = value(pred);
        require(same_shape(pv.shape, target.shape), "mse: prediction shape ",
                shape_str(pv.shape), " does not match target ", shape_str(target.shape));
        const int64_t n = pv.size();
        require(n > 0, "mse: empty prediction");
        T acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            T d = pv.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
            acc += d * d;
        }
        Tensor<T> out({1});
        out.data[0] = acc / static_cast<T>(n);
        check_finite(out, "mse");
        bool ng = needs_grad(pred);
        auto back = [pred, target = std::move(target), n](Tape& t, Node& self) {
            T g = self.grad.data[0] * T(2) / static_cast<T>(n);
            const T* p = t.value(pred).ptr();
            T* dp = t.grad(pred).ptr();
            for (int64_t i = 0; i < n; ++i) dp[i] += g * (p[i] - target.data[static_cast<size_t>(i)]);
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // x[N,M] gathered at one column index per row -> [N]
    Id gather_cols(Id x, std::vector<int> idx) {
        const Tensor<T>& xv = value(x);
        require(xv.rank() == 2, "gather_cols: input must be 2-D, got ", shape_str(xv.shape));
        const int N = xv.dim(0), M = xv.dim(1);
        require(static_cast<int>(idx.size()) == N, "gather_cols: ", idx.size(),
                " indices for ", N, " rows");
        Tensor<T> out({N});
        for (int n = 0; n < N; ++n) {
            require(idx[static_cast<size_t>(n)] >= 0 && idx[static_cast<size_t>(n)] < M,
                    "gather_cols: index ", idx[static_cast<size_t>(n)], " out of range [0,", M, ")");
            out.data[static_cast<size_t>(n)] = xv.data[static_cast<size_t>(n * M + idx[static_cast<size_t>(n)])];
        }
        bool ng = needs_grad(x);
        auto back = [x, idx = std::move(idx), M](Tape& t, Node& self) {
            T* dx = t.grad(x).ptr();
            const T* dy = self.grad.ptr();
            for (size_t n = 0; n < idx.size(); ++n)
                dx[n * static_cast<size_t>(M) + static_cast<size_t>(idx[n])] += dy[n];
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    Id add(Id a, Id b) { return binary(a, b, T(1)); }
    Id sub(Id a, Id b) { return binary(a, b, T(-1)); }

    Id scale(Id x, T c) {
        const Tensor<T>& xv = value(x);
        Tensor<T> out(xv.shape);
        for (int64_t i = 0; i < xv.size(); ++i) out.data[static_cast<size_t>(i)] = xv.data[static_cast<size_t>(i)] * c;
        check_finite(out, "scale");
        bool ng = needs_grad(x);
        auto back = [x, c](Tape& t, Node& self) {
            T* dx = t.grad(x).ptr();
            const T* dy = self.grad.ptr();
            int64_t n = self.grad.size();
            for (int64_t i = 0; i < n; ++i) dx[i] += c * dy[i];
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    Id concat_cols(Id a, Id b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0),
                "concat_cols: row mismatch between ", shape_str(av.shape), " and ",
                shape_str(bv.shape));
        const int N = av.dim(0), Ka = av.dim(1), Kb = bv.dim(1);
        Tensor<T> out({N, Ka + Kb});
        for (int n = 0; n < N; ++n) {
            std::copy(av.ptr() + static_cast<int64_t>(n) * Ka, av.ptr() + static_cast<int64_t>(n + 1) * Ka,
                      out.ptr() + static_cast<int64_t>(n) * (Ka + Kb));
            std::copy(bv.ptr() + static_cast<int64_t>(n) * Kb, bv.ptr() + static_cast<int64_t>(n + 1) * Kb,
                      out.ptr() + static_cast<int64_t>(n) * (Ka + Kb) + Ka);
        }
        bool ng = needs_grad(a) || needs_grad(b);
        auto back = [a, b, N, Ka, Kb](Tape& t, Node& self) {
            const T* dy = self.grad.ptr();
            if (t.needs_grad(a)) {
                T* da = t.grad(a).ptr();
                for (int n = 0; n < N; ++n)
                    for (int k = 0; k < Ka; ++k)
                        da[static_cast<int64_t>(n) * Ka + k] += dy[static_cast<int64_t>(n) * (Ka + Kb) + k];
            }
            if (t.needs_grad(b)) {
                T* db = t.grad(b).ptr();
                for (int n = 0; n < N; ++n)
                    for (int k = 0; k < Kb; ++k)
                        db[static_cast<int64_t>(n) * Kb + k] += dy[static_cast<int64_t>(n) * (Ka + Kb) + Ka + k];
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // Explicit reshape; element count must match (no broadcasting).
    Id reshape(Id x, Shape s) {
        const Tensor<T>& xv = value(x);
        require(numel(s) == xv.size(), "reshape: cannot view ", shape_str(xv.shape),
                " as ", shape_str(s));
        Tensor<T> out(std::move(s), xv.data);
        bool ng = needs_grad(x);
        auto back = [x](Tape& t, Node& self) {
            T* dx = t.grad(x).ptr();
            const T* dy = self.grad.ptr();
            int64_t n = self.grad.size();
            for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    Id upsample2x(Id x) {
        const Tensor<T>& xv = value(x);
        require(xv.rank() == 4, "upsample2x: input must be NHWC, got ", shape_str(xv.shape));
        const int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
        Tensor<T> out({N, 2 * H, 2 * W, C});
        const T* in = xv.ptr();
        T* o = out.ptr();
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x2 = 0; x2 < W; ++x2) {
                    const T* p = in + ((static_cast<int64_t>(n) * H + y) * W + x2) * C;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            T* q = o + ((static_cast<int64_t>(n) * 2 * H + 2 * y + dy) * 2 * W + 2 * x2 + dx) * C;
                            std::copy(p, p + C, q);
                        }
                }
        bool ng = needs_grad(x);
        auto back = [x, N, H, W, C](Tape& t, Node& self) {
            T* dx = t.grad(x).ptr();
            const T* dy = self.grad.ptr();
            for (int n = 0; n < N; ++n)
                for (int y = 0; y < H; ++y)
                    for (int x2 = 0; x2 < W; ++x2) {
                        T* __restrict__ p = dx + ((static_cast<int64_t>(n) * H + y) * W + x2) * C;
                        for (int ddy = 0; ddy < 2; ++ddy)
                            for (int ddx = 0; ddx < 2; ++ddx) {
                                const T* __restrict__ q = dy + ((static_cast<int64_t>(n) * 2 * H + 2 * y + ddy) * 2 * W + 2 * x2 + ddx) * C;
                                for (int c = 0; c < C; ++c) p[c] += q[c];
                            }
                    }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // Seeds d(out)/d(out) = 1 and accumulates gradients into every node that
    // requires them, visiting nodes exactly once in reverse creation order.
    void backward(Id out) {
        Node& on = nodes_[static_cast<size_t>(out)];
        const Tensor<T>& ov = value(out);
        require(ov.size() == 1, "backward: output must be scalar, got shape ",
                shape_str(ov.shape));
        if (!on.needs_grad) return;  // constant graph, nothing to do
        on.grad.data[0] = T(1);
        for (int i = out; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.back) n.back(*this, n);
        }
    }

private:
    using Back = std::function<void(Tape&, Node&)>;

    Id push(Tensor<T> v, const Tensor<T>* ext, bool ng, Back back) {
        Node n;
        n.val = std::move(v);
        n.ext = ext;
        n.needs_grad = ng;
        n.back = std::move(back);
        if (ng) n.grad = Tensor<T>(ext ? ext->shape : n.val.shape);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id binary(Id a, Id b, T sign_b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        require(same_shape(av.shape, bv.shape), "elementwise op: shape mismatch between ",
                shape_str(av.shape), " and ", shape_str(bv.shape));
        Tensor<T> out(av.shape);
        for (int64_t i = 0; i < av.size(); ++i)
            out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] + sign_b * bv.data[static_cast<size_t>(i)];
        check_finite(out, "add/sub");
        bool ng = needs_grad(a) || needs_grad(b);
        auto back = [a, b, sign_b](Tape& t, Node& self) {
            const T* dy = self.grad.ptr();
            int64_t n = self.grad.size();
            if (t.needs_grad(a)) {
                T* da = t.grad(a).ptr();
                for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
            }
            if (t.needs_grad(b)) {
                T* db = t.grad(b).ptr();
                for (int64_t i = 0; i < n; ++i) db[i] += sign_b * dy[i];
            }
        };
        return push(std::move(out), nullptr, ng, ng ? Back(back) : nullptr);
    }

    // Direct NHWC convolution. Each output point accumulates over kernel
    // positions and input channels with the channel axis innermost, so every
    // hot loop is a contiguous multiply-accumulate along Co or Ci.
    static void conv2d_forward(const T* __restrict__ in, const T* __restrict__ w,
                               const T* __restrict__ bias, T* __restrict__ out, int N,
                               int H, int W, int Ci, int kh, int kw, int Co, int s,
                               ConvAxis ay, ConvAxis ax) {
        const int Ho = ay.out, Wo = ax.out, pt = ay.pad, pl = ax.pad;
        std::vector<T> acc(static_cast<size_t>(Co));
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    T* __restrict__ a = acc.data();
                    if (bias) {
                        for (int co = 0; co < Co; ++co) a[co] = bias[co];
                    } else {
                        std::fill(acc.begin(), acc.end(), T(0));
                    }
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = y * s + ky - pt;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = x * s + kx - pl;
                            if (ix < 0 || ix >= W) continue;
                            const T* __restrict__ ipt =
                                in + ((static_cast<int64_t>(n) * H + iy) * W + ix) * Ci;
                            const T* wbase = w + (static_cast<int64_t>(ky) * kw + kx) * Ci * Co;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const T v = ipt[ci];
                                const T* __restrict__ wrow = wbase + static_cast<int64_t>(ci) * Co;
                                for (int co = 0; co < Co; ++co) a[co] += v * wrow[co];
                            }
                        }
                    }
                    T* opt = out + ((static_cast<int64_t>(n) * Ho + y) * Wo + x) * Co;
                    std::copy(acc.begin(), acc.end(), opt);
                }
    }

    static void conv2d_backward_input(T* __restrict__ din, const T* __restrict__ w,
                                      const T* __restrict__ dout, int N, int H, int W,
                                      int Ci, int kh, int kw, int Co, int s, ConvAxis ay,
                                      ConvAxis ax) {
        const int Ho = ay.out, Wo = ax.out, pt = ay.pad, pl = ax.pad;
        // kernel transposed to [kh,kw,Co,Ci] so the inner axis is Ci
        std::vector<T> wt(static_cast<size_t>(kh) * kw * Ci * Co);
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int co = 0; co < Co; ++co)
                        wt[(((static_cast<size_t>(ky) * kw + kx) * Co + co) * Ci) + ci] =
                            w[(((static_cast<size_t>(ky) * kw + kx) * Ci + ci) * Co) + co];
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const T* __restrict__ gpt =
                        dout + ((static_cast<int64_t>(n) * Ho + y) * Wo + x) * Co;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = y * s + ky - pt;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = x * s + kx - pl;
                            if (ix < 0 || ix >= W) continue;
                            T* __restrict__ dpt =
                                din + ((static_cast<int64_t>(n) * H + iy) * W + ix) * Ci;
                            const T* wtbase = wt.data() + (static_cast<int64_t>(ky) * kw + kx) * Co * Ci;
                            for (int co = 0; co < Co; ++co) {
                                const T g = gpt[co];
                                if (g == T(0)) continue;
                                const T* __restrict__ wtrow = wtbase + static_cast<int64_t>(co) * Ci;
                                for (int ci = 0; ci < Ci; ++ci) dpt[ci] += g * wtrow[ci];
                            }
                        }
                    }
                }
    }

    static void conv2d_backward_kernel(const T* __restrict__ in, T* __restrict__ dw,
                                       const T* __restrict__ dout, int N, int H, int W,
                                       int Ci, int kh, int kw, int Co, int s, ConvAxis ay,
                                       ConvAxis ax) {
        const int Ho = ay.out, Wo = ax.out, pt = ay.pad, pl = ax.pad;
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const T* __restrict__ gpt =
                        dout + ((static_cast<int64_t>(n) * Ho + y) * Wo + x) * Co;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = y * s + ky - pt;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = x * s + kx - pl;
                            if (ix < 0 || ix >= W) continue;
                            const T* __restrict__ ipt =
                                in + ((static_cast<int64_t>(n) * H + iy) * W + ix) * Ci;
                            T* dwbase = dw + (static_cast<int64_t>(ky) * kw + kx) * Ci * Co;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const T v = ipt[ci];
                                if (v == T(0)) continue;
                                T* __restrict__ dwrow = dwbase + static_cast<int64_t>(ci) * Co;
                                for (int co = 0; co < Co; ++co) dwrow[co] += v * gpt[co];
                            }
                        }
                    }
                }
    }

    // Output index range [o0, o1) for which o*s + k - pad lands inside [0, limit).
    static void valid_range(int out_extent, int in_extent, int s, int k, int pad, int& o0,
                            int& o1) {
        int lo = pad - k;  // need o*s >= lo
        o0 = lo <= 0 ? 0 : (lo + s - 1) / s;
        int hi = in_extent - 1 + pad - k;  // need o*s <= hi
        o1 = hi < 0 ? 0 : std::min(out_extent, hi / s + 1);
        if (o1 < o0) o1 = o0;
    }

    std::vector<Node> nodes_;
};

}  // namespace g2v::num
