#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "g2v/checkpoint.hpp"
#include "g2v/optim.hpp"
#include "g2v/params.hpp"
#include "g2v/rng.hpp"
#include "g2v/tape.hpp"

using namespace g2v;
using namespace g2v::num;

namespace {

// Reference convolution: plain six-deep loop nest over NHWC data, sharing no
// padding tricks with the implementation under test.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w,
                              int stride, Pad pad) {
    int N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    int kh = w.dim(0), kw = w.dim(1), Co = w.dim(3);
    ConvAxis ay = conv_axis(H, kh, stride, pad);
    ConvAxis ax = conv_axis(W, kw, stride, pad);
    Tensor<double> out({N, ay.out, ax.out, Co});
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < ay.out; ++y)
            for (int xo = 0; xo < ax.out; ++xo)
                for (int co = 0; co < Co; ++co) {
                    double acc = 0;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            for (int ci = 0; ci < Ci; ++ci) {
                                int iy = y * stride + ky - ay.pad;
                                int ix = xo * stride + kx - ax.pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.data[((n * H + iy) * W + ix) * Ci + ci] *
                                       w.data[((ky * kw + kx) * Ci + ci) * Co + co];
                            }
                    out.data[((n * ay.out + y) * ax.out + xo) * Co + co] = acc;
                }
    return out;
}

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

TEST_CASE("conv2d scaling by a 1x1 kernel") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>::full({1, 3, 3, 1}, 1.0));
    auto w = tape.input(Tensor<double>({1, 1, 1, 1}, {2.0}));
    auto y = tape.conv2d(x, w, -1, 1, Pad::Valid);
    const auto& out = tape.value(y);
    REQUIRE(out.shape == Shape{1, 3, 3, 1});
    for (double v : out.data) REQUIRE(v == 2.0);
}

TEST_CASE("conv2d trace-like dot product") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({1, 2, 2, 1}, {1, 2, 3, 4}));
    auto w = tape.input(Tensor<double>({2, 2, 1, 1}, {1, 0, 0, 1}));
    auto y = tape.conv2d(x, w, -1, 1, Pad::Valid);
    REQUIRE(tape.value(y).shape == Shape{1, 1, 1, 1});
    REQUIRE(tape.value(y).data[0] == 5.0);
}

TEST_CASE("conv2d matches loop-nest reference on randomized shapes") {
    Rng rng(1234);
    for (int trial = 0; trial < 12; ++trial) {
        int N = rng.uniform_int(1, 2), Ci = rng.uniform_int(1, 4);
        int Co = rng.uniform_int(1, 5), k = rng.uniform_int(1, 4);
        int H = rng.uniform_int(k, 9), W = rng.uniform_int(k, 9);
        int stride = rng.uniform_int(1, 2);
        Pad pad = (trial % 2 == 0) ? Pad::Same : Pad::Valid;
        Tensor<double> x = random_tensor({N, H, W, Ci}, rng);
        Tensor<double> w = random_tensor({k, k, Ci, Co}, rng);
        Tensor<double> ref = conv_reference(x, w, stride, pad);

        Tape<double> tape;
        auto y = tape.conv2d(tape.input(x), tape.input(w), -1, stride, pad);
        const auto& got = tape.value(y);
        REQUIRE(got.shape == ref.shape);
        for (size_t i = 0; i < got.data.size(); ++i)
            REQUIRE(std::abs(got.data[i] - ref.data[i]) < 1e-12);
    }
}

TEST_CASE("conv2d rejects channel mismatch with both shapes in the message") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({1, 4, 4, 3}));
    auto w = tape.input(Tensor<double>({3, 3, 4, 2}));
    try {
        tape.conv2d(x, w, -1, 1, Pad::Same);
        FAIL("expected an error");
    } catch (const Error& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("[1x4x4x3]") != std::string::npos);
        REQUIRE(msg.find("[3x3x4x2]") != std::string::npos);
    }
}

TEST_CASE("conv2d is linear in its input") {
    Rng rng(77);
    Tensor<double> x = random_tensor({1, 6, 6, 2}, rng);
    Tensor<double> w = random_tensor({3, 3, 2, 3}, rng);
    Tensor<double> xs = x;
    const double a = 2.5;
    for (auto& v : xs.data) v *= a;

    Tape<double> tape;
    auto y1 = tape.conv2d(tape.input(x), tape.input(w), -1, 1, Pad::Same);
    auto y2 = tape.conv2d(tape.input(xs), tape.input(w), -1, 1, Pad::Same);
    const auto& v1 = tape.value(y1);
    const auto& v2 = tape.value(y2);
    for (size_t i = 0; i < v1.data.size(); ++i)
        REQUIRE(v2.data[i] == Catch::Approx(a * v1.data[i]).margin(1e-12));
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(99);
    Tensor<double> x = random_tensor({2, 5, 5, 2}, rng);
    Tensor<double> w = random_tensor({3, 3, 2, 3}, rng);
    Tensor<double> b = random_tensor({3}, rng);

    ParamStore<double> store;
    store.create("x", x.shape).value = x;
    store.create("w", w.shape).value = w;
    store.create("b", b.shape).value = b;

    auto loss_fn = [&]() {
        Tape<double> t;
        Binder<double> bind(t);
        auto y = t.conv2d(bind.bind(store.at("x")), bind.bind(store.at("w")),
                          bind.bind(store.at("b")), 2, Pad::Same);
        auto l = t.sum_squares(y);
        return t.value(l).data[0];
    };

    Tape<double> t;
    Binder<double> bind(t);
    auto y = t.conv2d(bind.bind(store.at("x")), bind.bind(store.at("w")),
                      bind.bind(store.at("b")), 2, Pad::Same);
    auto l = t.sum_squares(y);
    t.backward(l);
    store.zero_grad();
    bind.harvest();

    const double h = 1e-6;
    for (auto* name : {"x", "w", "b"}) {
        Param<double>& p = store.at(name);
        for (size_t i = 0; i < p.value.data.size(); i += 7) {
            double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            double fp = loss_fn();
            p.value.data[i] = orig - h;
            double fm = loss_fn();
            p.value.data[i] = orig;
            double fd = (fp - fm) / (2 * h);
            double an = p.grad.data[i];
            REQUIRE(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("relu clamps negatives and keeps positives") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({3}, {-1, 0, 2}));
    auto y = tape.relu(x);
    REQUIRE(tape.value(y).data == std::vector<double>{0, 0, 2});
}

TEST_CASE("relu of an all-negative tensor is zero with zero gradient") {
    Tape<double> tape;
    auto x = tape.leaf(nullptr);  // placeholder replaced below
    Tensor<double> neg({4}, {-3, -1, -0.5, -2});
    Tape<double> t;
    ParamStore<double> store;
    store.create("x", neg.shape).value = neg;
    Binder<double> bind(t);
    auto xin = bind.bind(store.at("x"));
    auto y = t.relu(xin);
    auto l = t.sum_squares(y);
    for (double v : t.value(y).data) REQUIRE(v == 0.0);
    t.backward(l);
    store.zero_grad();
    bind.harvest();
    for (double g : store.at("x").grad.data) REQUIRE(g == 0.0);
    (void)x;
    (void)tape;
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    Rng rng(5);
    ParamStore<double> store;
    auto& p = store.create("x", {64});
    for (auto& v : p.value.data) {
        do {
            v = rng.uniform(-2.0, 2.0);
        } while (std::abs(v) < 1e-4);
    }
    auto loss_fn = [&]() {
        Tape<double> t;
        Binder<double> bind(t);
        auto l = t.sum_squares(t.relu(bind.bind(store.at("x"))));
        return t.value(l).data[0];
    };
    Tape<double> t;
    Binder<double> bind(t);
    auto l = t.sum_squares(t.relu(bind.bind(store.at("x"))));
    t.backward(l);
    store.zero_grad();
    bind.harvest();
    const double h = 1e-6;
    for (size_t i = 0; i < 64; ++i) {
        double orig = p.value.data[i];
        p.value.data[i] = orig + h;
        double fp = loss_fn();
        p.value.data[i] = orig - h;
        double fm = loss_fn();
        p.value.data[i] = orig;
        double fd = (fp - fm) / (2 * h);
        double denom = std::max(std::abs(fd), 1e-8);
        REQUIRE(std::abs(fd - p.grad.data[i]) / denom < 1e-6);
    }
}

TEST_CASE("global_mean_pool averages channels") {
    Tape<double> tape;
    auto x = tape.input(Tensor<double>({1, 2, 2, 1}, {1, 2, 3, 4}));
    auto y = tape.global_mean_pool(x);
    REQUIRE(tape.value(y).shape == Shape{1, 1});
    REQUIRE(tape.value(y).data[0] == 2.5);
}

TEST_CASE("global_mean_pool of a constant map is that constant") {
    for (int h : {1, 3, 7})
        for (int w : {1, 2, 5}) {
            Tape<double> tape;
            auto x = tape.input(Tensor<double>::full({1, h, w, 2}, 0.731));
            auto y = tape.global_mean_pool(x);
            REQUIRE(tape.value(y).data[0] == Catch::Approx(0.731).margin(1e-12));
            REQUIRE(tape.value(y).data[1] == Catch::Approx(0.731).margin(1e-12));
        }
}

TEST_CASE("global_mean_pool equals independent accumulation") {
    Rng rng(31);
    Tensor<double> x = random_tensor({2, 6, 7, 3}, rng);
    Tape<double> tape;
    auto y = tape.global_mean_pool(tape.input(x));
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double acc = 0;
            for (int i = 0; i < 42; ++i) acc += x.data[(n * 42 + i) * 3 + c];
            REQUIRE(std::abs(tape.value(y).data[n * 3 + c] - acc / 42.0) < 1e-12);
        }
}

TEST_CASE("backward of x^2 at x=3 gives 6") {
    ParamStore<double> store;
    store.create("x", {1}).value.data[0] = 3.0;
    Tape<double> t;
    Binder<double> bind(t);
    auto l = t.sum_squares(bind.bind(store.at("x")));
    t.backward(l);
    store.zero_grad();
    bind.harvest();
    REQUIRE(store.at("x").grad.data[0] == 6.0);
}

TEST_CASE("backward of a function constant in its leaf gives zero grad") {
    ParamStore<double> store;
    store.create("x", {3}).value = Tensor<double>({3}, {1, 2, 3});
    Tape<double> t;
    Binder<double> bind(t);
    auto x = bind.bind(store.at("x"));
    auto l = t.sum_squares(t.scale(x, 0.0));
    t.backward(l);
    store.zero_grad();
    bind.harvest();
    for (double g : store.at("x").grad.data) REQUIRE(g == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
    Tape<double> t;
    ParamStore<double> store;
    store.create("x", {4}).value = Tensor<double>({4}, {1, 2, 3, 4});
    Binder<double> bind(t);
    auto y = t.relu(bind.bind(store.at("x")));
    REQUIRE_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("softmax_xent_diag and matmul_nt gradients match finite differences") {
    Rng rng(404);
    ParamStore<double> store;
    auto& a = store.create("a", {4, 6});
    auto& b = store.create("b", {4, 6});
    for (auto& v : a.value.data) v = rng.uniform(-1.5, 1.5);
    for (auto& v : b.value.data) v = rng.uniform(-1.5, 1.5);

    auto loss_fn = [&]() {
        Tape<double> t;
        Binder<double> bind(t);
        auto logits = t.matmul_nt(bind.bind(store.at("a")), bind.bind(store.at("b")));
        auto l = t.softmax_xent_diag(logits);
        return t.value(l).data[0];
    };
    Tape<double> t;
    Binder<double> bind(t);
    auto logits = t.matmul_nt(bind.bind(store.at("a")), bind.bind(store.at("b")));
    auto l = t.softmax_xent_diag(logits);
    t.backward(l);
    store.zero_grad();
    bind.harvest();

    const double h = 1e-6;
    for (auto* name : {"a", "b"}) {
        Param<double>& p = store.at(name);
        for (size_t i = 0; i < p.value.data.size(); i += 3) {
            double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            double fp = loss_fn();
            p.value.data[i] = orig - h;
            double fm = loss_fn();
            p.value.data[i] = orig;
            double fd = (fp - fm) / (2 * h);
            REQUIRE(std::abs(fd - p.grad.data[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("linear, concat, gather, upsample gradients match finite differences") {
    Rng rng(808);
    ParamStore<double> store;
    auto& x = store.create("x", {3, 5});
    auto& w = store.create("w", {5, 4});
    auto& bb = store.create("bias", {4});
    auto& u = store.create("u", {1, 2, 3, 3});
    for (auto* p : {&x, &w, &bb, &u})
        for (auto& v : p->value.data) v = rng.uniform(-1.0, 1.0);
    std::vector<int> idx = {1, 3, 0};

    auto loss_fn = [&]() {
        Tape<double> t;
        Binder<double> bind(t);
        auto lin = t.linear(bind.bind(store.at("x")), bind.bind(store.at("w")),
                            bind.bind(store.at("bias")));
        auto cat = t.concat_cols(lin, bind.bind(store.at("x")));
        auto g = t.gather_cols(cat, idx);
        auto up = t.upsample2x(bind.bind(store.at("u")));
        auto pooled = t.global_mean_pool(up);
        auto flat = t.reshape(pooled, {3});
        auto l = t.add(t.sum_squares(g), t.sum_squares(flat));
        return std::pair<Tape<double>, typename Tape<double>::Id>{};  // unused
    };
    (void)loss_fn;

    auto eval_loss = [&]() {
        Tape<double> t;
        Binder<double> bind(t);
        auto lin = t.linear(bind.bind(store.at("x")), bind.bind(store.at("w")),
                            bind.bind(store.at("bias")));
        auto cat = t.concat_cols(lin, bind.bind(store.at("x")));
        auto g = t.gather_cols(cat, idx);
        auto up = t.upsample2x(bind.bind(store.at("u")));
        auto pooled = t.global_mean_pool(up);
        auto flat = t.reshape(pooled, {3});
        auto l = t.add(t.sum_squares(g), t.sum_squares(flat));
        return t.value(l).data[0];
    };

    Tape<double> t;
    Binder<double> bind(t);
    auto lin = t.linear(bind.bind(store.at("x")), bind.bind(store.at("w")),
                        bind.bind(store.at("bias")));
    auto cat = t.concat_cols(lin, bind.bind(store.at("x")));
    auto g = t.gather_cols(cat, idx);
    auto up = t.upsample2x(bind.bind(store.at("u")));
    auto pooled = t.global_mean_pool(up);
    auto flat = t.reshape(pooled, {3});
    auto l = t.add(t.sum_squares(g), t.sum_squares(flat));
    t.backward(l);
    store.zero_grad();
    bind.harvest();

    const double h = 1e-6;
    for (auto* name : {"x", "w", "bias", "u"}) {
        Param<double>& p = store.at(name);
        for (size_t i = 0; i < p.value.data.size(); i += 2) {
            double orig = p.value.data[i];
            p.value.data[i] = orig + h;
            double fp = eval_loss();
            p.value.data[i] = orig - h;
            double fm = eval_loss();
            p.value.data[i] = orig;
            double fd = (fp - fm) / (2 * h);
            REQUIRE(std::abs(fd - p.grad.data[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("optimizer step with zero learning rate is a no-op on parameters") {
    for (auto kind : {OptKind::Sgd, OptKind::Adam}) {
        ParamStore<float> store;
        Rng rng(11);
        auto& p = store.create("w", {32});
        init_he_uniform(p.value, 32, rng);
        for (auto& g : p.grad.data) g = 0.37f;
        std::vector<float> before = p.value.data;
        Optimizer<float> opt;
        opt.kind = kind;
        opt.learning_rate = 0.0f;
        opt.step(store);
        REQUIRE(p.value.data == before);
    }
}

TEST_CASE("adam step moves parameters against the gradient") {
    ParamStore<float> store;
    auto& p = store.create("w", {2});
    p.value = Tensor<float>({2}, {1.0f, -1.0f});
    p.grad = Tensor<float>({2}, {0.5f, -0.5f});
    auto opt = Optimizer<float>::adam(1e-3f);
    opt.step(store);
    REQUIRE(p.value.data[0] < 1.0f);
    REQUIRE(p.value.data[1] > -1.0f);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "g2v_ckpt_test";
    fs::create_directories(dir);
    std::string path = (dir / "weights.g2vw").string();

    ParamStore<float> store;
    Rng rng(2024);
    init_he_uniform(store.create("enc/conv0/w", {4, 3, 3, 3}).value, 27, rng);
    init_he_uniform(store.create("enc/conv0/b", {4}).value, 4, rng);
    init_he_uniform(store.create("head/w", {12, 5}).value, 12, rng);
    save_checkpoint(store, path);

    ParamStore<float> loaded;
    load_checkpoint(loaded, path);
    REQUIRE(loaded.size() == store.size());
    for (const auto& p : store.all()) {
        const auto& q = loaded.at(p.name);
        REQUIRE(q.value.shape == p.value.shape);
        REQUIRE(q.value.data == p.value.data);
    }

    std::string path2 = (dir / "weights2.g2vw").string();
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
    REQUIRE(b1.substr(0, 4) == "G2VW");
    fs::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects bad magic") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "g2v_ckpt_bad";
    fs::create_directories(dir);
    std::string path = (dir / "junk.bin").string();
    std::ofstream(path) << "NOPE anything";
    ParamStore<float> store;
    REQUIRE_THROWS_AS(load_checkpoint(store, path), Error);
    fs::remove_all(dir);
}

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(42), b(42);
    REQUIRE(a.next_u64() == b.next_u64());
    Rng s1 = a.stream("spawn", 3);
    Rng s2 = Rng(42).stream("spawn", 3);
    REQUIRE(s1.next_u64() == s2.next_u64());
    Rng other = Rng(42).stream("grasp", 3);
    REQUIRE(Rng(42).stream("spawn", 3).next_u64() != other.next_u64());
    for (int i = 0; i < 1000; ++i) {
        int v = b.uniform_int(-3, 5);
        REQUIRE(v >= -3);
        REQUIRE(v <= 5);
    }
}

TEST_CASE("checked mode rejects non-finite op outputs") {
    checked_mode() = true;
    Tape<double> t;
    auto x = t.input(Tensor<double>({2}, {1e308, 1e308}));
    REQUIRE_THROWS_AS(t.sum_squares(x), Error);
    checked_mode() = false;
}
