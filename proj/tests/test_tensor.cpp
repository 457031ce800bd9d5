#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>

#include "doctest.h"
#include "efd/gradcheck.hpp"
#include "efd/optim.hpp"
#include "efd/tape.hpp"

using namespace efd;

TEST_CASE("softmax of uniform logits is uniform") {
    Tape<double> tp;
    auto v = tp.value(tp.softmax(tp.constant({3}, std::vector<double>{0, 0, 0})));
    for (double x : v) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("matmul with identity returns the operand") {
    Tape<float> tp;
    Val I = tp.constant({3, 3}, std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    std::vector<float> a = {2, -1, 0.5f, 3, 7, -2, 0.25f, 9, -4};
    Val A = tp.constant({3, 3}, a);
    auto out = tp.value(tp.matmul(I, A));
    for (size_t i = 0; i < a.size(); ++i) CHECK(out[i] == a[i]);
}

TEST_CASE("layer_norm normalizes to zero mean and unit variance") {
    Tape<double> tp;
    auto y = tp.value(tp.layer_norm(tp.constant({3}, std::vector<double>{1, 2, 3})));
    double mean = (y[0] + y[1] + y[2]) / 3;
    double var = 0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= 3;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("backward of sum(w*w) and repeat-accumulation") {
    Tensor<double> w({2}, {1.0, 2.0});
    w.requires_grad = true;
    Tape<double> tp;
    Val wv = tp.param(&w);
    Val loss = tp.scale(tp.mean_all(tp.mul(wv, wv)), 2.0);  // == sum
    tp.backward(loss);
    CHECK(w.grad[0] == doctest::Approx(2.0));
    CHECK(w.grad[1] == doctest::Approx(4.0));
    tp.backward(loss);  // accumulates without reset
    CHECK(w.grad[0] == doctest::Approx(4.0));
    CHECK(w.grad[1] == doctest::Approx(8.0));
}

TEST_CASE("loss independent of a leaf leaves its gradient zero") {
    Tensor<double> used({2}, {1.0, 2.0});
    Tensor<double> unused({2}, {5.0, 5.0});
    used.requires_grad = unused.requires_grad = true;
    Tape<double> tp;
    Val uv = tp.param(&used);
    tp.param(&unused);
    tp.backward(tp.mean_all(uv));
    CHECK(unused.grad.size() == 2);
    CHECK(unused.grad[0] == 0.0);
    CHECK(unused.grad[1] == 0.0);
}

TEST_CASE("every registered primitive matches central finite differences") {
    for (const auto& r : gradcheck_primitives(42)) {
        INFO(r.name << " worst rel err " << r.worst_rel);
        CHECK(r.pass);
        CHECK(r.checked >= 20);
    }
}

TEST_CASE("composite blocks match central finite differences") {
    for (const auto& r : gradcheck_blocks(42)) {
        INFO(r.name << " worst rel err " << r.worst_rel);
        CHECK(r.pass);
    }
}

TEST_CASE("softmax rows are stochastic with outputs in (0,1)") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        Tape<float> tp;
        Tensor<float> x({4, 7});
        for (auto& v : x.data) v = static_cast<float>(rng.uniform(-8.0, 8.0));
        auto y = tp.value(tp.softmax(tp.leaf(x)));
        for (int r = 0; r < 4; ++r) {
            double sum = 0;
            for (int c = 0; c < 7; ++c) {
                const float v = y[static_cast<size_t>(r * 7 + c)];
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("identical seed and inputs give bit-identical outputs") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor<float> x({5, 6});
        for (auto& v : x.data) v = static_cast<float>(rng.gaussian());
        Tape<float> tp;
        Val a = tp.leaf(x);
        Val y = tp.softmax(tp.layer_norm(tp.gelu(a)));
        auto s = tp.value(y);
        return std::vector<float>(s.begin(), s.end());
    };
    auto a = run(123), b = run(123);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("shape errors name the op and both shapes") {
    Tape<double> tp;
    Val a = tp.constant({2, 3}, 1.0);
    Val b = tp.constant({4, 5}, 1.0);
    try {
        tp.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("non-finite results are detected at the producing op") {
    Tape<double> tp;
    Val big = tp.constant({1}, 1e308);
    CHECK_THROWS_AS(tp.mul(big, big), NumericError);
}

TEST_CASE("backward rejects non-scalar loss and foreign handles") {
    Tape<double> tp;
    Val v = tp.constant({2}, 1.0);
    CHECK_THROWS_AS(tp.backward(v), ShapeError);
    Tape<double> other;
    Val o = other.constant({1}, 1.0);
    CHECK_THROWS_AS(tp.value(o), ShapeError);
}

TEST_CASE("adam: zero grad and zero weight decay leave params unchanged") {
    Tensor<float> p({3}, {1.0f, -2.0f, 0.5f});
    p.requires_grad = true;
    p.ensure_grad();
    AdamState<float> st;
    st.weight_decay = 0;
    std::vector<Tensor<float>*> ps{&p};
    st.reset(ps);
    adam_step(ps, st, 1e-3);
    CHECK(p.data[0] == 1.0f);
    CHECK(p.data[1] == -2.0f);
    CHECK(p.data[2] == 0.5f);
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step with unit gradient moves by about -lr") {
    Tensor<double> p({1}, {0.0});
    p.requires_grad = true;
    p.ensure_grad();
    p.grad[0] = 1.0;
    AdamState<double> st;
    st.weight_decay = 0;
    std::vector<Tensor<double>*> ps{&p};
    st.reset(ps);
    const double lr = 5e-4;
    adam_step(ps, st, lr);
    // bias-corrected m_hat = v_hat = 1 -> update = -lr / (1 + eps)
    CHECK(std::abs(p.data[0] - (-lr / (1.0 + st.eps))) < 1e-9);
}

TEST_CASE("adam: decoupled weight decay shrinks an idle weight monotonically") {
    Tensor<double> p({1}, {0.7});
    p.requires_grad = true;
    p.ensure_grad();
    AdamState<double> st;
    st.weight_decay = 1e-7;
    std::vector<Tensor<double>*> ps{&p};
    st.reset(ps);
    double prev = p.data[0];
    for (int i = 0; i < 50; ++i) {
        adam_step(ps, st, 1e-3);
        CHECK(p.data[0] < prev);
        CHECK(p.data[0] > 0);
        prev = p.data[0];
    }
}

TEST_CASE("adam rejects mismatched moment buffers") {
    Tensor<float> p({2}, {1.0f, 1.0f});
    p.ensure_grad();
    AdamState<float> st;
    std::vector<Tensor<float>*> ps{&p};
    st.reset(ps);
    st.m[0].resize(1);
    CHECK_THROWS_AS(adam_step(ps, st, 1e-3), ShapeError);
}

TEST_CASE("learning-rate schedule hits the published anchors") {
    LrSchedule s;  // 5e-4 / 1e-4, 60-epoch phases, halved every 30
    CHECK(lr_at(0, s) == doctest::Approx(5e-4));
    CHECK(lr_at(29, s) == doctest::Approx(5e-4));
    CHECK(lr_at(30, s) == doctest::Approx(2.5e-4));
    CHECK(lr_at(59, s) == doctest::Approx(2.5e-4));
    CHECK(lr_at(60, s) == doctest::Approx(1e-4));
    CHECK(lr_at(90, s) == doctest::Approx(5e-5));
    CHECK_THROWS_AS(lr_at(-1, s), ShapeError);
}

TEST_CASE("rescaled schedule keeps the phase proportions") {
    LrSchedule s;
    s.phase_epochs = 6;
    s.halve_epochs = 3;
    CHECK(lr_at(0, s) == doctest::Approx(5e-4));
    CHECK(lr_at(3, s) == doctest::Approx(2.5e-4));
    CHECK(lr_at(6, s) == doctest::Approx(1e-4));
}

TEST_CASE("broadcast is restricted to the leading dimension") {
    Tape<double> tp;
    Val a = tp.constant({3, 4}, 1.0);
    Val col = tp.constant({3}, 1.0);
    CHECK_THROWS_AS(tp.add(a, col), ShapeError);  // only [rows x cols] + [cols]
    Val row = tp.constant({4}, 1.0);
    CHECK(tp.shape(tp.add(a, row)) == Shape{3, 4});
}

TEST_CASE("detach blocks the gradient path") {
    Tensor<double> w({2}, {1.0, 2.0});
    w.requires_grad = true;
    Tape<double> tp;
    Val wv = tp.param(&w);
    Val loss = tp.mean_all(tp.detach(tp.mul(wv, wv)));
    tp.backward(loss);
    CHECK(w.grad[0] == 0.0);
    CHECK(w.grad[1] == 0.0);
}
