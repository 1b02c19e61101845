#include <functional>

#include "doctest.h"
#include "movgan/autodiff.hpp"
#include "movgan/rng.hpp"
#include "test_util.hpp"

using namespace movgan;

namespace {

// Generic first-order check: builds the graph twice per probe and compares
// the tape gradient of a random projection against central differences.
void check_gradients(Tensor input, const std::function<Var(Tape&, Var)>& build, Rng& rng,
                     int probes = 12, double tol = 1e-4) {
    Tape tape;
    Var x = tape.leaf(input, true);
    Var y = build(tape, x);
    Tensor proj = rng.normal_tensor(y.value().shape());
    Var s = ad::dot_const(y, proj);
    tape.backward(s);
    Tensor analytic = tape.grad(x);

    auto eval = [&]() {
        Tape t2;
        Var x2 = t2.leaf(input, false);
        Var y2 = build(t2, x2);
        double acc = 0.0;
        const Tensor& v = y2.value();
        for (int64_t i = 0; i < v.size(); ++i) acc += v[i] * proj[i];
        return acc;
    };
    for (int p = 0; p < probes; ++p) {
        int64_t i = static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(input.size()));
        double fd = movgan::test::central_diff(eval, input, i);
        if (std::abs(fd) < 1e-9 && std::abs(analytic[i]) < 1e-9) continue;
        CHECK(movgan::test::rel_err(analytic[i], fd) < tol);
    }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(21);
    Tensor x = rng.normal_tensor({3, 4});
    Tensor other = rng.normal_tensor({3, 4});

    check_gradients(x, [&](Tape& t, Var v) { return ad::add(v, t.constant(other)); }, rng);
    check_gradients(x, [&](Tape& t, Var v) { return ad::sub(t.constant(other), v); }, rng);
    check_gradients(x, [&](Tape& t, Var v) { return ad::mul(v, t.constant(other)); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::scale(v, -1.7); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::sin_act(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::tanh_act(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::leaky_relu(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::softplus(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::square(v); }, rng);
}

TEST_CASE("matmul and broadcast gradients") {
    Rng rng(22);
    Tensor a = rng.normal_tensor({4, 5});
    Tensor b = rng.normal_tensor({5, 3});
    Tensor v = rng.normal_tensor({5});

    check_gradients(a, [&](Tape& t, Var x) { return ad::matmul(x, t.constant(b)); }, rng);
    check_gradients(b, [&](Tape& t, Var x) { return ad::matmul(t.constant(a), x); }, rng);
    check_gradients(a, [&](Tape& t, Var x) { return ad::add_rowvec(x, t.constant(v)); }, rng);
    check_gradients(v, [&](Tape& t, Var x) { return ad::add_rowvec(t.constant(a), x); }, rng);
    check_gradients(a, [&](Tape& t, Var x) { return ad::mul_rowvec(x, t.constant(v)); }, rng);
    check_gradients(v, [&](Tape& t, Var x) { return ad::mul_rowvec(t.constant(a), x); }, rng);
    check_gradients(v, [&](Tape&, Var x) { return ad::broadcast_rows(x, 7); }, rng);
}

TEST_CASE("conv2d gradient w.r.t. input, weight and bias") {
    Rng rng(23);
    Tensor x = rng.normal_tensor({2, 3, 6, 6});
    Tensor w = rng.normal_tensor({4, 3, 3, 3});
    Tensor b = rng.normal_tensor({4});

    check_gradients(
        x, [&](Tape& t, Var v) { return ad::conv2d(v, t.constant(w), t.constant(b), 1, 1); }, rng);
    check_gradients(
        w, [&](Tape& t, Var v) { return ad::conv2d(t.constant(x), v, t.constant(b), 2, 1); }, rng);
    check_gradients(
        b, [&](Tape& t, Var v) { return ad::conv2d(t.constant(x), t.constant(w), v, 1, 0); }, rng);
}

TEST_CASE("pooling, upsampling, reshaping gradients") {
    Rng rng(24);
    Tensor x = rng.normal_tensor({2, 3, 4, 4});
    check_gradients(x, [&](Tape&, Var v) { return ad::upsample2x(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::avg_pool(v, 2); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::global_avg_pool(v); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::reshape(v, {2, 48}); }, rng);
}

TEST_CASE("concat and stack gradients") {
    Rng rng(25);
    Tensor a = rng.normal_tensor({2, 3, 4});
    Tensor b = rng.normal_tensor({2, 5, 4});
    check_gradients(
        a, [&](Tape& t, Var v) { return ad::concat({v, t.constant(b)}, 1); }, rng);
    check_gradients(
        b, [&](Tape& t, Var v) { return ad::concat({t.constant(a), v}, 1); }, rng);
    Tensor c = rng.normal_tensor({3, 4});
    Tensor fixed = rng.normal_tensor({3, 4});
    check_gradients(
        c, [&](Tape& t, Var v) { return ad::stack0({v, t.constant(fixed), v}); }, rng);
    check_gradients(
        c, [&](Tape& t, Var v) { return ad::add_many({v, t.constant(fixed), v}); }, rng);
}

TEST_CASE("embedding and rasterization gradients") {
    Rng rng(26);
    Tensor table = rng.normal_tensor({5, 4});
    FrameLayout layout;
    layout.instances.push_back({1, 0, BoundingBox(0.1, 0.2, 0.6, 0.8)});
    layout.instances.push_back({3, 1, BoundingBox(0.4, 0.1, 0.9, 0.5)});
    layout.instances.push_back({1, 2, BoundingBox(0.3, 0.3, 0.7, 0.7)});

    check_gradients(table, [&](Tape&, Var v) { return ad::select_rows(v, {1, 3, 3, 0}); }, rng);
    check_gradients(table, [&](Tape&, Var v) { return ad::rasterize(v, layout, 8, 8); }, rng);
}

TEST_CASE("sum and mean reduce correctly") {
    Rng rng(27);
    Tensor x = rng.normal_tensor({3, 3});
    Tape tape;
    Var v = tape.leaf(x, true);
    Var s = ad::sum(v);
    double expect = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) expect += x[i];
    CHECK(s.value()[0] == doctest::Approx(expect));
    tape.backward(s);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(tape.grad(v)[i] == doctest::Approx(1.0));

    Tape tape2;
    Var v2 = tape2.leaf(x, true);
    Var m = ad::mean(v2);
    CHECK(m.value()[0] == doctest::Approx(expect / 9.0));
    tape2.backward(m);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(tape2.grad(v2)[i] == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("gradients accumulate across reuse of a node") {
    Rng rng(28);
    Tensor x = rng.normal_tensor({4});
    check_gradients(x, [&](Tape&, Var v) { return ad::add(v, ad::scale(v, 2.0)); }, rng);
    check_gradients(x, [&](Tape&, Var v) { return ad::mul(v, v); }, rng);
}

TEST_CASE("forward evaluation is deterministic") {
    Rng rng(29);
    Tensor x = rng.normal_tensor({2, 3, 8, 8});
    Tensor w = rng.normal_tensor({4, 3, 3, 3});
    Tensor b = rng.normal_tensor({4});
    auto run = [&]() {
        Tape t;
        Var v = ad::conv2d(t.leaf(x, false), t.leaf(w, false), t.leaf(b, false), 2, 1);
        v = ad::leaky_relu(v);
        return ad::mean(v).value()[0];
    };
    CHECK(run() == run());
}
