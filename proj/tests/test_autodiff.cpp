// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "yoloe/autodiff.hpp"

using yoloe::ParamStore;
using yoloe::Rng;
using yoloe::Tape;
using yoloe::Tensor;

namespace {

// sum(x) as a tape scalar via an all-ones contraction
template <typename T>
typename Tape<T>::Id tape_sum(Tape<T>& tape, typename Tape<T>::Id x) {
    const auto& v = tape.value(x);
    Tensor<T> flat_shape_ones({1, v.numel()});
    for (std::size_t i = 0; i < v.numel(); ++i) flat_shape_ones.at(std::size_t(0), i) = T(1);
    auto flat = tape.reshape(x, {v.numel(), 1});
    return tape.matmul(tape.constant(flat_shape_ones), flat);
}

} // namespace

TEST_CASE("backward of a linear map gives all-ones gradients") {
    ParamStore<double> ps;
    ps.add("x", Tensor<double>({3, 2}, {1, -2, 3, 0.5, -1, 2}));
    Tape<double> tape;
    auto x = tape.param(ps, "x");
    auto loss = tape_sum(tape, x);
    ps.zero_grads();
    tape.backward(loss);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(ps.grad("x")(i) == 1.0);
}

TEST_CASE("backward of sum(x*x)/2 gives x") {
    ParamStore<double> ps;
    ps.add("x", Tensor<double>({4}, {1, -2, 3, 0.25}));
    Tape<double> tape;
    auto x = tape.param(ps, "x");
    auto loss = tape.scale(tape_sum(tape, tape.mul(x, x)), 0.5);
    ps.zero_grads();
    tape.backward(loss);
    for (std::size_t i = 0; i < 4; ++i)
        REQUIRE(ps.grad("x")(i) == Catch::Approx(ps.value("x")(i)).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar loss and ignores disconnected params") {
    ParamStore<double> ps;
    ps.add("x", Tensor<double>({2}, {1, 2}));
    ps.add("unused", Tensor<double>({2}, {5, 5}));
    Tape<double> tape;
    auto x = tape.param(ps, "x");
    REQUIRE_THROWS_AS(tape.backward(tape.mul(x, x)), yoloe::ValueError);
    auto loss = tape_sum(tape, tape.mul(x, x));
    ps.zero_grads();
    tape.backward(loss);
    REQUIRE(ps.grad("unused")(0) == 0.0);
    REQUIRE(ps.grad("unused")(1) == 0.0);
}

TEST_CASE("two backward passes produce identical gradients") {
    Rng rng(7);
    ParamStore<double> ps;
    ps.add("w", oracle::random_tensor<double>({4, 4}, rng));
    Tape<double> tape;
    auto w = tape.param(ps, "w");
    auto x = tape.constant(oracle::random_tensor<double>({2, 4}, rng));
    auto loss = tape_sum(tape, tape.silu(tape.matmul(x, w)));
    ps.zero_grads();
    tape.backward(loss);
    const Tensor<double> g1 = ps.grad("w").clone();
    ps.zero_grads();
    tape.backward(loss);
    REQUIRE(oracle::max_abs_diff(g1, ps.grad("w")) == 0.0);
}

TEST_CASE("grad accumulates across fan-out") {
    ParamStore<double> ps;
    ps.add("x", Tensor<double>({2}, {3, -1}));
    Tape<double> tape;
    auto x = tape.param(ps, "x");
    auto y = tape.add(x, x); // dL/dx = 2 for a sum loss
    auto loss = tape_sum(tape, y);
    ps.zero_grads();
    tape.backward(loss);
    REQUIRE(ps.grad("x")(0) == 2.0);
    REQUIRE(ps.grad("x")(1) == 2.0);
}

namespace {

// builds a per-op scalar loss for finite-difference checking
using LossBuilder = std::function<Tape<double>::Id(Tape<double>&, ParamStore<double>&)>;

double run_check(const LossBuilder& build, ParamStore<double>& ps, double tol,
                 long max_elems = -1) {
    auto fn = [&](ParamStore<double>& p, bool with_grad) {
        Tape<double> tape;
        auto loss = build(tape, p);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)(std::size_t(0));
    };
    const auto res = yoloe::grad_check<double>(fn, ps, 1e-5, max_elems, 99);
    REQUIRE(res.max_error <= tol);
    return res.max_error;
}

Tensor<double> random_away_from_kinks(typename Tensor<double>::Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        double v = rng.uniform(-2, 2);
        while (std::abs(v) < 1e-3) v = rng.uniform(-2, 2); // keep away from tiny inputs
        t.raw()[i] = v;
    }
    return t;
}

} // namespace

TEST_CASE("finite differences validate every tape op") {
    Rng rng(101);

    SECTION("conv2d, both strides, with bias") {
        for (int stride : {1, 2}) {
            ParamStore<double> ps;
            ps.add("k", oracle::random_tensor<double>({3, 2, 3, 3}, rng));
            ps.add("b", oracle::random_tensor<double>({3}, rng));
            ps.add("x", oracle::random_tensor<double>({2, 7, 7}, rng)); // works for both strides
            run_check(
                [&, stride](Tape<double>& t, ParamStore<double>& p) {
                    auto y = t.add_bias(t.conv2d(t.param(p, "x"), t.param(p, "k"), stride, 1),
                                        t.param(p, "b"));
                    return tape_sum(t, t.silu(y));
                },
                ps, 1e-6);
        }
    }

    SECTION("matmul and matmul_nt") {
        ParamStore<double> ps;
        ps.add("a", oracle::random_tensor<double>({3, 4}, rng));
        ps.add("b", oracle::random_tensor<double>({4, 5}, rng));
        ps.add("c", oracle::random_tensor<double>({6, 5}, rng));
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                auto ab = t.matmul(t.param(p, "a"), t.param(p, "b")); // 3x5
                auto y = t.matmul_nt(ab, t.param(p, "c"));            // 3x6
                return tape_sum(t, t.mul(y, y));
            },
            ps, 1e-6);
    }

    SECTION("silu and sigmoid away from saturation") {
        ParamStore<double> ps;
        ps.add("x", random_away_from_kinks({4, 4}, rng));
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                return tape_sum(t, t.mul(t.silu(t.param(p, "x")), t.sigmoid(t.param(p, "x"))));
            },
            ps, 1e-6);
    }

    SECTION("l2_normalize_rows") {
        ParamStore<double> ps;
        ps.add("x", random_away_from_kinks({3, 5}, rng));
        Tensor<double> mix = oracle::random_tensor<double>({3, 5}, rng);
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                auto y = t.l2_normalize_rows(t.param(p, "x"));
                return tape_sum(t, t.mul(y, t.constant(mix)));
            },
            ps, 1e-6);
    }

    SECTION("masked_softmax with gradient confined to the region") {
        ParamStore<double> ps;
        ps.add("x", oracle::random_tensor<double>({3, 3, 3}, rng));
        Tensor<double> region({3, 3}, {1, 0, 1, 0, 1, 0, 0, 0, 1});
        Tensor<double> mix = oracle::random_tensor<double>({3, 3, 3}, rng);
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                auto y = t.masked_softmax(t.param(p, "x"), region);
                return tape_sum(t, t.mul(y, t.constant(mix)));
            },
            ps, 1e-6);

        // out-of-region entries of the input gradient are exactly zero
        Tape<double> tape;
        auto x = tape.param(ps, "x");
        auto y = tape.masked_softmax(x, region);
        auto loss = tape_sum(tape, tape.mul(y, tape.constant(mix)));
        ps.zero_grads();
        tape.backward(loss);
        const auto& g = ps.grad("x");
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t i = 0; i < 9; ++i)
                if (region.data()[i] == 0.0) REQUIRE(g.data()[a * 9 + i] == 0.0);
    }

    SECTION("upsample, concat, chw_to_rows, reshape") {
        ParamStore<double> ps;
        ps.add("x", oracle::random_tensor<double>({2, 2, 2}, rng));
        ps.add("y", oracle::random_tensor<double>({3, 4, 4}, rng));
        Tensor<double> mix = oracle::random_tensor<double>({20, 5}, rng);
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                auto up = t.upsample_nearest(t.param(p, "x"), 2);   // 2x4x4
                auto cat = t.concat0({up, t.param(p, "y")});        // 5x4x4
                auto rows = t.chw_to_rows(cat);                     // 16x5
                auto flat = t.reshape(t.param(p, "x"), {4, 2});     // exercises reshape
                auto proj = t.matmul(flat, t.constant(Tensor<double>::full({2, 5}, 0.1))); // 4x5
                auto pad = t.concat0({rows, proj});                 // 20x5
                return tape_sum(t, t.mul(pad, t.constant(mix)));
            },
            ps, 1e-6);
    }

    SECTION("savpe_aggregate") {
        ParamStore<double> ps;
        ps.add("s", oracle::random_tensor<double>({8, 3, 3}, rng));
        ps.add("w", oracle::random_tensor<double>({4, 3, 3}, rng));
        Tensor<double> mix = oracle::random_tensor<double>({1, 8}, rng);
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                auto e = t.savpe_aggregate(t.param(p, "s"), t.param(p, "w"), 4);
                return tape_sum(t, t.mul(e, t.constant(mix)));
            },
            ps, 1e-6);
    }

    SECTION("bce and l1 losses") {
        ParamStore<double> ps;
        ps.add("x", random_away_from_kinks({6, 3}, rng));
        Tensor<double> targets({6, 3});
        for (std::size_t i = 0; i < 18; ++i) targets.raw()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                return t.bce_with_logits_mean(t.param(p, "x"), targets);
            },
            ps, 1e-6);

        ParamStore<double> ps2;
        ps2.add("pred", oracle::random_tensor<double>({5, 4}, rng, -2, 2));
        Tensor<double> target = oracle::random_tensor<double>({5, 4}, rng, 3, 6); // no sign flips
        Tensor<double> mask({5}, {1, 0, 1, 1, 0});
        run_check(
            [&](Tape<double>& t, ParamStore<double>& p) {
                return t.l1_rows_mean(t.param(p, "pred"), target, mask);
            },
            ps2, 1e-6);
    }
}

TEST_CASE("chained swiglu + normalize + contrast path checks to 1e-6") {
    Rng rng(202);
    ParamStore<double> ps;
    ps.add("wg", oracle::random_tensor<double>({6, 12}, rng));
    ps.add("wu", oracle::random_tensor<double>({6, 12}, rng));
    ps.add("wd", oracle::random_tensor<double>({12, 6}, rng));
    ps.add("o", oracle::random_tensor<double>({5, 6}, rng));
    const Tensor<double> p_rows = yoloe::l2_normalize_rows(oracle::random_tensor<double>({3, 6}, rng));
    Tensor<double> tmask({5, 3});
    for (std::size_t i = 0; i < 15; ++i) tmask.raw()[i] = (i % 3) == 0 ? 1.0 : 0.0;

    auto fn = [&](ParamStore<double>& p, bool with_grad) {
        Tape<double> tape;
        auto pr = tape.constant(p_rows);
        auto h = tape.mul(tape.silu(tape.matmul(pr, tape.param(p, "wg"))),
                          tape.matmul(pr, tape.param(p, "wu")));
        auto enhanced = tape.l2_normalize_rows(tape.add(pr, tape.matmul(h, tape.param(p, "wd"))));
        auto logits = tape.matmul_nt(tape.param(p, "o"), enhanced);
        auto loss = tape.bce_with_logits_mean(logits, tmask);
        if (with_grad) tape.backward(loss);
        return tape.value(loss)(std::size_t(0));
    };
    const auto res = yoloe::grad_check<double>(fn, ps, 1e-5, -1, 3);
    REQUIRE(res.max_error <= 1e-6);
}

TEST_CASE("grad_check flags a non-deterministic loss") {
    ParamStore<double> ps;
    ps.add("x", Tensor<double>({1}, {1.0}));
    int calls = 0;
    auto fn = [&](ParamStore<double>& p, bool) {
        return p.value("x")(std::size_t(0)) + (calls++ * 0.001);
    };
    REQUIRE_THROWS_AS(yoloe::grad_check<double>(fn, ps), yoloe::ValueError);
}

TEST_CASE("sgd step and freeze masks") {
    ParamStore<double> ps;
    ps.add("a", Tensor<double>({2}, {1, 1}));
    ps.add("b", Tensor<double>({2}, {1, 1}));
    ps.set_trainable("b", false);
    ps.zero_grads();
    ps.accumulate_grad("a", Tensor<double>({2}, {1, 2}));
    ps.accumulate_grad("b", Tensor<double>({2}, {1, 2}));
    ps.sgd_step(0.5);
    REQUIRE(ps.value("a")(0) == 0.5);
    REQUIRE(ps.value("a")(1) == 0.0);
    REQUIRE(ps.value("b")(0) == 1.0); // frozen
    REQUIRE(ps.value("b")(1) == 1.0);
}
