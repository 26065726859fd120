#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lpq/diff/grad_check.hpp"
#include "lpq/diff/ops.hpp"

using namespace lpq::diff;

namespace {

Tensor64 random_tensor(Shape dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor64 t(std::move(dims));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

// Every op's reverse pass is compared against central differences of its own
// forward in 64-bit.
void expect_fd_match(const GraphFn<double>& f, std::vector<NamedTensor64> theta, double tol = 1e-6) {
    GradCheckOptions opt;
    opt.eps = 1e-5;
    opt.tol = tol;
    auto report = grad_check(f, theta, opt);
    for (const auto& e : report.entries)
        EXPECT_LE(e.max_rel_error, tol) << e.name << " idx " << e.worst_index << " analytic " << e.worst_analytic
                                        << " numeric " << e.worst_numeric;
    EXPECT_TRUE(report.passed);
}

}  // namespace

TEST(Backward, PowerRule) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(3.0f));
    auto grads = tape.backward(x * x);
    EXPECT_FLOAT_EQ(grads.at(x.id).item(), 6.0f);
}

TEST(Backward, Linearity) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(2.0f));
    auto y = tape.param(Tensor::scalar(-5.0f));
    auto grads = tape.backward(x + y);
    EXPECT_FLOAT_EQ(grads.at(x.id).item(), 1.0f);
    EXPECT_FLOAT_EQ(grads.at(y.id).item(), 1.0f);
}

TEST(Backward, NonParticipatingLeafGetsZero) {
    Tape<float> tape;
    auto x = tape.param(Tensor({2, 2}, 1.0f));
    auto unused = tape.param(Tensor({3}, 4.0f));
    auto grads = tape.backward(sum(square(x)));
    ASSERT_TRUE(grads.count(unused.id));
    for (float g : grads.at(unused.id).values()) EXPECT_EQ(g, 0.0f);
    for (float g : grads.at(x.id).values()) EXPECT_FLOAT_EQ(g, 2.0f);
}

TEST(Backward, RejectsNonScalarLoss) {
    Tape<float> tape;
    auto x = tape.param(Tensor({2}, 1.0f));
    EXPECT_THROW(tape.backward(x * x), lpq::ValidationError);
}

TEST(Backward, RejectsForwardEdge) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(1.0f));
    EXPECT_THROW(tape.record("bogus", Tensor::scalar(1.0f), {x.id + 1}, nullptr), lpq::ValidationError);
}

TEST(Backward, ClosedTapeRejectsRecording) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(1.0f));
    tape.backward(x * x);
    EXPECT_THROW(tape.constant(Tensor::scalar(0.0f)), lpq::ValidationError);
}

TEST(Backward, NonFiniteIsAnError) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(-1.0f));
    EXPECT_THROW(lpq::diff::log(x), lpq::NumericalError);
}

TEST(Backward, DetachBlocksGradient) {
    Tape<float> tape;
    auto x = tape.param(Tensor::scalar(2.0f));
    auto grads = tape.backward(x * detach(x));
    EXPECT_FLOAT_EQ(grads.at(x.id).item(), 2.0f);
}

TEST(GradCheck, L1DistanceSubgradient) {
    std::mt19937_64 rng(11);
    Tensor64 target = random_tensor({3, 4}, rng);
    Tensor64 start = target;
    for (std::int64_t i = 0; i < start.size(); ++i) start[i] += (i % 2 ? 0.5 : -0.5);
    GraphFn<double> f = [&](Tape<double>& tp, const std::vector<Var<double>>& v) {
        return sum(lpq::diff::abs(v[0] - tp.constant(target)));
    };
    auto report = grad_check(f, {{"x", start}}, {1e-3, 1e-6});
    EXPECT_TRUE(report.passed);
    Tape<double> tp;
    auto x = tp.param(start);
    auto g = tp.backward(f(tp, {x})).at(x.id);
    for (std::int64_t i = 0; i < g.size(); ++i) EXPECT_EQ(std::abs(g[i]), 1.0);
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
    GraphFn<double> f = [](Tape<double>& tp, const std::vector<Var<double>>&) {
        return tp.constant(Tensor64::scalar(4.2));
    };
    std::mt19937_64 rng(3);
    auto report = grad_check(f, {{"a", random_tensor({5}, rng)}}, {1e-3, 1e-9});
    EXPECT_TRUE(report.passed);
    EXPECT_EQ(report.max_rel_error, 0.0);
}

TEST(GradCheck, BinaryEntropyDerivative) {
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        return sum(binary_entropy(v[0], 1e-7));
    };
    Tape<double> tp;
    auto p = tp.param(Tensor64::scalar(0.3));
    const double analytic = tp.backward(f(tp, {p})).at(p.id).item();
    EXPECT_NEAR(analytic, std::log(0.7 / 0.3), 1e-12);
    EXPECT_NEAR(analytic, 0.8473, 1e-4);
    auto report = grad_check(f, {{"p", Tensor64::scalar(0.3)}}, {1e-3, 1e-5});
    EXPECT_TRUE(report.passed);
}

TEST(GradCheck, NaNObjectiveIsAnError) {
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) { return sum(lpq::diff::log(v[0])); };
    EXPECT_THROW(grad_check(f, {{"x", Tensor64::scalar(-2.0)}}, {}), lpq::NumericalError);
}

TEST(GradCheck, RelativeErrorDenominator) {
    EXPECT_DOUBLE_EQ(relative_error(0.5, 0.25), 0.25);
    EXPECT_DOUBLE_EQ(relative_error(10.0, 9.0), 0.1);
}

TEST(OpGradients, Elementwise) {
    std::mt19937_64 rng(5);
    auto a = random_tensor({4, 3}, rng, 0.2, 0.8);
    auto b = random_tensor({4, 3}, rng, 0.2, 0.8);
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        auto x = v[0], y = v[1];
        auto t = lpq::diff::tanh(x) * sigmoid(y) + lpq::diff::exp(x) / (y + x) - square(y) * 0.7;
        t = t + lpq::diff::log(add_scalar(x, 1.0)) + binary_entropy(x, 1e-7) + bernoulli_kl(x, y, 1e-7);
        return sum(t * t);
    };
    expect_fd_match(f, {{"a", a}, {"b", b}});
}

TEST(OpGradients, KinkedAwayFromKinks) {
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        auto x = v[0];
        return sum(lpq::diff::abs(x) * 1.5 + clamp(x, -0.5, 0.5) + hardtanh(x, 1.0) * x);
    };
    Tensor64 x({6}, std::vector<double>{-1.7, -0.8, -0.3, 0.2, 0.6, 1.4});
    expect_fd_match(f, {{"x", x}});
}

TEST(OpGradients, MatrixOps) {
    std::mt19937_64 rng(7);
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({5, 4}, rng);
    auto bias = random_tensor({3}, rng);
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        auto m = add_bias(matmul(v[0], v[1]), v[2]);
        auto parts = concat_cols<double>({slice_cols(m, 0, 2), slice_cols(m, 2, 4)});
        auto rows = concat_rows<double>({slice_rows(parts, 1, 3), slice_rows(parts, 0, 1)});
        auto s = softmax_rows(transpose(rows));
        auto ls = log_softmax_rows(rows);
        auto e = expand_cols(reshape(slice_cols(m, 0, 1), {3}), 4);
        return sum(s * s) + sum(ls * rows) + sum(e * m);
    };
    expect_fd_match(f, {{"a", a}, {"b", b}, {"bias", bias}});
}

TEST(OpGradients, LayerNormRows) {
    std::mt19937_64 rng(17);
    expect_fd_match(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto y = layer_norm_rows(v[0], 1e-5);
            return sum(y * v[1]);
        },
        {{"x", random_tensor({3, 5}, rng)}, {"w", random_tensor({3, 5}, rng)}});
}

TEST(GradCheck, DiscreteStateChangeIsSkipped) {
    // sign(x) jumps at 0; the perturbation straddles it for x = 0.
    std::uint64_t signs = 0;
    GraphFn<double> f = [&signs](Tape<double>&, const std::vector<Var<double>>& v) {
        signs = 0;
        for (std::int64_t i = 0; i < v[0].size(); ++i) signs |= std::uint64_t(v[0].value()[i] >= 0) << i;
        return sum(ste_sign(v[0], 1.0));
    };
    GradCheckOptions opt;
    opt.discrete_state = [&signs] { return signs; };
    auto report = grad_check(f, {{"x", Tensor64({2}, 0.0)}}, opt);
    EXPECT_EQ(report.skipped, 2);
    EXPECT_EQ(report.checked, 0);
}

TEST(OpGradients, CausalSoftmaxAndCrossEntropy) {
    std::mt19937_64 rng(9);
    auto x = random_tensor({4, 4}, rng, -2, 2);
    auto table = random_tensor({6, 4}, rng);
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        auto a = causal_softmax_rows(v[0]);
        auto emb = embedding(v[1], {5, 0, 2, 2});
        auto logits = matmul(a, emb);
        return cross_entropy_rows(logits, {1, -1, 3, 0}) + sum(a * v[0]);
    };
    expect_fd_match(f, {{"x", x}, {"table", table}});
}

TEST(OpGradients, ConvPoolUpsample) {
    std::mt19937_64 rng(13);
    auto x = random_tensor({2, 4, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3, 3}, rng, -0.3, 0.3);
    GraphFn<double> f = [](Tape<double>&, const std::vector<Var<double>>& v) {
        auto y = conv3d(v[0], v[1], 2, 2);
        auto z = conv3d(v[0], v[1], 1, 1);
        auto p = avg_pool3d(z, 2, 3, 3);
        auto u = upsample_nearest3d(y, 2, 2, 2);
        return sum(lpq::diff::tanh(y)) + sum(p * p) + sum(u * z);
    };
    expect_fd_match(f, {{"x", x}, {"w", w}});
}

TEST(OpGradients, Filter2d) {
    std::mt19937_64 rng(17);
    auto x = random_tensor({2, 7, 8}, rng);
    auto k = random_tensor({3, 3}, rng);
    GraphFn<double> f = [k](Tape<double>&, const std::vector<Var<double>>& v) {
        auto y = filter2d_valid(v[0], k);
        return sum(y * y);
    };
    expect_fd_match(f, {{"x", x}});
}

TEST(ConvShapes, StrideHalvesEvenExtents) {
    Tape<float> tape;
    auto x = tape.constant(Tensor({3, 8, 32, 32}, 0.5f));
    auto w = tape.constant(Tensor({4, 3, 3, 3, 3}, 0.1f));
    auto y = conv3d(x, w, 2, 2);
    EXPECT_EQ(y.dims(), (Shape{4, 4, 16, 16}));
    auto z = conv3d(x, w, 1, 2);
    EXPECT_EQ(z.dims(), (Shape{4, 8, 16, 16}));
}

TEST(SteSign, ForwardValuesAndPassthrough) {
    Tape<float> tape;
    auto z = tape.param(Tensor({5}, std::vector<float>{0.2f, -0.5f, 1.0f, 0.0f, -3.0f}));
    auto q = ste_sign(z, 1.0f);
    EXPECT_EQ(q.value().values()[0], 1.0f);
    EXPECT_EQ(q.value().values()[1], -1.0f);
    EXPECT_EQ(q.value().values()[2], 1.0f);
    EXPECT_EQ(q.value().values()[3], 1.0f);
    EXPECT_EQ(q.value().values()[4], -1.0f);
    auto w = tape.constant(Tensor({5}, std::vector<float>{1, 2, 3, 4, 5}));
    auto g = tape.backward(sum(q * w)).at(z.id);
    EXPECT_EQ(g[0], 1.0f);
    EXPECT_EQ(g[1], 2.0f);
    EXPECT_EQ(g[2], 3.0f);
    EXPECT_EQ(g[3], 4.0f);
    EXPECT_EQ(g[4], 0.0f);
}

// grad(f + g) == grad f + grad g on randomly composed graphs.
TEST(Properties, GradientOfSumIsSumOfGradients) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        auto x0 = random_tensor({3, 3}, rng, 0.1, 0.9);
        std::uniform_int_distribution<int> pick(0, 4);
        std::vector<int> ops_f, ops_g;
        for (int i = 0; i < 4; ++i) ops_f.push_back(pick(rng));
        for (int i = 0; i < 4; ++i) ops_g.push_back(pick(rng));
        auto build = [](Var<double> x, const std::vector<int>& ops) {
            Var<double> h = x;
            for (int op : ops) {
                switch (op) {
                    case 0: h = lpq::diff::tanh(h); break;
                    case 1: h = sigmoid(h) * x; break;
                    case 2: h = matmul(h, x); break;
                    case 3: h = softmax_rows(h) + x; break;
                    default: h = square(h) * 0.5; break;
                }
            }
            return sum(h);
        };
        auto grad_for = [&](bool use_f, bool use_g) {
            Tape<double> tp;
            auto x = tp.param(x0);
            Var<double> loss;
            if (use_f && use_g)
                loss = build(x, ops_f) + build(x, ops_g);
            else
                loss = build(x, use_f ? ops_f : ops_g);
            return tp.backward(loss).at(x.id);
        };
        auto gf = grad_for(true, false), gg = grad_for(false, true), gs = grad_for(true, true);
        for (std::int64_t i = 0; i < gs.size(); ++i) EXPECT_NEAR(gs[i], gf[i] + gg[i], 1e-12);
    }
}

TEST(Properties, DeterministicForwardAndBackward) {
    auto run = [] {
        std::mt19937_64 rng(99);
        Tensor x({4, 4});
        std::normal_distribution<float> n(0.f, 1.f);
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = n(rng);
        Tape<float> tp;
        auto v = tp.param(x);
        auto loss = sum(softmax_rows(matmul(v, transpose(v))) * v);
        auto g = tp.backward(loss).at(v.id);
        return std::make_pair(loss.value().item(), g);
    };
    auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_TRUE(a.second == b.second);
}
