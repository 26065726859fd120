#include <gtest/gtest.h>

#include <random>

#include "lpq/encoder/encoder.hpp"
#include "scalar_oracle.hpp"

using namespace lpq;
using namespace lpq::encoder;
using diff::Tensor;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.levels = 2;
    cfg.channels = {4, 5};
    cfg.temporal_halving_stages = {2};
    cfg.adapter_rank = 2;
    cfg.adapter_alpha = 3.0;
    cfg.decoder_channels = 3;
    return cfg;
}

Tensor random_tensor(diff::Shape dims, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    Tensor t(std::move(dims));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Randomizes every parameter, including zero-initialized ones, so the
// oracle comparison exercises all terms.
void scramble(ParamStore& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store.at(static_cast<int>(i));
        p.value = random_tensor(p.value.dims(), rng);
        for (auto& v : p.value.values()) v *= 0.5f;
    }
}

oracle::Vol stage_oracle(const oracle::Vol& x, const ParamStore& s, int l, bool halve, double alpha, bool adapted) {
    const auto& w = s.value(adapted ? stage_weight(l) : reference_weight(l));
    const auto& b = s.value(adapted ? stage_bias(l) : reference_bias(l));
    const int cout = int(w.dim(0)), fan = int(w.size() / w.dim(0));
    std::vector<double> weff = oracle::flat(w);
    if (adapted) {
        const auto& A = s.value(adapter_a(l));
        const auto& B = s.value(adapter_b(l));
        const int r = int(A.dim(0));
        for (int o = 0; o < cout; ++o)
            for (int j = 0; j < fan; ++j) {
                double d = 0;
                for (int k = 0; k < r; ++k) d += B[o * r + k] * A[k * fan + j];
                weff[std::size_t(o) * fan + j] += alpha / r * d;
            }
    }
    oracle::Vol y = oracle::conv(x, weff, cout, halve ? 2 : 1, 2);
    for (int c = 0; c < y.c; ++c)
        for (int t = 0; t < y.t; ++t)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx) y.at(c, t, yy, xx) = std::tanh(y.at(c, t, yy, xx) + b[c]);
    return y;
}

}  // namespace

TEST(Encoder, ShapeLadder) {
    EncoderConfig cfg;
    auto grids = level_grids(cfg, {3, 4, 32, 32});
    ASSERT_EQ(grids.size(), 4u);
    const std::int64_t hs[] = {16, 8, 4, 2};
    const std::int64_t ts[] = {4, 2, 2, 1};
    for (int l = 0; l < 4; ++l) {
        EXPECT_EQ(grids[l].h, hs[l]);
        EXPECT_EQ(grids[l].w, hs[l]);
        EXPECT_EQ(grids[l].t, ts[l]);
    }
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    diff::Tape<float> tape;
    Binding<float> p(tape, store);
    auto f = encode(tape.constant(Tensor({3, 4, 32, 32}, 0.3f)), p, cfg);
    for (int l = 0; l < 4; ++l) {
        EXPECT_EQ(f[l].dim(1), ts[l]);
        EXPECT_EQ(f[l].dim(2), hs[l]);
        EXPECT_EQ(f[l].dim(3), hs[l]);
    }
}

TEST(Encoder, RejectsIndivisibleInput) {
    EncoderConfig cfg;
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    diff::Tape<float> tape;
    Binding<float> p(tape, store);
    EXPECT_THROW(encode(tape.constant(Tensor({3, 4, 24, 24})), p, cfg), ValidationError);
    EXPECT_THROW(encode(tape.constant(Tensor({3, 3, 32, 32})), p, cfg), ValidationError);
}

TEST(Encoder, ZeroInputZeroBiasGivesZeroPyramid) {
    EncoderConfig cfg;
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    diff::Tape<float> tape;
    Binding<float> p(tape, store);
    for (auto f : encode(tape.constant(Tensor({3, 4, 16, 16})), p, cfg))
        for (float v : f.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Encoder, MatchesScalarOracle) {
    auto cfg = tiny_config();
    ParamStore store;
    init_encoder(store, cfg, 4, 7, 8);
    scramble(store, 99);
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({3, 2, 4, 4}, rng);

    diff::Tape<double> tape;
    Binding<double> p(tape, store);
    auto levels = encode(tape.constant(x.cast<double>()), p, cfg);
    auto ref = reference_features(tape.constant(x.cast<double>()), p, cfg);

    oracle::Vol v = oracle::from_tensor(x);
    oracle::Vol r = v;
    for (int l = 1; l <= 2; ++l) {
        v = stage_oracle(v, store, l, l == 2, cfg.adapter_alpha, true);
        r = stage_oracle(r, store, l, l == 2, cfg.adapter_alpha, false);
        const auto& got = levels[l - 1].value();
        ASSERT_EQ(got.size(), std::int64_t(v.v.size()));
        for (std::size_t i = 0; i < v.v.size(); ++i) EXPECT_NEAR(got[std::int64_t(i)], v.v[i], 1e-5);
    }
    for (std::size_t i = 0; i < r.v.size(); ++i) EXPECT_NEAR(ref.value()[std::int64_t(i)], r.v[i], 1e-5);
}

TEST(Decoder, MatchesScalarOracle) {
    auto cfg = tiny_config();
    const int bits = 4;
    ParamStore store;
    init_encoder(store, cfg, bits, 7, 8);
    scramble(store, 5);
    fixtures::VideoDims dims{3, 2, 4, 4};
    auto grids = level_grids(cfg, dims);  // 2x2x2, 1x1x1
    std::mt19937_64 rng(12);
    std::vector<Tensor> codes;
    for (auto g : grids) {
        Tensor c({bits, g.positions()});
        for (auto& v : c.values()) v = (rng() & 1) ? 1.f : -1.f;
        codes.push_back(c);
    }
    diff::Tape<double> tape;
    Binding<double> p(tape, store);
    std::vector<diff::Var<double>> cv;
    for (auto& c : codes) cv.push_back(tape.constant(c.cast<double>()));
    auto out = decode(cv, grids, p, cfg, dims);
    ASSERT_EQ(out.dims(), dims.shape());

    const int d = cfg.decoder_channels;
    auto lateral = [&](int l) {
        const auto& g = grids[l - 1];
        const auto& w = store.value("dec.lat." + std::to_string(l) + ".w");
        const auto& b = store.value("dec.lat." + std::to_string(l) + ".b");
        oracle::Vol y(d, int(g.t), int(g.h), int(g.w));
        const int n = int(g.positions());
        for (int o = 0; o < d; ++o)
            for (int q = 0; q < n; ++q) {
                double acc = b[o];
                for (int k = 0; k < bits; ++k) acc += w[o * bits + k] * codes[l - 1][k * n + q];
                y.v[std::size_t(o) * n + q] = acc;
            }
        return y;
    };
    oracle::Vol h = oracle::upsample(lateral(2), 2, 2, 2);
    oracle::Vol l1 = lateral(1);
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] = std::tanh(h.v[i] + l1.v[i]);
    auto conv_bias_act = [&](const oracle::Vol& x, const std::string& name, int cout, bool act) {
        oracle::Vol y = oracle::conv(x, oracle::flat(store.value(name + ".w")), cout, 1, 1);
        const auto& b = store.value(name + ".b");
        const std::size_t per = y.v.size() / cout;
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            y.v[i] += b[std::int64_t(i / per)];
            if (act) y.v[i] = std::tanh(y.v[i]);
        }
        return y;
    };
    h = conv_bias_act(h, "dec.mid", d, true);
    h = oracle::upsample(h, 1, 2, 2);
    h = conv_bias_act(h, "dec.out", 3, false);
    for (std::size_t i = 0; i < h.v.size(); ++i) EXPECT_NEAR(out.value()[std::int64_t(i)], h.v[i], 1e-5);
}

TEST(Decoder, ZeroCodesZeroBiasGiveZeroVideo) {
    EncoderConfig cfg;
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    fixtures::VideoDims dims;
    auto grids = level_grids(cfg, dims);
    diff::Tape<float> tape;
    Binding<float> p(tape, store);
    std::vector<diff::Var<float>> codes;
    for (auto g : grids) codes.push_back(tape.constant(Tensor({10, g.positions()})));
    auto out = decode(codes, grids, p, cfg, dims);
    EXPECT_EQ(out.dims(), dims.shape());
    for (float v : out.value().values()) EXPECT_EQ(v, 0.0f);
    codes.pop_back();
    grids.pop_back();
    EXPECT_THROW(decode(codes, grids, p, cfg, dims), ValidationError);
}

TEST(Adapter, ZeroBIsIdentityAndRankOneExample) {
    diff::Tape<double> tape;
    auto W = tape.constant(diff::Tensor64({2, 2}, std::vector<double>{1, 2, 3, 4}));
    auto x = tape.constant(diff::Tensor64({2, 1}, std::vector<double>{5, 7}));
    auto A = tape.constant(diff::Tensor64({1, 2}, std::vector<double>{1, 0}));
    auto B0 = tape.constant(diff::Tensor64({2, 1}, 0.0));
    auto base = apply_adapter(W, A, B0, 1.0, x).value();
    EXPECT_DOUBLE_EQ(base[0], 19);
    EXPECT_DOUBLE_EQ(base[1], 43);
    auto B = tape.constant(diff::Tensor64({2, 1}, std::vector<double>{0, 1}));
    auto y = apply_adapter(W, A, B, 1.0, x).value();  // alpha = r = 1
    EXPECT_DOUBLE_EQ(y[0], 19);
    EXPECT_DOUBLE_EQ(y[1], 43 + 5);
    auto y0 = apply_adapter(W, A, B, 0.0, x).value();
    EXPECT_DOUBLE_EQ(y0[1], 43);
    auto Bbad = tape.constant(diff::Tensor64({2, 2}, 0.0));
    EXPECT_THROW(apply_adapter(W, A, Bbad, 1.0, x), ValidationError);
}

TEST(Reference, FrozenAndDistinct) {
    EncoderConfig cfg;
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({3, 4, 16, 16}, rng);
    diff::Tape<float> tape;
    Binding<float> p(tape, store);
    auto a = reference_features(tape.constant(x), p, cfg);
    auto b = reference_features(tape.constant(x), p, cfg);
    EXPECT_EQ(a.value(), b.value());
    auto grads = tape.backward(diff::sum(diff::square(a)));
    for (int l = 1; l <= cfg.levels; ++l) {
        EXPECT_FALSE(store.at(store.index(reference_weight(l))).trainable);
        EXPECT_EQ(grads.count(p(reference_weight(l)).id), 0u);
    }
    // 100 pairs differing in one voxel map to different features.
    int distinct = 0;
    for (int k = 0; k < 100; ++k) {
        diff::Tape<float> t2;
        Binding<float> p2(t2, store);
        Tensor y = x;
        y[static_cast<std::int64_t>(rng() % y.size())] += 0.25f;
        auto fy = reference_features(t2.constant(y), p2, cfg);
        distinct += !(fy.value() == a.value());
    }
    EXPECT_EQ(distinct, 100);
}

TEST(Manifest, ListsStagesAndParameters) {
    EncoderConfig cfg;
    ParamStore store;
    init_encoder(store, cfg, 10, 1, 2);
    auto j = manifest(cfg, store);
    EXPECT_EQ(j["stages"].size(), 4u);
    EXPECT_EQ(j["parameters"].size(), store.size());
    EXPECT_EQ(j["adapter"]["rank"], 16);
}
