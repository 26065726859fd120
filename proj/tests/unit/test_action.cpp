#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "lpq/action/localizer.hpp"
#include "lpq/error.hpp"

using namespace lpq;
using namespace lpq::action;

namespace {

struct OracleRun {
    std::int64_t a, b;
    double sum;
};

// Every maximal run of s >= tau, found by checking each (a, b) pair.
std::vector<OracleRun> enumerate_runs(const std::vector<double>& s, double tau) {
    std::vector<OracleRun> out;
    const std::int64_t n = static_cast<std::int64_t>(s.size());
    for (std::int64_t a = 0; a < n; ++a)
        for (std::int64_t b = a; b < n; ++b) {
            bool inside = true;
            double sum = 0;
            for (std::int64_t j = a; j <= b; ++j) {
                inside = inside && s[j] >= tau;
                sum += s[j];
            }
            const bool left = a == 0 || !(s[a - 1] >= tau);
            const bool right = b == n - 1 || !(s[b + 1] >= tau);
            if (inside && left && right) out.push_back({a, b, sum});
        }
    return out;
}

std::vector<double> random_scores(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<int> level(0, 8);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (double& v : s) v = level(rng) / 8.0;
    return s;
}

lfq::QuantizedField field_from_probs(std::int64_t bits, std::int64_t t, std::int64_t h, std::int64_t w,
                                     const std::vector<float>& probs) {
    lfq::QuantizedField f;
    f.bits = static_cast<int>(bits);
    f.grid = {t, h, w};
    f.bit_probs = diff::Tensor({bits, t, h, w}, probs);
    return f;
}

}  // namespace

TEST(Decode, BinaryLikeExample) {
    auto seg = decode_segments({0, 1, 1, 1, 0, 1}, 0.5, 1);
    ASSERT_TRUE(seg.has_value());
    EXPECT_EQ(seg->start, 1);
    EXPECT_EQ(seg->end, 3);
    EXPECT_FALSE(decode_segments({0.1, 0.2, 0.3}, 0.5, 1).has_value());
    // equal means tie to the earliest start
    auto tie = decode_segments({1, 0, 1}, 0.5, 3);
    ASSERT_TRUE(tie.has_value());
    EXPECT_EQ(tie->start, 0);
    EXPECT_EQ(tie->end, 2);
}

TEST(Decode, MatchesExhaustiveOracleOnRandomTrajectories) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> len(1, 50), win(1, 6);
    const double taus[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_scores(rng, len(rng));
        const int k = win(rng);
        for (double tau : taus) {
            const auto runs = enumerate_runs(s, tau);
            const auto got = decode_segments(s, tau, k);
            if (runs.empty()) {
                EXPECT_FALSE(got.has_value());
                continue;
            }
            const OracleRun* best = nullptr;
            for (const auto& r : runs) {
                const double mean = r.sum / double(r.b - r.a + 1);
                if (!best || mean > best->sum / double(best->b - best->a + 1)) best = &r;
            }
            ASSERT_TRUE(got.has_value());
            EXPECT_EQ(got->start, best->a);
            EXPECT_EQ(got->end, best->b + k - 1);
            EXPECT_EQ(got->mean_score, best->sum / double(best->b - best->a + 1));
            EXPECT_GE(got->end - got->start + 1, k);

            // localize_multi: every run, expanded, union-merged where frames overlap
            std::vector<std::pair<std::int64_t, std::int64_t>> iv;
            for (const auto& r : runs) iv.emplace_back(r.a, r.b);
            std::sort(iv.begin(), iv.end());
            std::vector<std::pair<std::int64_t, std::int64_t>> merged;
            for (const auto& [a, b] : iv) {
                if (!merged.empty() && a <= merged.back().second + k - 1)
                    merged.back().second = std::max(merged.back().second, b);
                else
                    merged.emplace_back(a, b);
            }
            const auto multi = localize_multi({s}, tau, k);
            ASSERT_EQ(multi.size(), merged.size());
            for (std::size_t i = 0; i < merged.size(); ++i) {
                EXPECT_EQ(multi[i].start, merged[i].first);
                EXPECT_EQ(multi[i].end, merged[i].second + k - 1);
                EXPECT_GE(multi[i].end - multi[i].start + 1, k);
                double sum = 0;
                for (auto j = merged[i].first; j <= merged[i].second; ++j) sum += s[j];
                EXPECT_EQ(multi[i].mean_score, sum / double(merged[i].second - merged[i].first + 1));
            }
        }
    }
}

TEST(Decode, ShiftInvariance) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = random_scores(rng, 30);
        auto shifted = s;
        for (double& v : shifted) v += 2.0;
        const auto a = decode_segments(s, 0.5, 4), b = decode_segments(shifted, 2.5, 4);
        ASSERT_EQ(a.has_value(), b.has_value());
        if (a) {
            EXPECT_EQ(a->start, b->start);
            EXPECT_EQ(a->end, b->end);
        }
    }
}

TEST(Decode, RaisingTauOnlyRefinesRuns) {
    // The selected segment can grow when tau rises (a short high run loses to
    // the high core of a longer run), but every run at the higher threshold
    // lies inside some run at the lower one.
    auto low = decode_segments({0.9, 0.0, 0.6, 0.6, 0.6, 0.95, 0.95, 0.95}, 0.5, 1);
    auto high = decode_segments({0.9, 0.0, 0.6, 0.6, 0.6, 0.95, 0.95, 0.95}, 0.7, 1);
    ASSERT_TRUE(low && high);
    EXPECT_EQ(low->end - low->start, 0);
    EXPECT_EQ(high->end - high->start, 2);

    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_scores(rng, 40);
        for (double lo : {0.25, 0.5}) {
            const auto hi_runs = localize_multi({s}, lo + 0.25, 1);
            const auto lo_runs = localize_multi({s}, lo, 1);
            for (const auto& r : hi_runs) {
                bool inside = false;
                for (const auto& q : lo_runs) inside = inside || (q.start <= r.start && r.end <= q.end);
                EXPECT_TRUE(inside);
            }
        }
    }
}

TEST(LocalizeMulti, DisjointRunsAndMerging) {
    auto one = localize_multi({{0, 1, 1, 1, 0, 0}}, 0.5, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], *decode_segments({0, 1, 1, 1, 0, 0}, 0.5, 1));

    auto two = localize_multi({{0.9, 0.9, 0, 0, 0, 0.6, 0.6}}, 0.5, 2);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[0].start, 0);
    EXPECT_EQ(two[0].end, 2);
    EXPECT_EQ(two[1].start, 5);
    EXPECT_EQ(two[1].end, 7);

    // windows (0,1) and (3,4) with K = 3 cover frames 0..3 and 3..6
    auto joined = localize_multi({{1, 1, 0, 1, 1}}, 0.5, 3);
    ASSERT_EQ(joined.size(), 1u);
    EXPECT_EQ(joined[0].start, 0);
    EXPECT_EQ(joined[0].end, 6);
    EXPECT_DOUBLE_EQ(joined[0].mean_score, 0.8);

    auto queries = localize_multi({{1, 0, 0}, {0, 0, 1}}, 0.5, 1);
    ASSERT_EQ(queries.size(), 2u);
    EXPECT_EQ(queries[0].query, 0);
    EXPECT_EQ(queries[1].query, 1);
    EXPECT_EQ(queries[1].start, 2);
    EXPECT_THROW(localize_multi({}, 0.5, 1), ValidationError);
}

TEST(Trajectory, WindowMeans) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> s(40);
    for (double& v : s) v = u(rng);
    auto w = window_means(s, 3);
    ASSERT_EQ(w.size(), 38u);
    for (std::size_t t = 0; t < w.size(); ++t) EXPECT_NEAR(w[t], (s[t] + s[t + 1] + s[t + 2]) / 3, 1e-9);
    for (double v : window_means(std::vector<double>(10, 0.3), 4)) EXPECT_NEAR(v, 0.3, 1e-12);
    auto whole = window_means(s, 40);
    ASSERT_EQ(whole.size(), 1u);
    double mean = 0;
    for (double v : s) mean += v / 40;
    EXPECT_NEAR(whole[0], mean, 1e-12);
    EXPECT_EQ(window_means(s, 3, 2).size(), 19u);
    EXPECT_THROW(window_means(s, 41), ValidationError);
}

TEST(Trajectory, CosineScoresAndZeroDescriptor) {
    std::vector<std::vector<double>> d{{1, 0}, {0, 1}, {0, 0}, {std::sqrt(0.5), std::sqrt(0.5)}};
    auto tr = score_trajectory(d, {2, 0}, 2);
    ASSERT_EQ(tr.frame_scores.size(), 4u);
    EXPECT_DOUBLE_EQ(tr.frame_scores[0], 1);
    EXPECT_DOUBLE_EQ(tr.frame_scores[1], 0);
    EXPECT_DOUBLE_EQ(tr.frame_scores[2], 0);
    EXPECT_NEAR(tr.frame_scores[3], std::sqrt(0.5), 1e-12);
    EXPECT_EQ(tr.window_scores.size(), 3u);
    EXPECT_THROW(score_trajectory(d, {1, 0}, 5), ValidationError);
}

TEST(Descriptors, PoolingOracleAndDegenerateField) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> u(0, 1);
    const std::int64_t b = 3, t = 4, h = 2, w = 3;
    std::vector<float> probs(static_cast<std::size_t>(b * t * h * w));
    for (float& p : probs) p = u(rng);
    auto d = frame_descriptors(field_from_probs(b, t, h, w, probs));
    ASSERT_EQ(d.size(), 4u);
    for (std::int64_t f = 0; f < t; ++f) {
        std::vector<double> v(b, 0.0);
        double norm = 0;
        for (std::int64_t bit = 0; bit < b; ++bit) {
            for (std::int64_t j = 0; j < h * w; ++j) v[bit] += (2.0 * probs[(bit * t + f) * h * w + j] - 1.0) / double(h * w);
            norm += v[bit] * v[bit];
        }
        for (std::int64_t bit = 0; bit < b; ++bit) EXPECT_NEAR(d[f][bit], v[bit] / std::sqrt(norm), 1e-6);
    }

    std::vector<float> constant(static_cast<std::size_t>(2 * 2 * 1 * 2));
    for (std::size_t i = 0; i < constant.size(); ++i) constant[i] = i < 4 ? 0.9f : 0.2f;
    auto c = frame_descriptors(field_from_probs(2, 2, 1, 2, constant));
    EXPECT_EQ(c[0], c[1]);
    EXPECT_NEAR(c[0][0], 0.8 / std::hypot(0.8, 0.6), 1e-6);
    EXPECT_NEAR(c[0][1], -0.6 / std::hypot(0.8, 0.6), 1e-6);

    auto zero = frame_descriptors(field_from_probs(2, 1, 1, 1, {0.5f, 0.5f}));
    EXPECT_EQ(zero[0], (std::vector<double>{0, 0}));
}
