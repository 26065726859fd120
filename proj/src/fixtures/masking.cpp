#include "lpq/fixtures/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lpq/error.hpp"

namespace lpq::fixtures {

std::vector<double> cosine_mask_probabilities(std::int64_t height, std::int64_t width, double budget) {
    require(height > 0 && width > 0, "mask grid must be non-empty");
    require(budget >= 0.0 && budget <= 1.0, "mask budget must be in [0, 1]");
    const double cy = 0.5 * static_cast<double>(height), cx = 0.5 * static_cast<double>(width);
    const double rmax = std::hypot(cy, cx);
    std::vector<double> base(static_cast<std::size_t>(height * width));
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            const double r = std::hypot(static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx) / rmax;
            base[static_cast<std::size_t>(y * width + x)] = 0.5 * (1.0 + std::cos(std::numbers::pi * r));
        }
    auto mean_at = [&](double s) {
        double acc = 0;
        for (double b : base) acc += std::min(1.0, s * b);
        return acc / static_cast<double>(base.size());
    };
    double lo = 0.0, hi = 1.0;
    while (mean_at(hi) < budget && hi < 1e12) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_at(mid) < budget ? lo : hi) = mid;
    }
    for (double& b : base) b = std::min(1.0, hi * b);
    return base;
}

std::pair<Video, MaskSpec> mask_video(const Video& v, double temporal_ratio, std::uint64_t seed) {
    require(temporal_ratio >= 0.0 && temporal_ratio <= 1.0, "temporal mask ratio must be in [0, 1]");
    const VideoDims d = v.dims();
    MaskSpec spec;
    spec.temporal_ratio = temporal_ratio;
    spec.seed = seed;
    const auto count = static_cast<std::int64_t>(std::floor(temporal_ratio * static_cast<double>(d.frames) + 1e-9));

    std::mt19937_64 rng(seed);
    std::vector<std::int64_t> order(static_cast<std::size_t>(d.frames));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    spec.masked_frames.assign(order.begin(), order.begin() + count);
    std::sort(spec.masked_frames.begin(), spec.masked_frames.end());

    Video out = v;
    const auto probs = cosine_mask_probabilities(d.height, d.width, kSpatialMaskBudget);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::int64_t t : spec.masked_frames) {
        std::vector<std::uint8_t> grid(probs.size(), 0);
        for (std::size_t i = 0; i < probs.size(); ++i) grid[i] = u(rng) < probs[i] ? 1 : 0;
        for (std::int64_t y = 0; y < d.height; ++y)
            for (std::int64_t x = 0; x < d.width; ++x)
                if (grid[static_cast<std::size_t>(y * d.width + x)])
                    for (std::int64_t c = 0; c < d.channels; ++c) out.at(c, t, y, x) = 0.0f;
        spec.spatial_pattern.push_back(std::move(grid));
    }
    return {std::move(out), std::move(spec)};
}

}  // namespace lpq::fixtures
