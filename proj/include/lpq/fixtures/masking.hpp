#pragma once

#include <cstdint>
#include <vector>

#include "lpq/fixtures/video.hpp"

namespace lpq::fixtures {

struct MaskSpec {
    double temporal_ratio = 0.0;
    std::vector<std::int64_t> masked_frames;  // ascending
    // One H*W grid per masked frame, aligned with masked_frames; 1 = masked.
    std::vector<std::vector<std::uint8_t>> spatial_pattern;
    std::uint64_t seed = 0;
};

// Fraction of pixels the spatial pattern masks in expectation.
inline constexpr double kSpatialMaskBudget = 0.5;

// Cosine-ramp masking probability per pixel, scaled (with saturation at 1)
// so its mean over the frame equals `budget`.
std::vector<double> cosine_mask_probabilities(std::int64_t height, std::int64_t width, double budget);

// Chooses floor(ratio * T) frames and zeroes a cosine-ramp spatial pattern
// on each of them. Unmasked voxels are untouched.
std::pair<Video, MaskSpec> mask_video(const Video& v, double temporal_ratio, std::uint64_t seed);

}  // namespace lpq::fixtures
