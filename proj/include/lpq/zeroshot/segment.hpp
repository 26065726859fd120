#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpq/diff/tensor.hpp"
#include "lpq/lfq/codebook.hpp"
#include "lpq/params.hpp"

namespace lpq::zeroshot {

// Scores in [-1, 1] over a [T, H, W] grid.
struct RelevanceVolume {
    std::string unit;
    diff::Tensor scores;
};

struct CRFParams {
    double pairwise = 1.0;  // lambda_p
    double theta_s = 1.5;   // spatial bandwidth, pixels
    double theta_t = 1.0;   // temporal bandwidth, frames
    double theta_a = 0.25;  // appearance bandwidth, intensity units
    int iterations = 5;
    double damping = 0.5;

    void validate() const;
};

// labels[(t * H + y) * W + x]; 0 is background, u maps to units[u - 1].
struct MaskVolume {
    std::int64_t t = 0, h = 0, w = 0;
    std::vector<std::uint8_t> labels;
    std::vector<std::string> units;

    std::vector<std::uint8_t> binary(const std::string& unit) const;
    nlohmann::json label_map() const;
};

// Cosine between each cell's projected code and e_w. `fusion` is the level's
// [bits, text_dim] output projection; codes enter through its transpose.
RelevanceVolume relevance_map(const lfq::QuantizedField& q, const std::vector<float>& e_w, const diff::Tensor& fusion,
                              const std::string& unit = {});

// Trilinear, align-corners; every factor must be a positive integer.
RelevanceVolume upsample_scores(const RelevanceVolume& vol, std::int64_t t, std::int64_t h, std::int64_t w);

struct CRFResult {
    MaskVolume mask;
    // [labels, voxels] marginals after the last sweep
    std::vector<double> marginals;
    // Free energy at initialization and after every sweep.
    std::vector<double> energy;
    // Largest |sum_l Q_i(l) - 1| seen after any single voxel update.
    double max_marginal_error = 0;
};

// unaries[l] is a [T, H, W] score volume (higher favors l); index 0 is the
// background. Sequential damped mean field over a Potts model with truncated
// Gaussian space-time-appearance kernels.
CRFResult crf_mean_field(const std::vector<diff::Tensor>& unaries, const diff::Tensor& video, const CRFParams& params);

// Mean-field free energy of marginals q [labels, voxels].
double crf_free_energy(const std::vector<double>& q, const std::vector<diff::Tensor>& unaries, const diff::Tensor& video,
                       const CRFParams& params);

struct SegmentParams {
    CRFParams crf;
    // A unit wins a voxel over the background where its normalized score
    // exceeds this.
    double threshold = 0.5;
    // Multiplies every unary before inference.
    double unary_scale = 4.0;
};

// Relevance, upsampling and CRF over all units jointly. Scores are min-max
// normalized per unit; background = 2 * threshold - max_u S_u.
MaskVolume segment_all(const diff::Tensor& video, const lfq::QuantizedField& q_last,
                       const std::vector<std::string>& units, const diff::Tensor& fusion, int text_dim,
                       const SegmentParams& params = {});

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

}  // namespace lpq::zeroshot
