#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpq/diff/ops.hpp"
#include "lpq/lfq/codebook.hpp"

namespace lpq::objectives {

struct LossWeights {
    double recon = 2.5;
    double codebook = 2.5;
    double ar = 1.5;
    double drift = 0.6;
};

struct CodebookLossConfig {
    // Codewords drawn per level for the text-codebook term.
    int text_code_samples = 256;
    // Codeword c maps to bit probabilities sigmoid(c * sharpness).
    double code_sharpness = 1.0;
    // Adds -H(mean bit probs) per level to the entropy term.
    bool batch_diversity = false;
};

// Per-level terms (hierarchical[0] is zero) and their sums over levels.
template <typename T>
struct CodebookTerms {
    std::vector<diff::Var<T>> commitment, entropy, hierarchical, text_cond, text_code;
    diff::Var<T> commitment_sum, entropy_sum, hierarchical_sum, text_cond_sum, text_code_sum;
    diff::Var<T> total;
};

// p_text [bits] is detached inside. `sample_seed` fixes the codeword batch.
template <typename T>
CodebookTerms<T> codebook_loss(const std::vector<lfq::QuantizedVar<T>>& levels, diff::Var<T> p_text,
                               const CodebookLossConfig& cfg, std::uint64_t sample_seed);

// Frozen random filters standing in for a learned perceptual network.
struct PerceptualProxy {
    diff::Tensor w1;  // [8, in, 3, 3, 3]
    diff::Tensor w2;  // [8, 8, 3, 3, 3]
};
PerceptualProxy make_perceptual_proxy(int in_channels, std::uint64_t seed = 0x51ed5eedULL);

template <typename T>
struct ReconTerms {
    diff::Var<T> l1, ssim, perceptual, total;
};

// target and pred are [C, T, H, W]; target is treated as data.
template <typename T>
ReconTerms<T> recon_loss(diff::Var<T> target, diff::Var<T> pred, const PerceptualProxy& proxy);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

diff::Tensor64 ssim_kernel();
// Mean SSIM over valid windows, frames and channels (tape form).
template <typename T>
diff::Var<T> mean_ssim(diff::Var<T> x, diff::Var<T> y);

// Mean over positions of KL(softmax_c(adapted) || softmax_c(reference)),
// reference side detached.
template <typename T>
diff::Var<T> drift_loss(diff::Var<T> adapted, diff::Var<T> reference);

struct LossBreakdown {
    double l1 = 0, ssim = 0, perceptual = 0, recon = 0;
    std::vector<double> commitment, entropy, hierarchical, text_cond, text_code;
    double commitment_sum = 0, entropy_sum = 0, hierarchical_sum = 0, text_cond_sum = 0, text_code_sum = 0;
    double codebook = 0;
    double ar = 0;
    double drift = 0;
    double total = 0;

    nlohmann::json to_json() const;
};

double total_objective(const LossBreakdown& b, const LossWeights& w);

template <typename T>
LossBreakdown breakdown_of(const ReconTerms<T>& r, const CodebookTerms<T>& c, diff::Var<T> ar, diff::Var<T> drift,
                           const LossWeights& w);

}  // namespace lpq::objectives
