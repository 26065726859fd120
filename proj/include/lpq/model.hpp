#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lpq/encoder/encoder.hpp"
#include "lpq/fixtures/text.hpp"
#include "lpq/fixtures/video.hpp"
#include "lpq/lfq/codebook.hpp"
#include "lpq/objectives/ar_head.hpp"
#include "lpq/objectives/losses.hpp"
#include "lpq/params.hpp"
#include "lpq/pyramid/lapq.hpp"

namespace lpq {

enum class QuantizerVariant { VQ, GVQ, RVQ, LFQ, LaPQ };

std::string variant_name(QuantizerVariant v);
QuantizerVariant variant_from_name(const std::string& s);

struct ModelConfig {
    fixtures::VideoDims video;
    encoder::EncoderConfig encoder;
    lfq::CodebookConfig codebook;
    pyramid::QuantizerConfig quantizer;
    objectives::ARConfig ar;
    objectives::CodebookLossConfig codebook_loss;
    objectives::LossWeights weights;
    QuantizerVariant variant = QuantizerVariant::LaPQ;
    // Table-based baselines: entries per table, groups (gvq), depth (rvq).
    int vq_entries = 64;
    int vq_groups = 2;
    int rvq_depth = 2;
    double vq_beta = 0.25;
    double mask_ratio = 0.3;
    std::uint64_t seed = 0;
    std::uint64_t reference_seed = 0x5eed;

    std::vector<int> level_channels() const;
    std::int64_t index_space() const;
    void validate() const;
};

// One training example: clean target, masked encoder input, caption.
struct ClipInput {
    diff::Tensor target;
    diff::Tensor masked;
    std::vector<std::string> caption;
    fixtures::TextEmbedding text;
};

ClipInput make_input(const fixtures::CaptionedClip& clip, double mask_ratio, std::uint64_t mask_seed, int text_dim);
// No masking; for inference and evaluation.
ClipInput make_input(const diff::Tensor& video, const std::vector<std::string>& caption, int text_dim);

struct ForwardOptions {
    lfq::SignMode mode = lfq::SignMode::StraightThrough;
    bool carry = true;
    std::uint64_t sample_seed = 0;
    // Input-independent assignment: level l's pre-activations are replaced
    // by collapse[l] (one value per bit) at every position.
    std::optional<std::vector<std::vector<double>>> collapse;
};

template <typename T>
struct ForwardResult {
    std::vector<diff::Var<T>> pyramid;
    diff::Var<T> reference;
    std::vector<lfq::QuantizedVar<T>> levels;
    diff::Var<T> p_text;
    diff::Var<T> reconstruction;
    objectives::ReconTerms<T> recon;
    objectives::CodebookTerms<T> codebook;
    diff::Var<T> ar;
    diff::Var<T> drift;
    diff::Var<T> total;
    objectives::LossBreakdown breakdown;
};

class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const objectives::PerceptualProxy& proxy() const { return proxy_; }

    template <typename T>
    ForwardResult<T> forward(const Binding<T>& p, const ClipInput& in, const ForwardOptions& opt = {},
                             const objectives::LossWeights* weights = nullptr) const;

    // Float forward without gradients.
    ForwardResult<float> evaluate(diff::Tape<float>& tape, const ClipInput& in, const ForwardOptions& opt = {},
                                  const objectives::LossWeights* weights = nullptr) const;

    // Detached level outputs for a video and caption.
    std::vector<lfq::QuantizedField> quantize(const diff::Tensor& video, const std::vector<std::string>& caption) const;
    // Decoder output clamped to [0, 1].
    diff::Tensor reconstruct(const diff::Tensor& video, const std::vector<std::string>& caption) const;

private:
    ModelConfig cfg_;
    ParamStore store_;
    objectives::PerceptualProxy proxy_;
};

}  // namespace lpq
