#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpq/diff/ops.hpp"
#include "lpq/lfq/codebook.hpp"
#include "lpq/params.hpp"

namespace lpq::pyramid {

struct QuantizerConfig {
    int text_dim = 32;
    // Width of the query/key/value space.
    int attn_dim = 32;
    int heads = 2;
    // Stddev of the frozen text-prior projection.
    double prior_scale = 1.5;
    // Lateral weights start at std gain/sqrt(C). The gain has to be large
    // enough that initial pre-activations sit outside [-1, 1]; near zero, the
    // commitment term pulls every position onto the shared bias.
    double lateral_gain = 16.0;

    void validate() const;
};

struct PyramidOptions {
    lfq::SignMode mode = lfq::SignMode::StraightThrough;
    // false drops the carry from level l-1 into level l.
    bool carry = true;
};

std::string block_param(int level, const std::string& part);

// Registers quant blocks for `channels.size()` levels and the frozen text prior.
void init_quantizer(ParamStore& store, const QuantizerConfig& cfg, const std::vector<int>& channels, int bits,
                    std::uint64_t seed);

// Moves bit probabilities [bits, src positions] onto `dst` by average pooling
// (coarser axis) or nearest replication (finer axis).
template <typename T>
diff::Var<T> align_probs(diff::Var<T> probs, lfq::GridDims src, lfq::GridDims dst);

// Detached form; hard codes are re-derived by thresholding at 0.5.
lfq::QuantizedField align_grids(const lfq::QuantizedField& q, lfq::GridDims dst);

// One level. `words` is [text_dim, n_words]; prev is null at level 1.
template <typename T>
lfq::QuantizedVar<T> quant_block(const lfq::QuantizedVar<T>* prev, diff::Var<T> features, diff::Var<T> words,
                                 const Binding<T>& params, int level, const QuantizerConfig& cfg,
                                 const lfq::CodebookConfig& codebook, const PyramidOptions& opt = {});

template <typename T>
std::vector<lfq::QuantizedVar<T>> quantize_pyramid(const std::vector<diff::Var<T>>& pyramid, diff::Var<T> words,
                                                   const Binding<T>& params, const QuantizerConfig& cfg,
                                                   const lfq::CodebookConfig& codebook, const PyramidOptions& opt = {});

// p_text = clamp(sigmoid(W e + b)) with e [text_dim]; returns [bits].
template <typename T>
diff::Var<T> text_bit_prior(diff::Var<T> e, const Binding<T>& params);
diff::Tensor text_bit_prior(const diff::Tensor& e, const ParamStore& store);

}  // namespace lpq::pyramid
